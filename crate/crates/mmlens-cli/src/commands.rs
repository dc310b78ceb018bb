//! The six pipeline subcommands.
//!
//! Each command reads its inputs fresh from disk, so any stage can be rerun
//! in isolation. Failures split into two kinds: input problems (missing or
//! malformed files, bad config) and check failures (coverage below
//! threshold, diverged training, oversized pattern sets). The two map to
//! different exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use mmlens::derive_seed;
use mmlens::ecg::{
    filter_labels, load_recordings, process_dataset, read_templates, split_train_test,
    synth_recordings, to_training_pairs, write_templates, Template,
};
use mmlens::minmax::{
    build_minmax, discover_patterns, pattern_scale_check, save_expr, verify_equivalence,
    verify_equivalence_embeddings, ActivationPattern, DiscoveryReport, EquivalenceReport,
    GridSpec, MinMaxExpr, PatternScale,
};
use mmlens::nn::{accuracy, load_model, save_model, train, ReluNetwork};
use mmlens::partition::{
    concept_stats, partition_dataset, write_concept_stats_tsv, write_partition_tsv, ConceptNode,
    Partition, SampleRecord, Split,
};
use mmlens::viz::{render_hierarchy, render_overlay};

use crate::config::RunConfig;

/// Input problems exit 2; check failures exit 1.
#[derive(Debug)]
pub enum CmdError {
    Input(anyhow::Error),
    Check(anyhow::Error),
}

pub type CmdResult = Result<(), CmdError>;

pub fn input_err(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Input(e.into())
}

fn check_err(msg: String) -> CmdError {
    CmdError::Check(anyhow!(msg))
}

trait AsInput<T> {
    fn input(self) -> Result<T, CmdError>;
}

impl<T, E: Into<anyhow::Error>> AsInput<T> for Result<T, E> {
    fn input(self) -> Result<T, CmdError> {
        self.map_err(input_err)
    }
}

fn require_file(path: &Path, hint: &str) -> Result<(), CmdError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CmdError::Input(anyhow!(
            "{} not found; {}",
            path.display(),
            hint
        )))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CmdError> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .input()
}

pub fn cmd_prep(cfg: &RunConfig) -> CmdResult {
    let recordings = if cfg.prep.synthetic {
        synth_recordings(&cfg.synth_config())
    } else {
        let manifest = cfg.paths.data_manifest.as_ref().ok_or_else(|| {
            CmdError::Input(anyhow!(
                "paths.data_manifest is not set and synthetic mode is off"
            ))
        })?;
        require_file(manifest, "point paths.data_manifest at an id,label manifest")?;
        load_recordings(manifest).input()?
    };
    if recordings.is_empty() {
        return Err(CmdError::Input(anyhow!("no recordings to prepare")));
    }
    let mut histogram: BTreeMap<&'static str, usize> = BTreeMap::new();
    for r in &recordings {
        *histogram.entry(r.label.code()).or_insert(0) += 1;
    }
    let loaded = recordings.len();
    let (kept, removed) = filter_labels(recordings);
    if kept.is_empty() {
        eprintln!("warning: every recording was removed by the label filter");
    }
    let (templates, stats) = process_dataset(&kept, &cfg.pipeline_config());
    let (train_set, test_set) = split_train_test(
        templates,
        cfg.prep.test_fraction,
        derive_seed(cfg.rng_seed, "split"),
    );
    write_templates(&cfg.train_templates_path(), &train_set).input()?;
    write_templates(&cfg.test_templates_path(), &test_set).input()?;

    let peaks: usize = stats.iter().map(|s| s.peaks).sum();
    let extracted: usize = stats.iter().map(|s| s.templates).sum();
    let flipped = stats.iter().filter(|s| s.flipped).count();
    let mut report = String::new();
    let _ = writeln!(report, "recordings loaded: {}", loaded);
    let hist_line = histogram
        .iter()
        .map(|(code, n)| format!("{}={}", code, n))
        .collect::<Vec<_>>()
        .join(" ");
    let _ = writeln!(report, "label histogram: {}", hist_line);
    let _ = writeln!(report, "removed by label filter: {}", removed);
    let _ = writeln!(
        report,
        "polarity correction: {}",
        if cfg.prep.polarity_correction { "on" } else { "off" }
    );
    let _ = writeln!(report, "recordings flipped: {}", flipped);
    let _ = writeln!(report, "r peaks detected: {}", peaks);
    let _ = writeln!(report, "templates extracted: {}", extracted);
    let _ = writeln!(report, "windows dropped at edges: {}", peaks - extracted);
    let _ = writeln!(report, "train templates: {}", train_set.len());
    let _ = writeln!(report, "test templates: {}", test_set.len());
    write_text(&cfg.prep_report_path(), &report)?;

    println!(
        "prep: {} recordings -> {} templates ({} train / {} test), report {}",
        loaded,
        extracted,
        train_set.len(),
        test_set.len(),
        cfg.prep_report_path().display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let train_path = cfg.train_templates_path();
    require_file(&train_path, "run `mmlens prep` first")?;
    let train_templates = read_templates(&train_path).input()?;
    let (inputs, targets) = to_training_pairs(&train_templates);
    if inputs.is_empty() {
        return Err(CmdError::Input(anyhow!(
            "{} holds no trainable templates",
            train_path.display()
        )));
    }
    let arch = ReluNetwork::ecg_default(inputs[0].len(), 0).input()?;
    let tc = cfg.train_config();
    let (net, log) = match train(&arch, &inputs, &targets, &tc) {
        Ok(v) => v,
        Err(e @ mmlens::Error::NonFiniteLoss { .. }) => {
            return Err(check_err(format!("{}; model not written", e)))
        }
        Err(e) => return Err(CmdError::Input(e.into())),
    };

    let mut log_text = String::from("epoch\tmean_loss\ttrain_accuracy\n");
    for e in &log.epochs {
        let _ = writeln!(log_text, "{}\t{}\t{}", e.epoch, e.mean_loss, e.train_accuracy);
    }
    write_text(&cfg.train_log_path(), &log_text)?;

    if let Some(bad) = log.epochs.iter().find(|e| !e.mean_loss.is_finite()) {
        return Err(check_err(format!(
            "training diverged at epoch {} (loss {}); model not written",
            bad.epoch, bad.mean_loss
        )));
    }
    save_model(&net, &cfg.model_path()).input()?;

    let train_acc = log.epochs.last().map(|e| e.train_accuracy);
    let test_path = cfg.test_templates_path();
    let test_acc = if test_path.is_file() {
        let test_templates = read_templates(&test_path).input()?;
        let (tx, ty) = to_training_pairs(&test_templates);
        if tx.is_empty() {
            None
        } else {
            Some(accuracy(&net, &tx, &ty).input()?)
        }
    } else {
        None
    };
    println!(
        "train: {} epochs on {} templates, train acc {}, test acc {}, model {}",
        tc.epochs,
        inputs.len(),
        train_acc.map_or("n/a".to_string(), |a| format!("{:.4}", a)),
        test_acc.map_or("n/a".to_string(), |a| format!("{:.4}", a)),
        cfg.model_path().display()
    );
    Ok(())
}

fn load_net(cfg: &RunConfig) -> Result<ReluNetwork, CmdError> {
    let path = cfg.model_path();
    require_file(&path, "run `mmlens train` first")?;
    load_model(&path).input()
}

fn load_expr(cfg: &RunConfig) -> Result<MinMaxExpr, CmdError> {
    let path = cfg.expr_path();
    require_file(&path, "run `mmlens expand` first")?;
    mmlens::minmax::load_expr(&path).input()
}

fn train_embeddings(
    net: &ReluNetwork,
    templates: &[Template],
) -> Result<Vec<Vec<f64>>, CmdError> {
    templates
        .par_iter()
        .map(|t| net.embed(&t.samples))
        .collect::<mmlens::Result<Vec<_>>>()
        .input()
}

pub fn cmd_expand(cfg: &RunConfig) -> CmdResult {
    let net = load_net(cfg)?;
    let train_path = cfg.train_templates_path();
    require_file(&train_path, "run `mmlens prep` first")?;
    let train_templates = read_templates(&train_path).input()?;
    if train_templates.is_empty() {
        return Err(CmdError::Input(anyhow!(
            "{} is empty",
            train_path.display()
        )));
    }
    let ecfg = cfg.expansion_config().input()?;
    let hidden = net.tail_hidden_count();
    if ecfg.expansion_depth > hidden {
        return Err(CmdError::Input(anyhow!(
            "expand.depth {} exceeds the {} expandable layers of this model",
            ecfg.expansion_depth,
            hidden
        )));
    }
    let embeddings = train_embeddings(&net, &train_templates)?;

    let mut pattern_sets: Vec<Vec<ActivationPattern>> = Vec::new();
    let mut reports: Vec<DiscoveryReport> = Vec::new();
    for level in 0..ecfg.expansion_depth {
        let layer_index = net.embedding_index + (hidden - 1 - level);
        let (patterns, report) =
            discover_patterns(&net, layer_index, &embeddings, &ecfg).input()?;
        pattern_sets.push(patterns);
        reports.push(report);
    }
    let counts: Vec<usize> = pattern_sets.iter().map(Vec::len).collect();
    match pattern_scale_check(&counts) {
        PatternScale::Typical => {}
        PatternScale::Unusual(msg) => eprintln!("warning: {}", msg),
        PatternScale::Excessive(msg) => return Err(check_err(msg)),
    }

    let expr = build_minmax(&net, &pattern_sets, &ecfg).input()?;
    save_expr(&expr, &cfg.expr_path()).input()?;

    let ids: Vec<String> = train_templates.iter().map(|t| t.id.clone()).collect();
    let inputs: Vec<Vec<f64>> = train_templates.iter().map(|t| t.samples.clone()).collect();
    let report =
        verify_equivalence(&net, &expr, &ids, &inputs, ecfg.equality_tolerance).input()?;

    let mut text = String::new();
    let _ = writeln!(text, "levels: {}", ecfg.expansion_depth);
    for (level, r) in reports.iter().enumerate() {
        let _ = writeln!(
            text,
            "level {}: layer_index={} patterns={} grid_probes={} training_probes={}",
            level, r.layer_index, counts[level], r.grid_probe_count, r.training_probe_count
        );
        if !r.degenerate_dims.is_empty() {
            let dims = r
                .degenerate_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(text, "level {} degenerate dims: {}", level, dims);
        }
        for (d, (lo, hi)) in r.bounds.iter().enumerate() {
            let _ = writeln!(text, "level {} dim {} bounds: {} {}", level, d, lo, hi);
        }
    }
    let _ = writeln!(text, "leaf count: {}", expr.leaf_count());
    let _ = writeln!(
        text,
        "train coverage: {}/{} ({:.6})",
        report.n_exact,
        report.n_checked,
        report.coverage()
    );
    let _ = writeln!(text, "max abs error: {}", report.max_abs_error);
    if !report.uncovered.is_empty() {
        let shown: Vec<&str> = report.uncovered.iter().take(20).map(String::as_str).collect();
        let more = report.uncovered.len().saturating_sub(shown.len());
        let _ = writeln!(
            text,
            "uncovered: {}{}",
            shown.join(" "),
            if more > 0 {
                format!(" (+{} more)", more)
            } else {
                String::new()
            }
        );
    }
    write_text(&cfg.expand_report_path(), &text)?;

    println!(
        "expand: patterns per level {:?}, {} leaves, train coverage {}/{}, expr {}",
        counts,
        expr.leaf_count(),
        report.n_exact,
        report.n_checked,
        cfg.expr_path().display()
    );
    if !report.uncovered.is_empty() {
        return Err(check_err(format!(
            "{} of {} training samples are not reproduced exactly; see {}",
            report.uncovered.len(),
            report.n_checked,
            cfg.expand_report_path().display()
        )));
    }
    Ok(())
}

/// Loads the templates selected by `partition.split`, tagged accordingly.
fn load_split(cfg: &RunConfig) -> Result<(Vec<Template>, Vec<SampleRecord>), CmdError> {
    let mut templates: Vec<(Template, Split)> = Vec::new();
    if matches!(cfg.partition.split.as_str(), "train" | "all") {
        let path = cfg.train_templates_path();
        require_file(&path, "run `mmlens prep` first")?;
        templates.extend(read_templates(&path).input()?.into_iter().map(|t| (t, Split::Train)));
    }
    if matches!(cfg.partition.split.as_str(), "test" | "all") {
        let path = cfg.test_templates_path();
        require_file(&path, "run `mmlens prep` first")?;
        templates.extend(read_templates(&path).input()?.into_iter().map(|t| (t, Split::Test)));
    }
    if templates.is_empty() {
        return Err(CmdError::Input(anyhow!(
            "no templates available for partition.split = {}",
            cfg.partition.split
        )));
    }
    let samples: Vec<SampleRecord> = templates
        .iter()
        .map(|(t, split)| SampleRecord {
            id: t.id.clone(),
            input: t.samples.clone(),
            label: Some(t.label),
            split: *split,
        })
        .collect();
    Ok((templates.into_iter().map(|(t, _)| t).collect(), samples))
}

fn count_nodes(node: &ConceptNode) -> usize {
    1 + node.children.values().map(count_nodes).sum::<usize>()
}

fn build_partition(
    cfg: &RunConfig,
    net: &ReluNetwork,
    expr: &MinMaxExpr,
    samples: &[SampleRecord],
) -> Result<Partition, CmdError> {
    let partition = partition_dataset(net, expr, samples).input()?;
    if !partition.root.conservation_ok(partition.tier_count) {
        return Err(check_err(
            "partition conservation violated: sibling memberships do not tile the parent".into(),
        ));
    }
    // Membership agreement (Def. 2): the selected factor reproduces the
    // model output on every member.
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.input.clone()).collect();
    let tol = cfg.expand.equality_tolerance;
    let agreement = verify_equivalence(net, expr, &ids, &inputs, tol).input()?;
    if !agreement.uncovered.is_empty() {
        return Err(check_err(format!(
            "{} of {} samples disagree with their assigned factor beyond tolerance {}",
            agreement.uncovered.len(),
            agreement.n_checked,
            tol
        )));
    }
    Ok(partition)
}

pub fn cmd_partition(cfg: &RunConfig) -> CmdResult {
    let net = load_net(cfg)?;
    let expr = load_expr(cfg)?;
    let (_, samples) = load_split(cfg)?;
    let partition = build_partition(cfg, &net, &expr, &samples)?;

    write_partition_tsv(&cfg.partition_path(), &expr, &partition).input()?;
    let stats = concept_stats(&expr, &partition);
    write_concept_stats_tsv(&cfg.concept_stats_path(), &stats).input()?;

    let full = count_nodes(&partition.root);
    let mut pruned_root = partition.root.clone();
    pruned_root.prune_below(cfg.partition.prune_below.max(1));
    let pruned = full - count_nodes(&pruned_root);
    println!(
        "partition: {} samples over {} tiers, {} root children, {} concepts, {} pruned below {} members",
        partition.rows.len(),
        partition.tier_count,
        partition.root_child_count(),
        full,
        pruned,
        cfg.partition.prune_below.max(1)
    );
    Ok(())
}

pub fn cmd_render(cfg: &RunConfig) -> CmdResult {
    require_file(&cfg.partition_path(), "run `mmlens partition` first")?;
    let net = load_net(cfg)?;
    let expr = load_expr(cfg)?;
    let (templates, samples) = load_split(cfg)?;
    let mut partition = build_partition(cfg, &net, &expr, &samples)?;
    partition.root.prune_below(cfg.partition.prune_below.max(1));

    let spec = cfg.overlay_spec();
    let layout = cfg.figure_layout();
    let figure = render_hierarchy(&expr, &partition, &samples, &spec, &layout).input()?;
    write_text(&cfg.figure_path(), &figure.svg)?;

    let overlays_dir = cfg.overlays_dir();
    std::fs::create_dir_all(&overlays_dir)
        .with_context(|| format!("cannot create {}", overlays_dir.display()))
        .input()?;
    let by_id: BTreeMap<&str, &Template> =
        templates.iter().map(|t| (t.id.as_str(), t)).collect();
    for panel in &figure.panels {
        let members: Vec<Template> = panel
            .sample_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|t| (*t).clone()))
            .collect();
        if members.is_empty() {
            continue;
        }
        let svg = render_overlay(&members, &spec).input()?;
        let name = format!("{}.svg", panel.path.replace('/', "-"));
        write_text(&overlays_dir.join(name), &svg)?;
    }
    println!(
        "render: {} panels -> {} and {} overlays in {}",
        figure.panels.len(),
        cfg.figure_path().display(),
        figure.panels.len(),
        overlays_dir.display()
    );
    Ok(())
}

fn report_block(name: &str, r: &EquivalenceReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {}/{} exact ({:.6}), max abs error {}",
        name,
        r.n_exact,
        r.n_checked,
        r.coverage(),
        r.max_abs_error
    );
    if !r.uncovered.is_empty() {
        let shown: Vec<&str> = r.uncovered.iter().take(20).map(String::as_str).collect();
        let more = r.uncovered.len().saturating_sub(shown.len());
        let _ = writeln!(
            s,
            "{} uncovered: {}{}",
            name,
            shown.join(" "),
            if more > 0 {
                format!(" (+{} more)", more)
            } else {
                String::new()
            }
        );
    }
    s
}

pub fn cmd_verify(cfg: &RunConfig) -> CmdResult {
    let net = load_net(cfg)?;
    let expr = load_expr(cfg)?;
    let tol = cfg.expand.equality_tolerance;

    let train_path = cfg.train_templates_path();
    require_file(&train_path, "run `mmlens prep` first")?;
    let train_templates = read_templates(&train_path).input()?;
    if train_templates.is_empty() {
        return Err(CmdError::Input(anyhow!(
            "{} is empty",
            train_path.display()
        )));
    }
    let test_path = cfg.test_templates_path();
    require_file(&test_path, "run `mmlens prep` first")?;
    let test_templates = read_templates(&test_path).input()?;

    let check = |templates: &[Template]| -> Result<EquivalenceReport, CmdError> {
        let ids: Vec<String> = templates.iter().map(|t| t.id.clone()).collect();
        let inputs: Vec<Vec<f64>> = templates.iter().map(|t| t.samples.clone()).collect();
        verify_equivalence(&net, &expr, &ids, &inputs, tol).input()
    };
    let train_report = check(&train_templates)?;
    let test_report = if test_templates.is_empty() {
        EquivalenceReport {
            n_checked: 0,
            n_exact: 0,
            max_abs_error: 0.0,
            uncovered: Vec::new(),
        }
    } else {
        check(&test_templates)?
    };

    // Random probes are drawn inside the same embedding-space box the
    // pattern grid used, rebuilt from the training embeddings.
    let ecfg = cfg.expansion_config().input()?;
    let embeddings = train_embeddings(&net, &train_templates)?;
    let spec = GridSpec::from_embeddings(&embeddings, &ecfg).input()?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.rng_seed, "verify-probes"));
    let probes: Vec<Vec<f64>> = (0..cfg.verify.random_probes)
        .map(|_| {
            spec.bounds
                .iter()
                .map(|&(lo, hi)| if lo < hi { rng.gen_range(lo..=hi) } else { lo })
                .collect()
        })
        .collect();
    let probe_ids: Vec<String> = (0..probes.len()).map(|i| format!("probe_{}", i)).collect();
    let random_report =
        verify_equivalence_embeddings(&net, &expr, &probe_ids, &probes, tol).input()?;

    let mut text = String::new();
    text.push_str(&report_block("train", &train_report));
    text.push_str(&report_block("test", &test_report));
    text.push_str(&report_block("random", &random_report));
    write_text(&cfg.verify_report_path(), &text)?;
    print!("{}", text);

    let mut failures = Vec::new();
    if train_report.coverage() < cfg.verify.min_train_coverage {
        failures.push(format!(
            "train coverage {:.6} < {}",
            train_report.coverage(),
            cfg.verify.min_train_coverage
        ));
    }
    if test_report.coverage() < cfg.verify.min_test_coverage {
        failures.push(format!(
            "test coverage {:.6} < {}",
            test_report.coverage(),
            cfg.verify.min_test_coverage
        ));
    }
    if random_report.coverage() < cfg.verify.min_random_coverage {
        failures.push(format!(
            "random coverage {:.6} < {}",
            random_report.coverage(),
            cfg.verify.min_random_coverage
        ));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(check_err(failures.join("; ")))
    }
}
