//! Behavior gates over the assembled pipeline. Every test prints one
//! `ACCEPTANCE <n> <name>: PASS|FAIL` line (visible with `--nocapture`)
//! and fails the build when its gate does not hold.
//!
//! The heavyweight artifacts (a trained model and its expansion over the
//! synthetic dataset) are produced once by the shared fixture and reused.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mmlens::ecg::read_templates;
use mmlens::minmax::{build_minmax, load_expr, ActivationPattern, ExpansionConfig, Lead};
use mmlens::nn::{gradient_check, init_he_uniform, load_model, ReluNetwork};
use mmlens::partition::{partition_dataset, SampleRecord, Split};
use mmlens::viz::{render_hierarchy, FigureLayout, OverlaySpec};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    }};
}

fn conclude(n: usize, name: &str, result: Result<(), String>) {
    let verdict = if result.is_ok() { "PASS" } else { "FAIL" };
    // write to the raw stream so the line survives harness capture
    let line = format!("\nACCEPTANCE {} {}: {}\n", n, name, verdict);
    io::stdout().write_all(line.as_bytes()).unwrap();
    io::stdout().flush().unwrap();
    if let Err(why) = result {
        panic!("acceptance {} ({}) failed: {}", n, name, why);
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmlens")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn mmlens")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = run(args);
    if !out.status.success() {
        return Err(format!(
            "`mmlens {}` failed: {}{}",
            args.join(" "),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "mmlens-acceptance-{}-{}",
        std::process::id(),
        name
    ));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).expect("write config");
    path
}

fn base_config(out: &Path) -> String {
    format!("rng_seed = 0\n\n[paths]\nout_dir = \"{}\"\n", out.display())
}

struct Pipeline {
    out: PathBuf,
    train_stdout: String,
    train_time: Duration,
}

static PIPELINE: OnceLock<Result<Pipeline, String>> = OnceLock::new();

/// One full run (prep through verify) with the default configuration.
fn pipeline() -> Result<&'static Pipeline, String> {
    PIPELINE
        .get_or_init(|| {
            let dir = scratch("main");
            let out = dir.join("out");
            let config = write_config(&dir, &base_config(&out));
            let cfg = config.to_str().expect("utf8 path");
            run_ok(&["prep", "--config", cfg])?;
            let started = Instant::now();
            let train = run_ok(&["train", "--config", cfg])?;
            let train_time = started.elapsed();
            run_ok(&["expand", "--config", cfg])?;
            run_ok(&["partition", "--config", cfg])?;
            run_ok(&["render", "--config", cfg])?;
            run_ok(&["verify", "--config", cfg])?;
            Ok(Pipeline {
                out,
                train_stdout: String::from_utf8_lossy(&train.stdout).into_owned(),
                train_time,
            })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn copy_artifacts(from: &Path, to: &Path, names: &[&str]) -> Result<(), String> {
    fs::create_dir_all(to).map_err(|e| e.to_string())?;
    for name in names {
        fs::copy(from.join(name), to.join(name))
            .map_err(|e| format!("copy {}: {}", name, e))?;
    }
    Ok(())
}

fn train_samples(out: &Path) -> Result<Vec<SampleRecord>, String> {
    let templates = read_templates(&out.join("train_templates.tsv")).map_err(|e| e.to_string())?;
    Ok(templates
        .into_iter()
        .map(|t| SampleRecord {
            id: t.id,
            input: t.samples,
            label: Some(t.label),
            split: Split::Train,
        })
        .collect())
}

fn rel_ok(psi: f64, n: f64, tol: f64) -> bool {
    (psi - n).abs() <= tol * (1.0 + n.abs())
}

fn random_point(rng: &mut ChaCha20Rng, dim: usize, lim: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-lim..=lim)).collect()
}

/// All integer points of [-2, 2]^dim, a small fixed dataset.
fn lattice(dim: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                (-2..=2).map(move |v| {
                    let mut q = p.clone();
                    q.push(v as f64);
                    q
                })
            })
            .collect();
    }
    points
}

#[test]
fn a01_exact_representation_on_small_tails() {
    let result = (|| {
        let started = Instant::now();
        let arches: [&[usize]; 5] = [
            &[2, 3, 1],
            &[3, 4, 1],
            &[2, 4, 3, 1],
            &[4, 4, 4, 1],
            &[3, 2, 2, 1],
        ];
        for seed in 0..20u64 {
            let widths = arches[seed as usize % arches.len()];
            let mut net = ReluNetwork::fc_tail(widths).map_err(|e| e.to_string())?;
            init_he_uniform(&mut net, seed);
            let hidden = widths.len() - 2;
            // Full pattern sets, outermost level (nearest the output) first.
            let patterns: Vec<Vec<ActivationPattern>> = (0..hidden)
                .map(|level| ActivationPattern::enumerate_all(widths[hidden - level]))
                .collect();
            let cfg = ExpansionConfig {
                expansion_depth: hidden,
                lead: if seed % 2 == 0 { Lead::Min } else { Lead::Max },
                ..ExpansionConfig::default()
            };
            let expr = build_minmax(&net, &patterns, &cfg).map_err(|e| e.to_string())?;
            let dim = widths[0];
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
            let mut points: Vec<Vec<f64>> =
                (0..10_000).map(|_| random_point(&mut rng, dim, 3.0)).collect();
            points.extend(lattice(dim));
            for x in &points {
                let n = net.forward(x).map_err(|e| e.to_string())?;
                let (psi, _) = expr.eval(x);
                check!(
                    rel_ok(psi, n, 1e-9),
                    "seed {}: |psi - n| = {:e} at {:?}",
                    seed,
                    (psi - n).abs(),
                    x
                );
            }
        }
        let elapsed = started.elapsed();
        check!(elapsed < Duration::from_secs(60), "took {:?}", elapsed);
        Ok(())
    })();
    conclude(1, "exact full-pattern tails", result);
}

#[test]
fn a02_sign_region_oracle_agrees() {
    let result = (|| {
        let mut boundary = 0usize;
        for trial in 0..5u64 {
            let mut net = ReluNetwork::fc_tail(&[2, 2, 1]).map_err(|e| e.to_string())?;
            init_he_uniform(&mut net, 40 + trial);
            let (w1, b1, w2, b2) = {
                let tail = net.tail_layers();
                (
                    tail[0].weights.clone(),
                    tail[0].bias.clone(),
                    tail[1].weights.row(0).to_vec(),
                    tail[1].bias[0],
                )
            };
            let cfg = ExpansionConfig {
                expansion_depth: 1,
                ..ExpansionConfig::default()
            };
            let expr = build_minmax(&net, &[ActivationPattern::enumerate_all(2)], &cfg)
                .map_err(|e| e.to_string())?;

            // Enumerate every sign region's affine piece: zero the hidden
            // units that are off, then push the terminal row through. The
            // arithmetic mirrors the expression's own leaf composition
            // (skip-zero row accumulation, then bias + dot) so agreement
            // off boundaries is exact, not approximate.
            let pieces: Vec<(Vec<bool>, Vec<f64>, f64)> = (0..4usize)
                .map(|m| {
                    let bits = vec![m & 2 != 0, m & 1 != 0];
                    let v: Vec<f64> = (0..2)
                        .map(|i| if bits[i] { w2[i] } else { 0.0 })
                        .collect();
                    let mut bias = b2;
                    let mut acc = 0.0;
                    for i in 0..2 {
                        acc += v[i] * b1[i];
                    }
                    bias += acc;
                    let mut row = vec![0.0; 2];
                    for (r, &vr) in v.iter().enumerate() {
                        if vr == 0.0 {
                            continue;
                        }
                        for (c, cell) in row.iter_mut().enumerate() {
                            *cell += vr * w1.get(r, c);
                        }
                    }
                    (bits, row, bias)
                })
                .collect();

            let mut rng = ChaCha20Rng::seed_from_u64(90 + trial);
            for _ in 0..2000 {
                let x = random_point(&mut rng, 2, 4.0);
                let mut a = w1.matvec(&x);
                for (ai, bi) in a.iter_mut().zip(&b1) {
                    *ai += bi;
                }
                if a.contains(&0.0) {
                    boundary += 1;
                    continue;
                }
                let bits: Vec<bool> = a.iter().map(|&v| v > 0.0).collect();
                let (_, row, bias) = pieces
                    .iter()
                    .find(|(b, ..)| *b == bits)
                    .expect("all regions enumerated");
                let mut dotv = 0.0;
                for j in 0..2 {
                    dotv += row[j] * x[j];
                }
                let oracle = bias + dotv;

                let (psi, id) = expr.eval(&x);
                check!(
                    psi == oracle,
                    "trial {}: oracle {} vs eval {} at {:?}",
                    trial,
                    oracle,
                    psi,
                    x
                );
                let n = net.forward(&x).map_err(|e| e.to_string())?;
                check!(rel_ok(psi, n, 1e-9), "trial {}: network {} vs eval {}", trial, n, psi);

                // Off boundaries the selected leaf's patterns must encode the
                // sign region on every unit the terminal row can see.
                if a.iter().all(|&v| v.abs() > 1e-12) {
                    let (tau_idx, mu_idx) = id.path[0];
                    let mu = &expr.levels[0].patterns[mu_idx];
                    let tau = &expr.levels[0].patterns[tau_idx];
                    for i in 0..2 {
                        if w2[i] > 0.0 {
                            check!(
                                mu.is_on(i) == bits[i],
                                "trial {}: mu bit {} disagrees with region {:?}",
                                trial,
                                i,
                                bits
                            );
                        }
                        if w2[i] < 0.0 {
                            check!(
                                tau.is_on(i) == bits[i],
                                "trial {}: tau bit {} disagrees with region {:?}",
                                trial,
                                i,
                                bits
                            );
                        }
                    }
                }
            }
        }
        check!(boundary <= 5, "{} points landed exactly on a boundary", boundary);
        Ok(())
    })();
    conclude(2, "sign-region oracle", result);
}

#[test]
fn a03_training_coverage_is_enforced() {
    let result = (|| {
        let p = pipeline()?;
        let report =
            fs::read_to_string(p.out.join("expand_report.txt")).map_err(|e| e.to_string())?;
        let cov = report
            .lines()
            .find(|l| l.starts_with("train coverage:"))
            .ok_or("no coverage line in expand_report.txt")?;
        check!(cov.contains("(1.000000)"), "coverage line: {}", cov);

        // Every training sample whose greedy patterns were all discovered
        // must evaluate exactly; with training embeddings probed, that is
        // every sample.
        let net = load_model(&p.out.join("model.mmlens")).map_err(|e| e.to_string())?;
        let expr = load_expr(&p.out.join("expr.mmlens")).map_err(|e| e.to_string())?;
        let templates =
            read_templates(&p.out.join("train_templates.tsv")).map_err(|e| e.to_string())?;
        check!(!templates.is_empty(), "no training templates");
        let tol = expr.config.equality_tolerance;
        for t in &templates {
            let base = net
                .activation_at(&t.samples, expr.base_activation_index)
                .map_err(|e| e.to_string())?;
            let mut h = base.clone();
            for level in expr.levels.iter().rev() {
                let mut pre = level.weights.matvec(&h);
                for (v, b) in pre.iter_mut().zip(&level.bias) {
                    *v += b;
                }
                let pat = ActivationPattern::from_preactivations(&pre);
                check!(
                    level.patterns.binary_search(&pat).is_ok(),
                    "sample {} realizes an undiscovered pattern",
                    t.id
                );
                h = pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            }
            let n = net.forward(&t.samples).map_err(|e| e.to_string())?;
            let (psi, _) = expr.eval(&base);
            check!(rel_ok(psi, n, tol), "sample {}: psi {} vs net {}", t.id, psi, n);
        }

        // A discovery too poor to cover the training set must fail the
        // expand command after writing its report.
        let dir = scratch("cripple");
        let out = dir.join("out");
        copy_artifacts(
            &p.out,
            &out,
            &["train_templates.tsv", "test_templates.tsv", "model.mmlens"],
        )?;
        let cfg = write_config(
            &dir,
            &format!(
                "{}\n[expand]\ninclude_training_embeddings = false\ngrid_points_per_dim = 2\nbound_percentile_low = 49.0\nbound_percentile_high = 51.0\n",
                base_config(&out)
            ),
        );
        let o = run(&["expand", "--config", cfg.to_str().expect("utf8 path")]);
        check!(
            o.status.code() == Some(1),
            "under-discovered expand exited {:?}",
            o.status.code()
        );
        let crippled =
            fs::read_to_string(out.join("expand_report.txt")).map_err(|e| e.to_string())?;
        let line = crippled
            .lines()
            .find(|l| l.starts_with("train coverage:"))
            .ok_or("no coverage line in the failing run's report")?;
        check!(!line.contains("(1.000000)"), "failing run reports full coverage: {}", line);
        Ok(())
    })();
    conclude(3, "training coverage", result);
}

#[test]
fn a04_partition_laws_hold() {
    let result = (|| {
        let p = pipeline()?;
        let net = load_model(&p.out.join("model.mmlens")).map_err(|e| e.to_string())?;
        let expr = load_expr(&p.out.join("expr.mmlens")).map_err(|e| e.to_string())?;
        let mut samples = train_samples(&p.out)?;
        let test = read_templates(&p.out.join("test_templates.tsv")).map_err(|e| e.to_string())?;
        samples.extend(test.into_iter().map(|t| SampleRecord {
            id: t.id,
            input: t.samples,
            label: Some(t.label),
            split: Split::Test,
        }));
        let partition = partition_dataset(&net, &expr, &samples).map_err(|e| e.to_string())?;
        check!(
            partition.root.conservation_ok(partition.tier_count),
            "membership conservation violated"
        );
        check!(
            partition.root.n_samples() == samples.len(),
            "root holds {} of {} samples",
            partition.root.n_samples(),
            samples.len()
        );

        // Sibling memberships are disjoint and jointly exhaust the parent,
        // at every node of every tier.
        let mut stack = vec![&partition.root];
        while let Some(node) = stack.pop() {
            if node.tier < partition.tier_count {
                let mut seen = BTreeSet::new();
                for child in node.children.values() {
                    for &i in &child.sample_indices {
                        check!(seen.insert(i), "sample index {} appears in two siblings", i);
                    }
                }
                check!(
                    seen.len() == node.n_samples(),
                    "tier {} node covers {} of {} members",
                    node.tier,
                    seen.len(),
                    node.n_samples()
                );
                for &i in &node.sample_indices {
                    check!(seen.contains(&i), "member {} lost below tier {}", i, node.tier);
                }
            }
            stack.extend(node.children.values());
        }

        // Every member agrees with its selected factor within tolerance.
        let tol = expr.config.equality_tolerance;
        for (row, s) in partition.rows.iter().zip(&samples) {
            let base = net
                .activation_at(&s.input, expr.base_activation_index)
                .map_err(|e| e.to_string())?;
            let fval = expr.leaf_affine(&row.factor).eval(&base);
            check!(
                rel_ok(fval, row.model_output, tol),
                "sample {}: factor value {} vs output {}",
                row.sample_id,
                fval,
                row.model_output
            );
        }
        Ok(())
    })();
    conclude(4, "partition laws", result);
}

#[test]
fn a05_pattern_counts_in_typical_scale() {
    let result = (|| {
        let p = pipeline()?;
        let report =
            fs::read_to_string(p.out.join("expand_report.txt")).map_err(|e| e.to_string())?;
        let mut counts = Vec::new();
        for line in report.lines() {
            if let Some(rest) = line.split("patterns=").nth(1) {
                let n: usize = rest
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| format!("unparsable patterns field: {}", line))?;
                counts.push(n);
            }
        }
        check!(counts.len() == 2, "expected two expanded levels, saw {:?}", counts);
        for (level, n) in counts.iter().enumerate() {
            check!(
                (10..=100).contains(n),
                "level {} discovered {} patterns",
                level,
                n
            );
        }

        // Counts outside the typical band warn on stderr without being
        // silently accepted.
        let dir = scratch("scale");
        let out = dir.join("out");
        copy_artifacts(
            &p.out,
            &out,
            &["train_templates.tsv", "test_templates.tsv", "model.mmlens"],
        )?;
        let cfg = write_config(
            &dir,
            &format!(
                "{}\n[expand]\ninclude_training_embeddings = false\ngrid_points_per_dim = 2\nbound_percentile_low = 49.0\nbound_percentile_high = 51.0\n",
                base_config(&out)
            ),
        );
        let o = run(&["expand", "--config", cfg.to_str().expect("utf8 path")]);
        let stderr = String::from_utf8_lossy(&o.stderr);
        check!(
            stderr.contains("typical 10..=100"),
            "no scale warning on stderr: {}",
            stderr
        );
        Ok(())
    })();
    conclude(5, "pattern-count scale", result);
}

#[test]
fn a06_min_leading_root() {
    let result = (|| {
        let p = pipeline()?;
        let expr = load_expr(&p.out.join("expr.mmlens")).map_err(|e| e.to_string())?;
        check!(
            expr.lead == Lead::Min && expr.tier_op(0) == Lead::Min,
            "default expression leads with {:?}",
            expr.lead
        );

        // A depth-1 expansion of the trained model keeps the Min root and
        // splits the dataset across several observed children.
        let dir = scratch("depth1");
        let out = dir.join("out");
        copy_artifacts(
            &p.out,
            &out,
            &["train_templates.tsv", "test_templates.tsv", "model.mmlens"],
        )?;
        let cfg = write_config(&dir, &base_config(&out));
        let c = cfg.to_str().expect("utf8 path");
        run_ok(&["expand", "--config", c, "--depth", "1"])?;
        run_ok(&["partition", "--config", c])?;

        let e1 = load_expr(&out.join("expr.mmlens")).map_err(|e| e.to_string())?;
        check!(
            e1.levels.len() == 1 && e1.tier_op(0) == Lead::Min,
            "depth-1 expression has {} levels, {:?} root",
            e1.levels.len(),
            e1.tier_op(0)
        );
        let net = load_model(&out.join("model.mmlens")).map_err(|e| e.to_string())?;
        let samples = train_samples(&out)?;
        let mut part = partition_dataset(&net, &e1, &samples).map_err(|e| e.to_string())?;
        part.root.prune_below(1);
        check!(
            part.root_child_count() >= 2,
            "root Min has {} observed children",
            part.root_child_count()
        );
        Ok(())
    })();
    conclude(6, "min-leading root", result);
}

#[test]
fn a07_training_sanity() {
    let result = (|| {
        let p = pipeline()?;
        let acc = p
            .train_stdout
            .split("test acc ")
            .nth(1)
            .and_then(|s| s.split(',').next())
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| format!("no test accuracy in: {}", p.train_stdout.trim()))?;
        check!(acc >= 0.90, "test accuracy {}", acc);
        check!(
            p.train_time < Duration::from_secs(300),
            "training took {:?}",
            p.train_time
        );
        let log = fs::read_to_string(p.out.join("train_log.tsv")).map_err(|e| e.to_string())?;
        let epochs = log.lines().count().saturating_sub(1);
        check!((1..=80).contains(&epochs), "{} logged epochs", epochs);
        Ok(())
    })();
    conclude(7, "training sanity", result);
}

#[test]
fn a08_gradient_check() {
    let result = (|| {
        // Trained convolutional model on real templates: conv, max-pool,
        // and affine layers all participate.
        let p = pipeline()?;
        let net = load_model(&p.out.join("model.mmlens")).map_err(|e| e.to_string())?;
        let templates =
            read_templates(&p.out.join("train_templates.tsv")).map_err(|e| e.to_string())?;
        let mut checked = 0usize;
        for (k, t) in templates.iter().take(50).enumerate() {
            let y = (k % 2) as f64;
            let rep = gradient_check(&net, &t.samples, y).map_err(|e| e.to_string())?;
            if rep.skipped.is_some() {
                continue;
            }
            checked += 1;
            check!(
                rep.max_rel_error < 1e-4,
                "template {}: relative error {:e} at parameter {}",
                t.id,
                rep.max_rel_error,
                rep.worst_param
            );
        }
        check!(checked >= 10, "only {} of 50 templates sat off boundaries", checked);

        // Freshly initialized fully connected stack on random points.
        let mut net2 = ReluNetwork::fc_tail(&[4, 3, 2, 1]).map_err(|e| e.to_string())?;
        init_he_uniform(&mut net2, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut checked2 = 0usize;
        for k in 0..20 {
            let x = random_point(&mut rng, 4, 2.0);
            let rep = gradient_check(&net2, &x, (k % 2) as f64).map_err(|e| e.to_string())?;
            if rep.skipped.is_some() {
                continue;
            }
            checked2 += 1;
            check!(
                rep.max_rel_error < 1e-4,
                "fc point {:?}: relative error {:e}",
                x,
                rep.max_rel_error
            );
        }
        check!(checked2 >= 10, "only {} of 20 fc points sat off boundaries", checked2);
        Ok(())
    })();
    conclude(8, "gradient check", result);
}

#[test]
fn a09_figure_conservation_and_determinism() {
    let result = (|| {
        let p = pipeline()?;
        let spec = OverlaySpec::default();
        check!(spec.alpha < 0.01, "default alpha {}", spec.alpha);
        check!(spec.max_draws == 4000, "default draw cap {}", spec.max_draws);
        let svg = fs::read_to_string(p.out.join("figure.svg")).map_err(|e| e.to_string())?;
        check!(
            svg.contains("stroke-opacity=\"0.008\""),
            "figure misses the default stroke opacity"
        );

        // Every sample lands in exactly one panel of every rendered row.
        let net = load_model(&p.out.join("model.mmlens")).map_err(|e| e.to_string())?;
        let expr = load_expr(&p.out.join("expr.mmlens")).map_err(|e| e.to_string())?;
        let samples = train_samples(&p.out)?;
        let mut partition = partition_dataset(&net, &expr, &samples).map_err(|e| e.to_string())?;
        partition.root.prune_below(1);
        let figure = render_hierarchy(&expr, &partition, &samples, &spec, &FigureLayout::default())
            .map_err(|e| e.to_string())?;
        let rows: BTreeSet<usize> = figure.panels.iter().map(|panel| panel.tier).collect();
        check!(rows.len() >= 2, "figure has only {} rows", rows.len());
        for tier in rows {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            for panel in figure.panels.iter().filter(|panel| panel.tier == tier) {
                for id in &panel.sample_ids {
                    check!(seen.insert(id), "sample {} drawn twice in row {}", id, tier);
                }
            }
            check!(
                seen.len() == samples.len(),
                "row {} holds {} of {} samples",
                tier,
                seen.len(),
                samples.len()
            );
        }

        // Re-rendering from the same artifacts and seed reproduces the SVG
        // byte for byte, independent of the output directory.
        let dir = scratch("render");
        let out = dir.join("out");
        copy_artifacts(
            &p.out,
            &out,
            &["train_templates.tsv", "model.mmlens", "expr.mmlens", "partition.tsv"],
        )?;
        let cfg = write_config(&dir, &base_config(&out));
        let c = cfg.to_str().expect("utf8 path");
        run_ok(&["render", "--config", c])?;
        let first = fs::read(out.join("figure.svg")).map_err(|e| e.to_string())?;
        run_ok(&["render", "--config", c])?;
        let second = fs::read(out.join("figure.svg")).map_err(|e| e.to_string())?;
        check!(first == second, "re-render changed the figure bytes");
        let shared = fs::read(p.out.join("figure.svg")).map_err(|e| e.to_string())?;
        check!(first == shared, "figure bytes depend on the output directory");
        Ok(())
    })();
    conclude(9, "figure conservation and determinism", result);
}

#[test]
fn a10_end_to_end_determinism() {
    let result = (|| {
        let p = pipeline()?;
        let dir = scratch("rerun");
        let out = dir.join("out");
        let cfg = write_config(&dir, &base_config(&out));
        let c = cfg.to_str().expect("utf8 path");
        for step in ["prep", "train", "expand", "partition", "render"] {
            run_ok(&[step, "--config", c])?;
        }
        for name in ["model.mmlens", "expr.mmlens", "partition.tsv", "figure.svg"] {
            let a = fs::read(p.out.join(name)).map_err(|e| format!("{}: {}", name, e))?;
            let b = fs::read(out.join(name)).map_err(|e| format!("{}: {}", name, e))?;
            check!(a == b, "{} differs between identical-seed runs", name);
        }
        Ok(())
    })();
    conclude(10, "end-to-end determinism", result);
}
