//! Run configuration: one TOML file drives every subcommand, with a few
//! flag overrides on top. The same seed feeds every stage, so a config file
//! pins the whole pipeline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mmlens::ecg::{PeakConfig, PipelineConfig, SynthConfig};
use mmlens::minmax::{ExpansionConfig, Lead};
use mmlens::nn::TrainConfig;
use mmlens::viz::{FigureLayout, OverlaySpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub rng_seed: u64,
    pub paths: Paths,
    pub prep: PrepSection,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub expand: ExpandSection,
    pub partition: PartitionSection,
    pub render: RenderSection,
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Manifest of real recordings; unused in synthetic mode.
    pub data_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Model file; defaults to `<out_dir>/model.mmlens`.
    pub model: Option<PathBuf>,
    /// Expression file; defaults to `<out_dir>/expr.mmlens`.
    pub expr: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_manifest: None,
            out_dir: PathBuf::from("out"),
            model: None,
            expr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepSection {
    pub synthetic: bool,
    pub polarity_correction: bool,
    pub test_fraction: f64,
    pub mad_multiplier: f64,
    pub refractory_s: f64,
}

impl Default for PrepSection {
    fn default() -> Self {
        let peak = PeakConfig::default();
        PrepSection {
            synthetic: true,
            polarity_correction: false,
            test_fraction: 0.2,
            mad_multiplier: peak.mad_multiplier,
            refractory_s: peak.refractory_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub recordings: usize,
    pub seconds_per_recording: f64,
    pub sample_rate_hz: f64,
    pub normal_fraction: f64,
    pub inverted_fraction: f64,
    pub noise_amplitude: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            recordings: s.recordings,
            seconds_per_recording: s.seconds_per_recording,
            sample_rate_hz: s.sample_rate_hz,
            normal_fraction: s.normal_fraction,
            inverted_fraction: s.inverted_fraction,
            noise_amplitude: s.noise_amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpandSection {
    pub depth: usize,
    pub grid_points_per_dim: usize,
    pub bound_percentile_low: f64,
    pub bound_percentile_high: f64,
    pub include_training_embeddings: bool,
    pub equality_tolerance: f64,
    /// "min" or "max".
    pub lead: String,
}

impl Default for ExpandSection {
    fn default() -> Self {
        let e = ExpansionConfig::default();
        ExpandSection {
            depth: e.expansion_depth,
            grid_points_per_dim: e.grid_points_per_dim,
            bound_percentile_low: e.bound_percentile_low,
            bound_percentile_high: e.bound_percentile_high,
            include_training_embeddings: e.include_training_embeddings,
            equality_tolerance: e.equality_tolerance,
            lead: "min".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    /// Which templates feed the partition: "train", "test", or "all".
    pub split: String,
    /// Nodes with fewer members are dropped from rendering; 1 keeps every
    /// observed node (empty concepts never materialize).
    pub prune_below: usize,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            split: "train".to_string(),
            prune_below: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub max_draws: usize,
    pub alpha: f64,
    pub value_min: f64,
    pub value_max: f64,
    pub max_tier_rows: usize,
}

impl Default for RenderSection {
    fn default() -> Self {
        let o = OverlaySpec::default();
        let l = FigureLayout::default();
        RenderSection {
            max_draws: o.max_draws,
            alpha: o.alpha,
            value_min: o.value_range.0,
            value_max: o.value_range.1,
            max_tier_rows: l.max_tier_rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub random_probes: usize,
    pub min_train_coverage: f64,
    pub min_test_coverage: f64,
    pub min_random_coverage: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            random_probes: 10_000,
            min_train_coverage: 1.0,
            min_test_coverage: 0.0,
            min_random_coverage: 0.0,
        }
    }
}

/// Flag-level overrides applied after the file is parsed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub synthetic: bool,
    pub polarity_correction: bool,
    pub depth: Option<usize>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.rng_seed = seed;
        }
        if o.synthetic {
            self.prep.synthetic = true;
        }
        if o.polarity_correction {
            self.prep.polarity_correction = true;
        }
        if let Some(depth) = o.depth {
            self.expand.depth = depth;
        }
        if let Some(grid) = o.grid {
            self.expand.grid_points_per_dim = grid;
        }
        if let Some(out) = &o.out {
            self.paths.out_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prep.test_fraction) {
            bail!("prep.test_fraction must be in [0, 1)");
        }
        if self.prep.mad_multiplier <= 0.0 || self.prep.refractory_s <= 0.0 {
            bail!("prep thresholds must be positive");
        }
        if !(0.0..=1.0).contains(&self.synth.normal_fraction)
            || !(0.0..=1.0).contains(&self.synth.inverted_fraction)
        {
            bail!("synth fractions must be in [0, 1]");
        }
        if self.synth.sample_rate_hz <= 0.0 || self.synth.seconds_per_recording <= 0.0 {
            bail!("synth rate and duration must be positive");
        }
        if self.train.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        if self.expand.depth == 0 {
            bail!("expand.depth must be at least 1");
        }
        if self.expand.grid_points_per_dim == 0 {
            bail!("expand.grid_points_per_dim must be at least 1");
        }
        if !(0.0..=100.0).contains(&self.expand.bound_percentile_low)
            || !(0.0..=100.0).contains(&self.expand.bound_percentile_high)
            || self.expand.bound_percentile_low >= self.expand.bound_percentile_high
        {
            bail!("expand percentiles must satisfy 0 <= low < high <= 100");
        }
        if self.expand.equality_tolerance < 0.0 {
            bail!("expand.equality_tolerance must be nonnegative");
        }
        self.lead()?;
        if !matches!(self.partition.split.as_str(), "train" | "test" | "all") {
            bail!("partition.split must be train, test, or all");
        }
        if self.render.max_draws == 0 {
            bail!("render.max_draws must be positive");
        }
        if !(self.render.alpha > 0.0 && self.render.alpha < 0.01) {
            bail!("render.alpha must be in (0, 0.01)");
        }
        if self.render.value_min >= self.render.value_max {
            bail!("render value range is empty");
        }
        if !(0.0..=1.0).contains(&self.verify.min_train_coverage)
            || !(0.0..=1.0).contains(&self.verify.min_test_coverage)
            || !(0.0..=1.0).contains(&self.verify.min_random_coverage)
        {
            bail!("verify coverage thresholds must be in [0, 1]");
        }
        Ok(())
    }

    fn lead(&self) -> Result<Lead> {
        match self.expand.lead.as_str() {
            "min" => Ok(Lead::Min),
            "max" => Ok(Lead::Max),
            other => bail!("expand.lead must be \"min\" or \"max\", got \"{}\"", other),
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("model.mmlens"))
    }

    pub fn expr_path(&self) -> PathBuf {
        self.paths
            .expr
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("expr.mmlens"))
    }

    pub fn train_templates_path(&self) -> PathBuf {
        self.paths.out_dir.join("train_templates.tsv")
    }

    pub fn test_templates_path(&self) -> PathBuf {
        self.paths.out_dir.join("test_templates.tsv")
    }

    pub fn prep_report_path(&self) -> PathBuf {
        self.paths.out_dir.join("prep_report.txt")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.paths.out_dir.join("train_log.tsv")
    }

    pub fn expand_report_path(&self) -> PathBuf {
        self.paths.out_dir.join("expand_report.txt")
    }

    pub fn partition_path(&self) -> PathBuf {
        self.paths.out_dir.join("partition.tsv")
    }

    pub fn concept_stats_path(&self) -> PathBuf {
        self.paths.out_dir.join("concept_stats.tsv")
    }

    pub fn figure_path(&self) -> PathBuf {
        self.paths.out_dir.join("figure.svg")
    }

    pub fn overlays_dir(&self) -> PathBuf {
        self.paths.out_dir.join("overlays")
    }

    pub fn verify_report_path(&self) -> PathBuf {
        self.paths.out_dir.join("verify_report.txt")
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            recordings: self.synth.recordings,
            seconds_per_recording: self.synth.seconds_per_recording,
            sample_rate_hz: self.synth.sample_rate_hz,
            normal_fraction: self.synth.normal_fraction,
            inverted_fraction: self.synth.inverted_fraction,
            noise_amplitude: self.synth.noise_amplitude,
            seed: self.rng_seed,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            peak: PeakConfig {
                mad_multiplier: self.prep.mad_multiplier,
                refractory_s: self.prep.refractory_s,
            },
            polarity_correction: self.prep.polarity_correction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            rng_seed: self.rng_seed,
        }
    }

    pub fn expansion_config(&self) -> Result<ExpansionConfig> {
        Ok(ExpansionConfig {
            grid_points_per_dim: self.expand.grid_points_per_dim,
            bound_percentile_low: self.expand.bound_percentile_low,
            bound_percentile_high: self.expand.bound_percentile_high,
            include_training_embeddings: self.expand.include_training_embeddings,
            equality_tolerance: self.expand.equality_tolerance,
            expansion_depth: self.expand.depth,
            lead: self.lead()?,
        })
    }

    pub fn overlay_spec(&self) -> OverlaySpec {
        OverlaySpec {
            max_draws: self.render.max_draws,
            alpha: self.render.alpha,
            value_range: (self.render.value_min, self.render.value_max),
            seed: self.rng_seed,
        }
    }

    pub fn figure_layout(&self) -> FigureLayout {
        FigureLayout {
            max_tier_rows: self.render.max_tier_rows,
            ..FigureLayout::default()
        }
    }
}
