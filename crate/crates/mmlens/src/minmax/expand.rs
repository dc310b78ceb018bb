//! Expression construction: sign splitting, pattern discovery, assembly.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{linspace, percentile, relu, Mat};
use crate::nn::{Layer, ReluNetwork, Tensor1D};

use super::{
    ActivationPattern, ExpansionConfig, ExpansionLevel, Lead, MinMaxExpr, MinMaxNode,
};

/// Hard limit on a discovered pattern set; the node tree is quartic in the
/// per-level count, so anything near this is already unusable.
pub const MAX_PATTERNS_PER_LEVEL: usize = 1000;

/// Typical per-level pattern counts for a trained tail.
pub const TYPICAL_PATTERN_RANGE: (usize, usize) = (10, 100);

const MAX_GRID_PROBES: usize = 10_000_000;

/// Elementwise positive and negative parts: `row[i] = pos[i] - neg[i]`,
/// both parts nonnegative.
pub fn split_signs(row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pos = row.iter().map(|&w| w.max(0.0)).collect();
    let neg = row.iter().map(|&w| (-w).max(0.0)).collect();
    (pos, neg)
}

/// Expands a single ReLU layer into an explicit two-tier fragment.
///
/// The scalar being rewritten is `bias + row . relu(inner)` where `inner`
/// is the affine map `inner_weights x + inner_bias`. Leaves are affine over
/// `x`. Patterns are sorted and deduplicated; the fragment is exact at `x`
/// whenever the greedy pattern of `inner(x)` is present.
pub fn expand_layer(
    bias: f64,
    row: &[f64],
    inner_weights: &Mat,
    inner_bias: &[f64],
    patterns: &[ActivationPattern],
    lead: Lead,
) -> Result<MinMaxNode> {
    let mut sorted = patterns.to_vec();
    sorted.sort();
    sorted.dedup();
    let expr = MinMaxExpr {
        lead,
        base_activation_index: 0,
        base_width: inner_weights.cols(),
        terminal_bias: bias,
        terminal_weights: row.to_vec(),
        levels: vec![ExpansionLevel {
            layer_index: 0,
            patterns: sorted,
            weights: inner_weights.clone(),
            bias: inner_bias.to_vec(),
        }],
        config: ExpansionConfig {
            lead,
            expansion_depth: 1,
            ..ExpansionConfig::default()
        },
    };
    expr.validate()?;
    expr.to_tree(1 << 22)
}

/// Axis-aligned probe grid over embedding space.
///
/// Bounds clip each dimension to a percentile range of the observed
/// embeddings so stray outliers do not stretch the grid; a dimension whose
/// range collapses to a point is widened symmetrically and reported.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub points_per_dim: usize,
    pub degenerate_dims: Vec<usize>,
}

impl GridSpec {
    pub fn from_embeddings(embeddings: &[Tensor1D], cfg: &ExpansionConfig) -> Result<GridSpec> {
        if embeddings.is_empty() {
            return Err(Error::EmptyInput("embeddings"));
        }
        if cfg.grid_points_per_dim < 2 {
            return Err(Error::InvalidConfig(
                "grid_points_per_dim must be at least 2".into(),
            ));
        }
        let dims = embeddings[0].len();
        let mut bounds = Vec::with_capacity(dims);
        let mut degenerate_dims = Vec::new();
        for d in 0..dims {
            let column: Vec<f64> = embeddings
                .iter()
                .map(|e| {
                    debug_assert_eq!(e.len(), dims, "ragged embeddings");
                    e[d]
                })
                .collect();
            if !column.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteData {
                    context: "embedding",
                });
            }
            let lo = percentile(&column, cfg.bound_percentile_low);
            let hi = percentile(&column, cfg.bound_percentile_high);
            if lo < hi {
                bounds.push((lo, hi));
            } else {
                let eps = 1e-6 * lo.abs().max(1.0);
                bounds.push((lo - eps, lo + eps));
                degenerate_dims.push(d);
            }
        }
        let spec = GridSpec {
            bounds,
            points_per_dim: cfg.grid_points_per_dim,
            degenerate_dims,
        };
        if spec.probe_count() > MAX_GRID_PROBES {
            return Err(Error::InvalidConfig(format!(
                "grid of {} probes exceeds limit {}",
                spec.probe_count(),
                MAX_GRID_PROBES
            )));
        }
        Ok(spec)
    }

    pub fn probe_count(&self) -> usize {
        self.points_per_dim
            .checked_pow(self.bounds.len() as u32)
            .unwrap_or(usize::MAX)
    }
}

/// Full cartesian grid, last dimension varying fastest.
pub fn grid_probes(spec: &GridSpec) -> Vec<Tensor1D> {
    let axes: Vec<Vec<f64>> = spec
        .bounds
        .iter()
        .map(|&(lo, hi)| linspace(lo, hi, spec.points_per_dim))
        .collect();
    let mut probes = Vec::with_capacity(spec.probe_count());
    let mut idx = vec![0usize; axes.len()];
    loop {
        probes.push(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect());
        let mut pos = axes.len();
        loop {
            if pos == 0 {
                return probes;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryReport {
    pub layer_index: usize,
    pub grid_probe_count: usize,
    pub training_probe_count: usize,
    pub pattern_count: usize,
    pub degenerate_dims: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
}

/// Collects the activation patterns layer `layer_index` exhibits over a
/// probe grid in embedding space, plus the training embeddings themselves
/// when configured. Returns the sorted, deduplicated set.
pub fn discover_patterns(
    net: &ReluNetwork,
    layer_index: usize,
    training_embeddings: &[Tensor1D],
    cfg: &ExpansionConfig,
) -> Result<(Vec<ActivationPattern>, DiscoveryReport)> {
    check_expandable(net, layer_index)?;
    let spec = GridSpec::from_embeddings(training_embeddings, cfg)?;
    let grid = grid_probes(&spec);
    let grid_probe_count = grid.len();
    let training_probe_count = if cfg.include_training_embeddings {
        training_embeddings.len()
    } else {
        0
    };
    let pattern_of = |z: &Tensor1D| pattern_at(net, layer_index, z);
    let mut set: BTreeSet<ActivationPattern> = grid
        .par_iter()
        .map(pattern_of)
        .collect::<Result<BTreeSet<_>>>()?;
    if cfg.include_training_embeddings {
        let extra = training_embeddings
            .par_iter()
            .map(pattern_of)
            .collect::<Result<BTreeSet<_>>>()?;
        set.extend(extra);
    }
    let patterns: Vec<ActivationPattern> = set.into_iter().collect();
    let report = DiscoveryReport {
        layer_index,
        grid_probe_count,
        training_probe_count,
        pattern_count: patterns.len(),
        degenerate_dims: spec.degenerate_dims.clone(),
        bounds: spec.bounds.clone(),
    };
    Ok((patterns, report))
}

/// The expanded layer must be a hidden (ReLU) affine layer in the tail.
fn check_expandable(net: &ReluNetwork, layer_index: usize) -> Result<()> {
    if layer_index < net.embedding_index || layer_index + 1 >= net.layers.len() {
        return Err(Error::Expansion(format!(
            "layer {} is not a tail hidden layer",
            layer_index
        )));
    }
    match &net.layers[layer_index] {
        Layer::Affine(aff) if aff.relu => Ok(()),
        _ => Err(Error::Expansion(format!(
            "layer {} is not an affine ReLU layer",
            layer_index
        ))),
    }
}

/// Greedy pattern of layer `layer_index`'s pre-activation for embedding `z`.
fn pattern_at(net: &ReluNetwork, layer_index: usize, z: &Tensor1D) -> Result<ActivationPattern> {
    let mut h = z.clone();
    for layer in &net.layers[net.embedding_index..layer_index] {
        let Layer::Affine(aff) = layer else {
            return Err(Error::Expansion("tail layer is not affine".into()));
        };
        h = relu(&aff.preactivation(&h));
    }
    let Layer::Affine(aff) = &net.layers[layer_index] else {
        return Err(Error::Expansion("tail layer is not affine".into()));
    };
    Ok(ActivationPattern::from_preactivations(&aff.preactivation(&h)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatternScale {
    Typical,
    /// Outside the typical range but workable; human-readable detail.
    Unusual(String),
    /// Beyond [`MAX_PATTERNS_PER_LEVEL`]; construction should be aborted.
    Excessive(String),
}

/// Classifies per-level pattern counts.
pub fn pattern_scale_check(counts: &[usize]) -> PatternScale {
    let (lo, hi) = TYPICAL_PATTERN_RANGE;
    for (i, &c) in counts.iter().enumerate() {
        if c > MAX_PATTERNS_PER_LEVEL {
            return PatternScale::Excessive(format!(
                "level {} has {} patterns (limit {})",
                i, c, MAX_PATTERNS_PER_LEVEL
            ));
        }
    }
    let unusual: Vec<String> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < lo || c > hi)
        .map(|(i, &c)| format!("level {} has {} patterns (typical {}..={})", i, c, lo, hi))
        .collect();
    if unusual.is_empty() {
        PatternScale::Typical
    } else {
        PatternScale::Unusual(unusual.join("; "))
    }
}

/// Assembles the Min/Max expression for the tail of `net`.
///
/// `patterns_per_level[0]` belongs to the outermost level, which expands the
/// last hidden layer; level `i` expands the `i`-th hidden layer counting
/// back from the terminal. With `cfg.expansion_depth` smaller than the tail
/// hidden count the leaves read from the deepest unexpanded activation
/// instead of the embedding.
pub fn build_minmax(
    net: &ReluNetwork,
    patterns_per_level: &[Vec<ActivationPattern>],
    cfg: &ExpansionConfig,
) -> Result<MinMaxExpr> {
    net.validate()?;
    let hidden = net.tail_hidden_count();
    let depth = cfg.expansion_depth;
    if depth == 0 || depth > hidden {
        return Err(Error::InvalidConfig(format!(
            "expansion depth {} not in 1..={}",
            depth, hidden
        )));
    }
    if patterns_per_level.len() != depth {
        return Err(Error::InvalidConfig(format!(
            "{} pattern sets for depth {}",
            patterns_per_level.len(),
            depth
        )));
    }
    let tail = net.tail_layers();
    let terminal = tail[tail.len() - 1];
    let base_activation_index = net.embedding_index + (hidden - depth);
    let base_width = net.activation_len(base_activation_index)?;
    let mut levels = Vec::with_capacity(depth);
    for (i, raw) in patterns_per_level.iter().enumerate() {
        let tail_idx = hidden - 1 - i;
        let aff = tail[tail_idx];
        if raw.is_empty() {
            return Err(Error::EmptyPatternSet { level: i });
        }
        let mut patterns = raw.clone();
        patterns.sort();
        patterns.dedup();
        levels.push(ExpansionLevel {
            layer_index: net.embedding_index + tail_idx,
            patterns,
            weights: aff.weights.clone(),
            bias: aff.bias.clone(),
        });
    }
    let expr = MinMaxExpr {
        lead: cfg.lead,
        base_activation_index,
        base_width,
        terminal_bias: terminal.bias[0],
        terminal_weights: terminal.weights.row(0).to_vec(),
        levels,
        config: cfg.clone(),
    };
    expr.validate()?;
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_he_uniform, AffineLayer};

    #[test]
    fn split_signs_reconstructs() {
        let row = [1.5, -2.0, 0.0, -0.25, 3.0];
        let (pos, neg) = split_signs(&row);
        for i in 0..row.len() {
            assert!(pos[i] >= 0.0 && neg[i] >= 0.0);
            assert_eq!(pos[i] - neg[i], row[i]);
            assert!(pos[i] == 0.0 || neg[i] == 0.0);
        }
    }

    #[test]
    fn single_unit_expansion_is_relu() {
        // bias + 1 * relu(z) with both one-unit patterns: Min over tau of
        // Max over mu of {0, z} pointwise equals max(0, z).
        let inner = Mat::from_rows(&[vec![1.0]]);
        let node = expand_layer(
            0.0,
            &[1.0],
            &inner,
            &[0.0],
            &ActivationPattern::enumerate_all(1),
            Lead::Min,
        )
        .unwrap();
        assert!(node.alternation_ok());
        assert_eq!(node.leaf_count(), 4);
        for &z in &[-3.0, -0.5, 0.0, 0.25, 2.0] {
            assert_eq!(node.eval(&[z]).0, z.max(0.0));
        }
    }

    #[test]
    fn grid_covers_bounds_inclusive() {
        let spec = GridSpec {
            bounds: vec![(0.0, 1.0), (-1.0, 1.0)],
            points_per_dim: 3,
            degenerate_dims: vec![],
        };
        let probes = grid_probes(&spec);
        assert_eq!(probes.len(), 9);
        assert_eq!(probes[0], vec![0.0, -1.0]);
        assert_eq!(probes[1], vec![0.0, 0.0]);
        assert_eq!(probes[8], vec![1.0, 1.0]);
    }

    fn split_net() -> ReluNetwork {
        // One hidden layer splitting the sign of a scalar input.
        let mut net = ReluNetwork::fc_tail(&[1, 2, 1]).unwrap();
        let Layer::Affine(aff) = &mut net.layers[0] else { unreachable!() };
        *aff = AffineLayer::from_rows(&[vec![1.0], vec![-1.0]], vec![0.0, 0.0], true);
        let Layer::Affine(aff) = &mut net.layers[1] else { unreachable!() };
        *aff = AffineLayer::from_rows(&[vec![1.0, -1.0]], vec![0.0], false);
        net
    }

    #[test]
    fn discovery_finds_sign_patterns() {
        let net = split_net();
        let embeddings: Vec<Tensor1D> = (0..100).map(|i| vec![-1.0 + 0.02 * i as f64]).collect();
        let cfg = ExpansionConfig {
            expansion_depth: 1,
            ..ExpansionConfig::default()
        };
        let (patterns, report) = discover_patterns(&net, 0, &embeddings, &cfg).unwrap();
        // The grid straddles zero, so both sign patterns appear.
        let strings: Vec<String> = patterns.iter().map(|p| p.bitstring()).collect();
        assert!(strings.contains(&"10".to_string()));
        assert!(strings.contains(&"01".to_string()));
        assert_eq!(report.grid_probe_count, 7);
        assert_eq!(report.training_probe_count, 100);
        assert_eq!(report.pattern_count, patterns.len());
        assert!(report.degenerate_dims.is_empty());
        let mut sorted = patterns.clone();
        sorted.sort();
        assert_eq!(sorted, patterns);
    }

    #[test]
    fn degenerate_dimension_is_widened_and_reported() {
        let net = split_net();
        let embeddings = vec![vec![0.5], vec![0.5], vec![0.5]];
        let cfg = ExpansionConfig {
            expansion_depth: 1,
            ..ExpansionConfig::default()
        };
        let (patterns, report) = discover_patterns(&net, 0, &embeddings, &cfg).unwrap();
        assert_eq!(report.degenerate_dims, vec![0]);
        let (lo, hi) = report.bounds[0];
        assert!(lo < 0.5 && 0.5 < hi);
        assert_eq!(patterns.len(), 1);
        assert_eq!(patterns[0].bitstring(), "10");
    }

    #[test]
    fn non_tail_layer_is_rejected() {
        let net = split_net();
        let cfg = ExpansionConfig::default();
        assert!(discover_patterns(&net, 1, &[vec![0.0]], &cfg).is_err());
    }

    #[test]
    fn scale_check_classifies() {
        assert_eq!(pattern_scale_check(&[20, 90]), PatternScale::Typical);
        assert!(matches!(
            pattern_scale_check(&[5, 20]),
            PatternScale::Unusual(_)
        ));
        assert!(matches!(
            pattern_scale_check(&[20, 500]),
            PatternScale::Unusual(_)
        ));
        assert!(matches!(
            pattern_scale_check(&[20, 1001]),
            PatternScale::Excessive(_)
        ));
    }

    #[test]
    fn depth_two_expression_matches_network_with_full_patterns() {
        let mut net = ReluNetwork::fc_tail(&[2, 2, 2, 1]).unwrap();
        init_he_uniform(&mut net, 11);
        let cfg = ExpansionConfig {
            expansion_depth: 2,
            ..ExpansionConfig::default()
        };
        let full = ActivationPattern::enumerate_all(2);
        let expr = build_minmax(&net, &[full.clone(), full], &cfg).unwrap();
        assert_eq!(expr.base_activation_index, 0);
        assert_eq!(expr.tier_count(), 4);
        assert_eq!(expr.leaf_count(), 256);
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        for _ in 0..300 {
            let z = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let n = net.forward(&z).unwrap();
            let (psi, id) = expr.eval(&z);
            assert!(
                (psi - n).abs() <= 1e-9 * (1.0 + n.abs()),
                "psi {} vs n {} at {:?} (leaf {})",
                psi,
                n,
                z,
                id
            );
        }
    }

    #[test]
    fn partial_depth_reads_deeper_activation() {
        let mut net = ReluNetwork::fc_tail(&[2, 3, 2, 1]).unwrap();
        init_he_uniform(&mut net, 7);
        let cfg = ExpansionConfig {
            expansion_depth: 1,
            ..ExpansionConfig::default()
        };
        let expr = build_minmax(&net, &[ActivationPattern::enumerate_all(2)], &cfg).unwrap();
        assert_eq!(expr.base_activation_index, 1);
        assert_eq!(expr.base_width, 3);
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let base = net.activation_at(&z, 1).unwrap();
            let n = net.forward(&z).unwrap();
            let (psi, _) = expr.eval(&base);
            assert!((psi - n).abs() <= 1e-9 * (1.0 + n.abs()));
        }
    }

    #[test]
    fn depth_out_of_range_is_rejected() {
        let net = ReluNetwork::fc_tail(&[2, 2, 1]).unwrap();
        let full = ActivationPattern::enumerate_all(2);
        for depth in [0usize, 2] {
            let cfg = ExpansionConfig {
                expansion_depth: depth,
                ..ExpansionConfig::default()
            };
            let sets: Vec<Vec<ActivationPattern>> = vec![full.clone(); depth.max(1)];
            assert!(build_minmax(&net, &sets[..depth], &cfg).is_err());
        }
    }
}
