//! Min/Max factorizations of ReLU network tails.
//!
//! A trained tail `N(z) = b + W R(a(z))` rewrites exactly as
//! `Min_tau Max_mu [ b + (W+ mu - W- tau) a(z) ]` where `W+`/`W-` are the
//! positive and negative parts of `W` and `tau`, `mu` range over binary
//! on/off patterns. Each factor is affine once every ReLU layer has been
//! expanded, so the expression is a finite Min/Max composition of affine
//! functions that agrees with the network wherever the pattern sets contain
//! the greedy (sign-of-preactivation) pattern.
//!
//! [`MinMaxExpr`] stores the expression per level (pattern lists plus the
//! affine layer pushed through at that level) rather than as materialized
//! nodes: the node tree is the full cross product of patterns and grows with
//! the fourth power of the pattern count, while every operation (evaluation,
//! leaf composition, enumeration) only needs the level data. Leaves compose
//! on demand in time independent of the tree size; [`MinMaxExpr::to_tree`]
//! materializes the explicit node form when it is small enough to inspect.

mod expand;
mod expr_io;
mod verify;

pub use expand::{
    build_minmax, discover_patterns, expand_layer, grid_probes, pattern_scale_check,
    split_signs, DiscoveryReport, GridSpec, PatternScale,
};
pub use expr_io::{load_expr, save_expr, EXPR_FORMAT_TAG};
pub use verify::{verify_equivalence, verify_equivalence_embeddings, EquivalenceReport};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

/// Binary on/off pattern over one layer's units, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivationPattern {
    bits: Vec<bool>,
}

impl ActivationPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        ActivationPattern { bits }
    }

    /// Greedy pattern of a pre-activation vector: on where strictly positive.
    /// A unit sitting exactly on zero is off.
    pub fn from_preactivations(pre: &[f64]) -> Self {
        ActivationPattern {
            bits: pre.iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_on(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Option<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return None,
            }
        }
        Some(ActivationPattern { bits })
    }

    /// All `2^width` patterns in lexicographic order. Panics above 20 bits.
    pub fn enumerate_all(width: usize) -> Vec<ActivationPattern> {
        assert!(width <= 20, "full enumeration is exponential");
        (0..1usize << width)
            .map(|m| {
                ActivationPattern {
                    // Lexicographic over Vec<bool>: bit 0 is the most varying
                    // position last, so index the mask from the high end.
                    bits: (0..width).map(|i| m >> (width - 1 - i) & 1 == 1).collect(),
                }
            })
            .collect()
    }
}

impl std::fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.bitstring())
    }
}

/// `f(x) = weights . x + bias` over the expansion base activation.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFunction {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AffineFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.bias + dot(&self.weights, x)
    }
}

/// Path to one leaf: a `(tau, mu)` pattern-index pair per expansion level,
/// outermost first. Indices refer to the level's sorted pattern list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FactorId {
    pub path: Vec<(usize, usize)>,
}

impl FactorId {
    pub fn new(path: Vec<(usize, usize)>) -> Self {
        FactorId { path }
    }
}

impl std::fmt::Display for FactorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (t, m)) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "t{}m{}", t, m)?;
        }
        Ok(())
    }
}

/// Which operation sits at the root (and every odd tier below it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lead {
    Min,
    Max,
}

impl Lead {
    pub fn name(self) -> &'static str {
        match self {
            Lead::Min => "min",
            Lead::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionConfig {
    pub grid_points_per_dim: usize,
    pub bound_percentile_low: f64,
    pub bound_percentile_high: f64,
    pub include_training_embeddings: bool,
    /// Relative tolerance for exactness: `|psi - n| <= tol * (1 + |n|)`.
    pub equality_tolerance: f64,
    pub expansion_depth: usize,
    pub lead: Lead,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            grid_points_per_dim: 7,
            bound_percentile_low: 1.0,
            bound_percentile_high: 99.0,
            include_training_embeddings: true,
            equality_tolerance: 1e-9,
            expansion_depth: 2,
            lead: Lead::Min,
        }
    }
}

/// One expansion level: the hidden affine layer whose ReLU is rewritten,
/// and the patterns both `tau` and `mu` range over at this level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionLevel {
    /// Index of the expanded layer in the source network's layer list.
    pub layer_index: usize,
    /// Sorted, deduplicated patterns over the layer's output units.
    pub patterns: Vec<ActivationPattern>,
    pub weights: Mat,
    pub bias: Vec<f64>,
}

/// Explicit node form of an expression, for inspection and small cases.
#[derive(Debug, Clone, PartialEq)]
pub enum MinMaxNode {
    Min(Vec<MinMaxNode>),
    Max(Vec<MinMaxNode>),
    Leaf(AffineFunction, FactorId),
}

impl MinMaxNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            MinMaxNode::Leaf(..) => 1,
            MinMaxNode::Min(c) | MinMaxNode::Max(c) => c.iter().map(|n| n.leaf_count()).sum(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            MinMaxNode::Leaf(..) => 0,
            MinMaxNode::Min(c) | MinMaxNode::Max(c) => {
                1 + c.iter().map(|n| n.depth()).max().unwrap_or(0)
            }
        }
    }

    /// Min and Max strictly alternate and children lists are nonempty.
    pub fn alternation_ok(&self) -> bool {
        fn walk(node: &MinMaxNode, parent_min: Option<bool>) -> bool {
            match node {
                MinMaxNode::Leaf(..) => true,
                MinMaxNode::Min(c) => {
                    parent_min != Some(true)
                        && !c.is_empty()
                        && c.iter().all(|n| walk(n, Some(true)))
                }
                MinMaxNode::Max(c) => {
                    parent_min != Some(false)
                        && !c.is_empty()
                        && c.iter().all(|n| walk(n, Some(false)))
                }
            }
        }
        walk(self, None)
    }

    /// Naive tree walk. Ties select the lowest child index. Returns the
    /// selected leaf's value at `x` and its identity.
    pub fn eval(&self, x: &[f64]) -> (f64, FactorId) {
        match self {
            MinMaxNode::Leaf(f, id) => (f.eval(x), id.clone()),
            MinMaxNode::Min(c) => {
                let mut best = c[0].eval(x);
                for node in &c[1..] {
                    let v = node.eval(x);
                    if v.0 < best.0 {
                        best = v;
                    }
                }
                best
            }
            MinMaxNode::Max(c) => {
                let mut best = c[0].eval(x);
                for node in &c[1..] {
                    let v = node.eval(x);
                    if v.0 > best.0 {
                        best = v;
                    }
                }
                best
            }
        }
    }
}

/// A Min/Max composition of affine factors over a base activation.
///
/// Semantically this is the alternating tree `lead(tau) / other(mu)` per
/// level with the full cross product of patterns; the tree depth is twice
/// the number of levels. Storage is per level, and leaves compose on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxExpr {
    pub lead: Lead,
    /// Activation index (in the source network) the leaf factors read from.
    /// Equals the embedding index when every tail ReLU layer is expanded.
    pub base_activation_index: usize,
    pub base_width: usize,
    pub terminal_bias: f64,
    pub terminal_weights: Vec<f64>,
    /// Outermost level first.
    pub levels: Vec<ExpansionLevel>,
    pub config: ExpansionConfig,
}

impl MinMaxExpr {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Expansion("expression has no levels".into()));
        }
        let mut expect_rows = self.terminal_weights.len();
        for (i, level) in self.levels.iter().enumerate() {
            if level.patterns.is_empty() {
                return Err(Error::EmptyPatternSet { level: i });
            }
            if level.weights.rows() != expect_rows {
                return Err(Error::Expansion(format!(
                    "level {} expands {} units but the outer row has {}",
                    i,
                    level.weights.rows(),
                    expect_rows
                )));
            }
            for p in &level.patterns {
                if p.len() != level.weights.rows() {
                    return Err(Error::Expansion(format!(
                        "level {} pattern width {} != {}",
                        i,
                        p.len(),
                        level.weights.rows()
                    )));
                }
            }
            if level.bias.len() != level.weights.rows() {
                return Err(Error::Expansion(format!("level {} bias length", i)));
            }
            let mut sorted = level.patterns.clone();
            sorted.sort();
            sorted.dedup();
            if sorted != level.patterns {
                return Err(Error::Expansion(format!(
                    "level {} patterns must be sorted and unique",
                    i
                )));
            }
            expect_rows = level.weights.cols();
        }
        if expect_rows != self.base_width {
            return Err(Error::Expansion(format!(
                "innermost level reads {} values, base width is {}",
                expect_rows, self.base_width
            )));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> u128 {
        self.levels
            .iter()
            .map(|l| (l.patterns.len() as u128).pow(2))
            .product()
    }

    /// Number of Min/Max tiers (tree depth): two per level.
    pub fn tier_count(&self) -> usize {
        2 * self.levels.len()
    }

    /// Pre-activation of each expanded layer given the base activation,
    /// outermost level first.
    fn preactivations(&self, base: &[f64]) -> Vec<Vec<f64>> {
        let mut pres = vec![Vec::new(); self.levels.len()];
        let mut h = base.to_vec();
        for i in (0..self.levels.len()).rev() {
            let level = &self.levels[i];
            let mut pre = level.weights.matvec(&h);
            for (p, b) in pre.iter_mut().zip(&level.bias) {
                *p += b;
            }
            h = crate::linalg::relu(&pre);
            pres[i] = pre;
        }
        pres
    }

    /// Evaluates the expression at a base activation.
    ///
    /// Walks the alternating tree with ties resolved to the lowest child
    /// index and returns the selected leaf's affine value together with its
    /// identity, so the result always equals `leaf_affine(&id).eval(base)`.
    pub fn eval(&self, base: &[f64]) -> (f64, FactorId) {
        assert_eq!(base.len(), self.base_width, "base width");
        let pres = self.preactivations(base);
        let mut path = Vec::with_capacity(self.levels.len());
        self.walk(0, &self.terminal_weights, self.terminal_bias, &pres, &mut path);
        let id = FactorId::new(path);
        (self.leaf_affine(&id).eval(base), id)
    }

    /// Selects the (tau, mu) pair at `level` and recursively below, pushing
    /// choices onto `path`. Returns the comparison value of the subtree.
    fn walk(
        &self,
        level: usize,
        row: &[f64],
        bias: f64,
        pres: &[Vec<f64>],
        path: &mut Vec<(usize, usize)>,
    ) -> f64 {
        let lv = &self.levels[level];
        let (pos, neg) = split_signs(row);
        let a = &pres[level];
        if level + 1 == self.levels.len() {
            // Innermost level: the subtree value for (tau, mu) is
            // bias + pos.mu.a - neg.tau.a, separable in mu and tau, and the
            // lowest-index tie rule reduces to first-achiever argmaxes.
            let (mu, vpos) = first_argmax(&lv.patterns, &pos, a);
            let (tau, vneg) = first_argmax(&lv.patterns, &neg, a);
            path.push((tau, mu));
            return bias + vpos - vneg;
        }
        // candidate value, chosen indices, and the sub-path it committed to
        type Inner = (f64, usize, Vec<(usize, usize)>);
        type Outer = (f64, usize, usize, Vec<(usize, usize)>);
        let mut best: Option<Outer> = None;
        for (outer_idx, _) in lv.patterns.iter().enumerate() {
            let mut inner_best: Option<Inner> = None;
            for (inner_idx, _) in lv.patterns.iter().enumerate() {
                let (tau, mu) = match self.lead {
                    Lead::Min => (outer_idx, inner_idx),
                    Lead::Max => (inner_idx, outer_idx),
                };
                let (next_row, next_bias) =
                    push_through(&pos, &neg, &lv.patterns[tau], &lv.patterns[mu], lv, bias);
                let mut sub_path = Vec::new();
                let v = self.walk(level + 1, &next_row, next_bias, pres, &mut sub_path);
                let better = match (&inner_best, self.lead) {
                    (None, _) => true,
                    (Some((cur, _, _)), Lead::Min) => v > *cur, // inner tier is Max
                    (Some((cur, _, _)), Lead::Max) => v < *cur, // inner tier is Min
                };
                if better {
                    inner_best = Some((v, inner_idx, sub_path));
                }
            }
            let (v, inner_idx, sub_path) = inner_best.expect("nonempty patterns");
            let better = match (&best, self.lead) {
                (None, _) => true,
                (Some((cur, _, _, _)), Lead::Min) => v < *cur,
                (Some((cur, _, _, _)), Lead::Max) => v > *cur,
            };
            if better {
                best = Some((v, outer_idx, inner_idx, sub_path));
            }
        }
        let (v, outer_idx, inner_idx, sub_path) = best.expect("nonempty patterns");
        let (tau, mu) = match self.lead {
            Lead::Min => (outer_idx, inner_idx),
            Lead::Max => (inner_idx, outer_idx),
        };
        path.push((tau, mu));
        path.extend(sub_path);
        v
    }

    /// Composes the affine factor a leaf path denotes. Independent of any
    /// evaluation state; uses only the stored level data.
    pub fn leaf_affine(&self, id: &FactorId) -> AffineFunction {
        assert_eq!(id.path.len(), self.levels.len(), "path length");
        let mut row = self.terminal_weights.clone();
        let mut bias = self.terminal_bias;
        for (level, &(tau, mu)) in self.levels.iter().zip(&id.path) {
            let (pos, neg) = split_signs(&row);
            let (next_row, next_bias) = push_through(
                &pos,
                &neg,
                &level.patterns[tau],
                &level.patterns[mu],
                level,
                bias,
            );
            row = next_row;
            bias = next_bias;
        }
        AffineFunction { weights: row, bias }
    }

    /// All leaves in path order (odometer over pattern indices).
    pub fn leaves(&self) -> impl Iterator<Item = (FactorId, AffineFunction)> + '_ {
        LeafIter {
            expr: self,
            odometer: vec![0; 2 * self.levels.len()],
            done: self.levels.iter().any(|l| l.patterns.is_empty()),
        }
    }

    /// Materializes the explicit node tree. Fails above `max_leaves`.
    pub fn to_tree(&self, max_leaves: usize) -> Result<MinMaxNode> {
        if self.leaf_count() > max_leaves as u128 {
            return Err(Error::Expansion(format!(
                "tree with {} leaves exceeds materialization limit {}",
                self.leaf_count(),
                max_leaves
            )));
        }
        Ok(self.build_node(0, &self.terminal_weights, self.terminal_bias, &[]))
    }

    fn build_node(&self, level: usize, row: &[f64], bias: f64, prefix: &[(usize, usize)]) -> MinMaxNode {
        if level == self.levels.len() {
            return MinMaxNode::Leaf(
                AffineFunction {
                    weights: row.to_vec(),
                    bias,
                },
                FactorId::new(prefix.to_vec()),
            );
        }
        let lv = &self.levels[level];
        let (pos, neg) = split_signs(row);
        let outer: Vec<MinMaxNode> = (0..lv.patterns.len())
            .map(|outer_idx| {
                let inner: Vec<MinMaxNode> = (0..lv.patterns.len())
                    .map(|inner_idx| {
                        let (tau, mu) = match self.lead {
                            Lead::Min => (outer_idx, inner_idx),
                            Lead::Max => (inner_idx, outer_idx),
                        };
                        let (next_row, next_bias) = push_through(
                            &pos,
                            &neg,
                            &lv.patterns[tau],
                            &lv.patterns[mu],
                            lv,
                            bias,
                        );
                        let mut next_prefix = prefix.to_vec();
                        next_prefix.push((tau, mu));
                        self.build_node(level + 1, &next_row, next_bias, &next_prefix)
                    })
                    .collect();
                match self.lead {
                    Lead::Min => MinMaxNode::Max(inner),
                    Lead::Max => MinMaxNode::Min(inner),
                }
            })
            .collect();
        match self.lead {
            Lead::Min => MinMaxNode::Min(outer),
            Lead::Max => MinMaxNode::Max(outer),
        }
    }

    /// Child index at a Min/Max tier (0-based from the root) along a path.
    /// Tiers alternate outer/inner per level in lead order.
    pub fn tier_child_index(&self, id: &FactorId, tier: usize) -> usize {
        let level = tier / 2;
        let (tau, mu) = id.path[level];
        let outer_first = tier.is_multiple_of(2);
        match (self.lead, outer_first) {
            (Lead::Min, true) | (Lead::Max, false) => tau,
            (Lead::Min, false) | (Lead::Max, true) => mu,
        }
    }

    /// Operation at a tier: the lead at even tiers, its dual at odd tiers.
    pub fn tier_op(&self, tier: usize) -> Lead {
        let flip = tier % 2 == 1;
        match (self.lead, flip) {
            (Lead::Min, false) | (Lead::Max, true) => Lead::Min,
            (Lead::Min, true) | (Lead::Max, false) => Lead::Max,
        }
    }
}

struct LeafIter<'a> {
    expr: &'a MinMaxExpr,
    /// Pairs (tau, mu) per level flattened: [t0, m0, t1, m1, ...].
    odometer: Vec<usize>,
    done: bool,
}

impl Iterator for LeafIter<'_> {
    type Item = (FactorId, AffineFunction);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let path: Vec<(usize, usize)> = self
            .odometer
            .chunks(2)
            .map(|c| (c[0], c[1]))
            .collect();
        let id = FactorId::new(path);
        let affine = self.expr.leaf_affine(&id);
        // Advance the odometer, last position fastest.
        let mut pos = self.odometer.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            let limit = self.expr.levels[pos / 2].patterns.len();
            self.odometer[pos] += 1;
            if self.odometer[pos] < limit {
                break;
            }
            self.odometer[pos] = 0;
        }
        Some((id, affine))
    }
}

/// First pattern index maximizing the masked dot `sum_on(part[i] * a[i])`,
/// with the value. Ties keep the lowest index.
fn first_argmax(patterns: &[ActivationPattern], part: &[f64], a: &[f64]) -> (usize, f64) {
    let mut best_idx = 0;
    let mut best = masked_dot(part, &patterns[0], a);
    for (i, p) in patterns.iter().enumerate().skip(1) {
        let v = masked_dot(part, p, a);
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    (best_idx, best)
}

fn masked_dot(part: &[f64], pattern: &ActivationPattern, a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..part.len() {
        if pattern.is_on(i) {
            acc += part[i] * a[i];
        }
    }
    acc
}

/// Applies the masked row `pos.mu - neg.tau` to a level's affine layer,
/// producing the row and bias entering the next level.
fn push_through(
    pos: &[f64],
    neg: &[f64],
    tau: &ActivationPattern,
    mu: &ActivationPattern,
    level: &ExpansionLevel,
    bias: f64,
) -> (Vec<f64>, f64) {
    let width = pos.len();
    let mut v = vec![0.0; width];
    for i in 0..width {
        let p = if mu.is_on(i) { pos[i] } else { 0.0 };
        let n = if tau.is_on(i) { neg[i] } else { 0.0 };
        v[i] = p - n;
    }
    let next_bias = bias + dot(&v, &level.bias);
    let next_row = level.weights.vecmat(&v);
    (next_row, next_bias)
}
