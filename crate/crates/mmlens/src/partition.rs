//! Concept partition: grouping samples by the expression nodes that decide
//! their output.
//!
//! Evaluating the Min/Max expression on a sample selects one child at every
//! tier down to a single affine leaf. Samples selecting the same node form
//! a concept; the tree of observed nodes with per-node membership is the
//! partition. Nodes no sample selects are never materialized, so sibling
//! membership is disjoint and every tier's concepts cover the dataset.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::ecg::Label;
use crate::error::Result;
use crate::minmax::{FactorId, Lead, MinMaxExpr};
use crate::nn::{ReluNetwork, Tensor1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One input to partition, with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub input: Tensor1D,
    pub label: Option<Label>,
    pub split: Split,
}

/// Assignment of one sample: selected leaf, per-tier child indices, and the
/// network output.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRow {
    pub sample_id: String,
    pub label: Option<Label>,
    pub split: Split,
    pub model_output: f64,
    pub factor: FactorId,
    pub tiers: Vec<usize>,
}

/// Node of the observed hierarchy. `tier` 0 is the root; a node at the full
/// tier depth stands for one affine leaf factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptNode {
    pub tier: usize,
    /// Indices into the partition's row list, in input order.
    pub sample_indices: Vec<usize>,
    /// Child index at this node's tier -> subtree.
    pub children: BTreeMap<usize, ConceptNode>,
}

impl ConceptNode {
    fn new(tier: usize) -> Self {
        ConceptNode {
            tier,
            sample_indices: Vec::new(),
            children: BTreeMap::new(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.sample_indices.len()
    }

    /// Every inner node's membership is exactly the concatenation of its
    /// children's, in the same order.
    pub fn conservation_ok(&self, tier_count: usize) -> bool {
        if self.tier == tier_count {
            return self.children.is_empty();
        }
        let mut joined: Vec<usize> = Vec::with_capacity(self.sample_indices.len());
        for child in self.children.values() {
            if !child.conservation_ok(tier_count) {
                return false;
            }
            joined.extend(&child.sample_indices);
        }
        let mut mine = self.sample_indices.clone();
        joined.sort_unstable();
        mine.sort_unstable();
        joined == mine
    }

    /// Drops children observed on fewer than `min_samples` samples,
    /// recursively. The parent keeps its own membership, so pruned samples
    /// remain counted above the cut.
    pub fn prune_below(&mut self, min_samples: usize) {
        self.children.retain(|_, c| c.n_samples() >= min_samples);
        for child in self.children.values_mut() {
            child.prune_below(min_samples);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub rows: Vec<PartitionRow>,
    pub root: ConceptNode,
    pub tier_count: usize,
}

impl Partition {
    pub fn root_child_count(&self) -> usize {
        self.root.children.len()
    }

    /// Distinct leaves observed.
    pub fn concept_count(&self) -> usize {
        let mut leaves = 0;
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if node.tier == self.tier_count {
                leaves += 1;
            }
            stack.extend(node.children.values());
        }
        leaves
    }
}

/// Evaluates one input: leaf identity, per-tier child indices, network
/// output.
pub fn assign_sample(
    net: &ReluNetwork,
    expr: &MinMaxExpr,
    input: &[f64],
) -> Result<(FactorId, Vec<usize>, f64)> {
    let base = net.activation_at(input, expr.base_activation_index)?;
    let (_, factor) = expr.eval(&base);
    let tiers = (0..expr.tier_count())
        .map(|t| expr.tier_child_index(&factor, t))
        .collect();
    let output = net.forward(input)?;
    Ok((factor, tiers, output))
}

/// Partitions a dataset. Each sample lands on exactly one leaf; the
/// resulting tree is checked for conservation.
pub fn partition_dataset(
    net: &ReluNetwork,
    expr: &MinMaxExpr,
    samples: &[SampleRecord],
) -> Result<Partition> {
    let rows: Vec<PartitionRow> = samples
        .par_iter()
        .map(|s| {
            let (factor, tiers, output) = assign_sample(net, expr, &s.input)?;
            Ok(PartitionRow {
                sample_id: s.id.clone(),
                label: s.label,
                split: s.split,
                model_output: output,
                factor,
                tiers,
            })
        })
        .collect::<Result<_>>()?;
    let tier_count = expr.tier_count();
    let mut root = ConceptNode::new(0);
    for (i, row) in rows.iter().enumerate() {
        let mut node = &mut root;
        node.sample_indices.push(i);
        for (t, &child) in row.tiers.iter().enumerate() {
            node = node
                .children
                .entry(child)
                .or_insert_with(|| ConceptNode::new(t + 1));
            node.sample_indices.push(i);
        }
    }
    debug_assert!(root.conservation_ok(tier_count));
    debug_assert_eq!(root.n_samples(), rows.len());
    Ok(Partition {
        rows,
        root,
        tier_count,
    })
}

/// `root/t3/m1/...`: one `<op letter><child index>` segment per tier, `t`
/// for Min tiers and `m` for Max tiers.
pub fn node_path_string(expr: &MinMaxExpr, tiers: &[usize]) -> String {
    let mut s = String::from("root");
    for (t, &idx) in tiers.iter().enumerate() {
        let letter = match expr.tier_op(t) {
            Lead::Min => 't',
            Lead::Max => 'm',
        };
        s.push('/');
        s.push(letter);
        s.push_str(&idx.to_string());
    }
    s
}

/// Per-node summary, pre-order with children in child-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStat {
    pub node_path: String,
    pub level: usize,
    /// "min", "max", or "leaf".
    pub op: String,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_normal: usize,
    pub n_other: usize,
    pub mean_output: f64,
    pub min_output: f64,
    pub max_output: f64,
}

pub fn concept_stats(expr: &MinMaxExpr, partition: &Partition) -> Vec<ConceptStat> {
    let mut stats = Vec::new();
    collect_stats(expr, partition, &partition.root, &mut Vec::new(), &mut stats);
    stats
}

fn collect_stats(
    expr: &MinMaxExpr,
    partition: &Partition,
    node: &ConceptNode,
    tiers: &mut Vec<usize>,
    out: &mut Vec<ConceptStat>,
) {
    let op = if node.tier == partition.tier_count {
        "leaf".to_string()
    } else {
        expr.tier_op(node.tier).name().to_string()
    };
    let mut stat = ConceptStat {
        node_path: node_path_string(expr, tiers),
        level: node.tier,
        op,
        n_samples: node.n_samples(),
        n_train: 0,
        n_test: 0,
        n_normal: 0,
        n_other: 0,
        mean_output: 0.0,
        min_output: f64::INFINITY,
        max_output: f64::NEG_INFINITY,
    };
    let mut sum = 0.0;
    for &i in &node.sample_indices {
        let row = &partition.rows[i];
        match row.split {
            Split::Train => stat.n_train += 1,
            Split::Test => stat.n_test += 1,
        }
        match row.label {
            Some(Label::Normal) => stat.n_normal += 1,
            Some(Label::Other) => stat.n_other += 1,
            _ => {}
        }
        sum += row.model_output;
        stat.min_output = stat.min_output.min(row.model_output);
        stat.max_output = stat.max_output.max(row.model_output);
    }
    if stat.n_samples > 0 {
        stat.mean_output = sum / stat.n_samples as f64;
    } else {
        stat.min_output = 0.0;
        stat.max_output = 0.0;
    }
    out.push(stat);
    for (&child, sub) in &node.children {
        tiers.push(child);
        collect_stats(expr, partition, sub, tiers, out);
        tiers.pop();
    }
}

/// One line per sample per level: the node containing the sample at that
/// level. Level 0 is the root; the deepest level is the sample's leaf.
pub fn write_partition_tsv(
    path: &std::path::Path,
    expr: &MinMaxExpr,
    partition: &Partition,
) -> Result<()> {
    use std::fmt::Write as _;
    let mut s = String::from("sample_id\tlevel\tnode_path\tlabel\tmodel_output\n");
    for row in &partition.rows {
        for level in 0..=partition.tier_count {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                row.sample_id,
                level,
                node_path_string(expr, &row.tiers[..level]),
                row.label.map_or("?", |l| l.code()),
                row.model_output
            );
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_concept_stats_tsv(path: &std::path::Path, stats: &[ConceptStat]) -> Result<()> {
    use std::fmt::Write as _;
    let mut s = String::from(
        "node_path\tlevel\top\tn_samples\tn_train\tn_test\tn_normal\tn_other\tmean_output\tmin_output\tmax_output\n",
    );
    for st in stats {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            st.node_path,
            st.level,
            st.op,
            st.n_samples,
            st.n_train,
            st.n_test,
            st.n_normal,
            st.n_other,
            st.mean_output,
            st.min_output,
            st.max_output
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}
