//! Network/expression equivalence checking over datasets.

use rayon::prelude::*;

use crate::error::Result;
use crate::nn::{ReluNetwork, Tensor1D};

use super::MinMaxExpr;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub n_checked: usize,
    /// Samples where `|psi - n| <= tol * (1 + |n|)`.
    pub n_exact: usize,
    pub max_abs_error: f64,
    /// Ids of samples failing the tolerance, in input order.
    pub uncovered: Vec<String>,
}

impl EquivalenceReport {
    pub fn coverage(&self) -> f64 {
        if self.n_checked == 0 {
            1.0
        } else {
            self.n_exact as f64 / self.n_checked as f64
        }
    }
}

/// Compares `expr` against `net` on raw network inputs.
pub fn verify_equivalence(
    net: &ReluNetwork,
    expr: &MinMaxExpr,
    ids: &[String],
    inputs: &[Tensor1D],
    tol: f64,
) -> Result<EquivalenceReport> {
    assert_eq!(ids.len(), inputs.len(), "one id per input");
    let pairs: Vec<(Tensor1D, f64)> = inputs
        .par_iter()
        .map(|x| {
            let base = net.activation_at(x, expr.base_activation_index)?;
            let n = net.forward(x)?;
            Ok((base, n))
        })
        .collect::<Result<_>>()?;
    Ok(check_pairs(expr, ids, &pairs, tol))
}

/// Compares `expr` against `net` on embedding-space probes, which need not
/// come from any real input.
pub fn verify_equivalence_embeddings(
    net: &ReluNetwork,
    expr: &MinMaxExpr,
    ids: &[String],
    embeddings: &[Tensor1D],
    tol: f64,
) -> Result<EquivalenceReport> {
    assert_eq!(ids.len(), embeddings.len(), "one id per probe");
    let pairs: Vec<(Tensor1D, f64)> = embeddings
        .par_iter()
        .map(|z| {
            let n = net.forward_from_activation(net.embedding_index, z)?;
            let base = activation_from_embedding(net, z, expr.base_activation_index)?;
            Ok((base, n))
        })
        .collect::<Result<_>>()?;
    Ok(check_pairs(expr, ids, &pairs, tol))
}

/// Walks tail layers from the embedding down to activation `target_index`.
fn activation_from_embedding(
    net: &ReluNetwork,
    z: &[f64],
    target_index: usize,
) -> Result<Tensor1D> {
    use crate::nn::Layer;
    let mut h = z.to_vec();
    for layer in &net.layers[net.embedding_index..target_index] {
        let Layer::Affine(aff) = layer else {
            return Err(crate::error::Error::Expansion(
                "tail layer is not affine".into(),
            ));
        };
        h = crate::linalg::relu(&aff.preactivation(&h));
    }
    Ok(h)
}

fn check_pairs(
    expr: &MinMaxExpr,
    ids: &[String],
    pairs: &[(Tensor1D, f64)],
    tol: f64,
) -> EquivalenceReport {
    let errors: Vec<f64> = pairs
        .par_iter()
        .map(|(base, n)| (expr.eval(base).0 - n).abs())
        .collect();
    let mut report = EquivalenceReport {
        n_checked: pairs.len(),
        n_exact: 0,
        max_abs_error: 0.0,
        uncovered: Vec::new(),
    };
    for ((err, (_, n)), id) in errors.iter().zip(pairs).zip(ids) {
        if *err <= tol * (1.0 + n.abs()) {
            report.n_exact += 1;
        } else {
            report.uncovered.push(id.clone());
        }
        if *err > report.max_abs_error {
            report.max_abs_error = *err;
        }
    }
    report
}
