//! Finite-difference validation of the backward pass.

use super::train::{backward, forward_cached, get_param, param_count, set_param};
use super::{Layer, ReluNetwork};
use crate::error::Result;
use crate::nn::sigmoid_cross_entropy;

const FD_STEP: f64 = 1e-5;
/// Pre-activations or pool margins closer to zero than this make the loss
/// non-differentiable within the finite-difference step; the check skips.
const BOUNDARY_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub checked: usize,
    /// Why the point was rejected, when it sits on a kink.
    pub skipped: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.skipped.is_none() && self.max_rel_error < tolerance
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic gradients of the loss at `(x, y)` against central
/// differences over every parameter. Points on a ReLU boundary or a pool
/// tie are reported as skipped instead of checked.
pub fn gradient_check(net: &ReluNetwork, x: &[f64], y: f64) -> Result<GradCheckReport> {
    net.validate()?;
    let trace = net.forward_with_trace(x)?;
    for (i, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Conv(c) if c.relu => {
                // Pre-activation sign equals the recorded pattern; magnitude
                // must clear the margin. Recover pre from input activation.
                if let Some(min_abs) = preactivation_min_abs(net, &trace, i) {
                    if min_abs < BOUNDARY_MARGIN {
                        return Ok(skip_report(i, "ReLU boundary", min_abs));
                    }
                }
            }
            Layer::Affine(a) if a.relu => {
                if let Some(min_abs) = preactivation_min_abs(net, &trace, i) {
                    if min_abs < BOUNDARY_MARGIN {
                        return Ok(skip_report(i, "ReLU boundary", min_abs));
                    }
                }
            }
            Layer::MaxPool(pool) => {
                let (channels, len) = trace.shapes[i];
                let input = &trace.activations[i];
                let out_len = pool.out_len(len)?;
                for c in 0..channels {
                    for j in 0..out_len {
                        let start = c * len + j * pool.stride;
                        let window = &input[start..start + pool.pool];
                        let mut sorted = window.to_vec();
                        sorted.sort_by(|p, q| q.partial_cmp(p).expect("finite"));
                        // A window of dead ReLU zeros is not a kink: the
                        // margin check above keeps them at exactly zero
                        // under the finite-difference step.
                        if sorted[0] > BOUNDARY_MARGIN
                            && sorted.len() > 1
                            && (sorted[0] - sorted[1]).abs() < BOUNDARY_MARGIN
                        {
                            return Ok(skip_report(i, "max-pool tie", sorted[0] - sorted[1]));
                        }
                    }
                }
            }
            _ => {}
        }
    }

    let cache = forward_cached(net, x);
    let (_, dlogit) = sigmoid_cross_entropy(cache.output, y);
    let analytic = backward(net, &cache, dlogit).flat();
    debug_assert_eq!(analytic.len(), param_count(net));

    let mut probe = net.clone();
    let mut max_rel = 0.0;
    let mut worst = 0;
    for (i, &g) in analytic.iter().enumerate() {
        let saved = get_param(&probe, i);
        set_param(&mut probe, i, saved + FD_STEP);
        let (lp, _) = sigmoid_cross_entropy(probe.forward(x)?, y);
        set_param(&mut probe, i, saved - FD_STEP);
        let (lm, _) = sigmoid_cross_entropy(probe.forward(x)?, y);
        set_param(&mut probe, i, saved);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let err = rel_error(g, fd);
        if err > max_rel {
            max_rel = err;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        checked: analytic.len(),
        skipped: None,
    })
}

fn skip_report(layer: usize, what: &str, margin: f64) -> GradCheckReport {
    GradCheckReport {
        max_rel_error: f64::NAN,
        worst_param: 0,
        checked: 0,
        skipped: Some(format!(
            "layer {}: {} within margin ({:.2e})",
            layer, what, margin
        )),
    }
}

/// Smallest |pre-activation| of ReLU layer `i`, recomputed from the traced
/// input activation.
fn preactivation_min_abs(
    net: &ReluNetwork,
    trace: &super::ActivationTrace,
    i: usize,
) -> Option<f64> {
    let input = &trace.activations[i];
    let pre = match &net.layers[i] {
        Layer::Conv(conv) => {
            let (channels, len) = trace.shapes[i];
            let f = super::Feature {
                channels,
                len,
                data: input.clone(),
            };
            super::conv_forward(conv, &f).ok()?.data
        }
        Layer::Affine(aff) => aff.preactivation(input),
        Layer::MaxPool(_) => return None,
    };
    pre.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min).into()
}
