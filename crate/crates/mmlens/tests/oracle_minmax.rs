//! Cross-checks of expression evaluation against independent oracles.
//!
//! The oracles here are deliberately naive: leaves are composed directly
//! from the layer weights and the expression value is a brute-force nested
//! min/max fold over every leaf, with no shared code or shortcuts from the
//! library implementation.

use mmlens::minmax::{build_minmax, verify_equivalence, ActivationPattern, ExpansionConfig, Lead};
use mmlens::nn::{init_he_uniform, AffineLayer, Layer, ReluNetwork};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw copies of a fully connected tail: hidden `(weights, bias)` pairs in
/// apply order plus the terminal row and bias.
struct RawTail {
    hidden: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    row: Vec<f64>,
    bias: f64,
}

fn raw_tail(net: &ReluNetwork) -> RawTail {
    let layers = net.tail_layers();
    let hidden = layers[..layers.len() - 1]
        .iter()
        .map(|aff| {
            let rows = (0..aff.out_dim())
                .map(|r| aff.weights.row(r).to_vec())
                .collect();
            (rows, aff.bias.clone())
        })
        .collect();
    let terminal = layers[layers.len() - 1];
    RawTail {
        hidden,
        row: terminal.weights.row(0).to_vec(),
        bias: terminal.bias[0],
    }
}

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, x)).collect()
}

fn net_value(tail: &RawTail, z: &[f64]) -> f64 {
    let mut h = z.to_vec();
    for (w, b) in &tail.hidden {
        h = matvec(w, &h)
            .iter()
            .zip(b)
            .map(|(v, bi)| (v + bi).max(0.0))
            .collect();
    }
    tail.bias + dot(&tail.row, &h)
}

/// Pushes `(row, bias)` through one masked hidden layer:
/// `row+ . mu - row- . tau` applied to `W h + b`.
fn push(
    row: &[f64],
    bias: f64,
    w: &[Vec<f64>],
    b: &[f64],
    tau: &[bool],
    mu: &[bool],
) -> (Vec<f64>, f64) {
    let v: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let pos = if mu[i] { r.max(0.0) } else { 0.0 };
            let neg = if tau[i] { (-r).max(0.0) } else { 0.0 };
            pos - neg
        })
        .collect();
    let next_bias = bias + dot(&v, b);
    let cols = w[0].len();
    let next_row = (0..cols).map(|c| v.iter().zip(w).map(|(vi, wr)| vi * wr[c]).sum()).collect();
    (next_row, next_bias)
}

fn bools(p: &ActivationPattern) -> Vec<bool> {
    (0..p.len()).map(|i| p.is_on(i)).collect()
}

/// Brute-force value of a one-level expression with a selection trace.
fn naive_depth1(
    tail: &RawTail,
    patterns: &[Vec<bool>],
    z: &[f64],
) -> (f64, (usize, usize)) {
    let (w, b) = &tail.hidden[tail.hidden.len() - 1];
    let mut best_outer = f64::INFINITY;
    let mut sel = (0, 0);
    for (ti, tau) in patterns.iter().enumerate() {
        let mut best_inner = f64::NEG_INFINITY;
        let mut sel_mu = 0;
        for (mi, mu) in patterns.iter().enumerate() {
            let (row, bias) = push(&tail.row, tail.bias, w, b, tau, mu);
            let v = bias + dot(&row, z);
            if v > best_inner {
                best_inner = v;
                sel_mu = mi;
            }
        }
        if best_inner < best_outer {
            best_outer = best_inner;
            sel = (ti, sel_mu);
        }
    }
    (best_outer, sel)
}

/// Brute-force value of a two-level expression (outer level expands the
/// second hidden layer): min max min max over composed leaf values.
fn naive_depth2(
    tail: &RawTail,
    outer: &[Vec<bool>],
    inner: &[Vec<bool>],
    z: &[f64],
) -> (f64, Vec<(usize, usize)>) {
    let (w2, b2) = &tail.hidden[1];
    let (w1, b1) = &tail.hidden[0];
    let mut v_outer = f64::INFINITY;
    let mut sel = vec![(0, 0), (0, 0)];
    for (t2, tau2) in outer.iter().enumerate() {
        let mut v_max2 = f64::NEG_INFINITY;
        let mut sel2 = (0, vec![(0, 0)]);
        for (m2, mu2) in outer.iter().enumerate() {
            let (row1, bias1) = push(&tail.row, tail.bias, w2, b2, tau2, mu2);
            let mut v_min1 = f64::INFINITY;
            let mut sel1 = (0, 0);
            for (t1, tau1) in inner.iter().enumerate() {
                let mut v_max1 = f64::NEG_INFINITY;
                let mut sel_m1 = 0;
                for (m1, mu1) in inner.iter().enumerate() {
                    let (row0, bias0) = push(&row1, bias1, w1, b1, tau1, mu1);
                    let v = bias0 + dot(&row0, z);
                    if v > v_max1 {
                        v_max1 = v;
                        sel_m1 = m1;
                    }
                }
                if v_max1 < v_min1 {
                    v_min1 = v_max1;
                    sel1 = (t1, sel_m1);
                }
            }
            if v_min1 > v_max2 {
                v_max2 = v_min1;
                sel2 = (m2, vec![sel1]);
            }
        }
        if v_max2 < v_outer {
            v_outer = v_max2;
            sel = vec![(t2, sel2.0), sel2.1[0]];
        }
    }
    (v_outer, sel)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn depth1_matches_naive_oracle_with_full_patterns() {
    let mut rng = ChaCha20Rng::seed_from_u64(100);
    for trial in 0..20 {
        let mut net = ReluNetwork::fc_tail(&[3, 4, 1]).unwrap();
        init_he_uniform(&mut net, 1000 + trial);
        let tail = raw_tail(&net);
        let patterns = ActivationPattern::enumerate_all(4);
        let cfg = ExpansionConfig {
            expansion_depth: 1,
            ..ExpansionConfig::default()
        };
        let expr = build_minmax(&net, std::slice::from_ref(&patterns), &cfg).unwrap();
        let raw: Vec<Vec<bool>> = patterns.iter().map(bools).collect();
        for _ in 0..30 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (psi, _) = expr.eval(&z);
            let (naive, _) = naive_depth1(&tail, &raw, &z);
            assert!(close(psi, naive), "trial {}: {} vs {}", trial, psi, naive);
            let n = net_value(&tail, &z);
            assert!(close(psi, n), "trial {}: psi {} vs net {}", trial, psi, n);
        }
    }
}

#[test]
fn depth2_matches_naive_oracle_and_network() {
    let mut rng = ChaCha20Rng::seed_from_u64(200);
    for trial in 0..10 {
        let mut net = ReluNetwork::fc_tail(&[2, 3, 3, 1]).unwrap();
        init_he_uniform(&mut net, 2000 + trial);
        let tail = raw_tail(&net);
        let patterns = ActivationPattern::enumerate_all(3);
        let cfg = ExpansionConfig::default();
        let expr = build_minmax(&net, &[patterns.clone(), patterns.clone()], &cfg).unwrap();
        let raw: Vec<Vec<bool>> = patterns.iter().map(bools).collect();
        for _ in 0..15 {
            let z: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (psi, _) = expr.eval(&z);
            let (naive, _) = naive_depth2(&tail, &raw, &raw, &z);
            assert!(close(psi, naive), "trial {}: {} vs {}", trial, psi, naive);
            let n = net_value(&tail, &z);
            assert!(close(psi, n), "trial {}: psi {} vs net {}", trial, psi, n);
        }
    }
}

#[test]
fn integer_weights_select_identical_leaves() {
    // Integer arithmetic is exact in f64, so the fast walk and the naive
    // fold must agree on the selected indices as well, including the
    // lowest-index tie rule.
    let mut rng = ChaCha20Rng::seed_from_u64(300);
    for trial in 0..40 {
        let mut net = ReluNetwork::fc_tail(&[2, 3, 1]).unwrap();
        {
            let Layer::Affine(aff) = &mut net.layers[0] else { unreachable!() };
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..2).map(|_| rng.gen_range(-3..=3) as f64).collect())
                .collect();
            let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-2..=2) as f64).collect();
            *aff = AffineLayer::from_rows(&rows, bias, true);
            let Layer::Affine(term) = &mut net.layers[1] else { unreachable!() };
            let row: Vec<f64> = (0..3).map(|_| rng.gen_range(-3..=3) as f64).collect();
            *term = AffineLayer::from_rows(&[row], vec![rng.gen_range(-2..=2) as f64], false);
        }
        let tail = raw_tail(&net);
        let patterns = ActivationPattern::enumerate_all(3);
        let cfg = ExpansionConfig {
            expansion_depth: 1,
            ..ExpansionConfig::default()
        };
        let expr = build_minmax(&net, std::slice::from_ref(&patterns), &cfg).unwrap();
        let raw: Vec<Vec<bool>> = patterns.iter().map(bools).collect();
        for a in -3..=3 {
            for b in -3..=3 {
                let z = [a as f64, b as f64];
                let (psi, id) = expr.eval(&z);
                let (naive, (ti, mi)) = naive_depth1(&tail, &raw, &z);
                assert_eq!(psi, naive, "trial {} at {:?}", trial, z);
                assert_eq!(id.path, vec![(ti, mi)], "trial {} at {:?}", trial, z);
                assert_eq!(psi, net_value(&tail, &z), "trial {} at {:?}", trial, z);
            }
        }
    }
}

#[test]
fn zero_tolerance_verifies_on_integer_networks() {
    // With integer weights every product and sum stays exact in f64, so the
    // expression reproduces the network bit for bit and verification holds
    // even at tolerance zero.
    let mut rng = ChaCha20Rng::seed_from_u64(350);
    for trial in 0..10 {
        let mut net = ReluNetwork::fc_tail(&[2, 3, 2, 1]).unwrap();
        let mut fill = |out: usize, inp: usize, relu: bool| {
            let rows: Vec<Vec<f64>> = (0..out)
                .map(|_| (0..inp).map(|_| rng.gen_range(-3..=3) as f64).collect())
                .collect();
            let bias: Vec<f64> = (0..out).map(|_| rng.gen_range(-2..=2) as f64).collect();
            AffineLayer::from_rows(&rows, bias, relu)
        };
        let layers = [fill(3, 2, true), fill(2, 3, true), fill(1, 2, false)];
        for (slot, layer) in net.layers.iter_mut().zip(layers) {
            let Layer::Affine(aff) = slot else { unreachable!() };
            *aff = layer;
        }
        let pattern_sets = [
            ActivationPattern::enumerate_all(2),
            ActivationPattern::enumerate_all(3),
        ];
        let cfg = ExpansionConfig::default();
        let expr = build_minmax(&net, &pattern_sets, &cfg).unwrap();

        let mut ids = Vec::new();
        let mut inputs = Vec::new();
        for a in -3..=3 {
            for b in -3..=3 {
                ids.push(format!("z_{}_{}", a, b));
                inputs.push(vec![a as f64, b as f64]);
            }
        }
        let report = verify_equivalence(&net, &expr, &ids, &inputs, 0.0).unwrap();
        assert_eq!(report.n_exact, report.n_checked, "trial {}", trial);
        assert_eq!(report.coverage(), 1.0, "trial {}", trial);
        assert_eq!(report.max_abs_error, 0.0, "trial {}", trial);
        assert!(report.uncovered.is_empty(), "trial {}", trial);
    }
}

#[test]
fn min_led_and_max_led_agree_on_random_networks() {
    let mut rng = ChaCha20Rng::seed_from_u64(400);
    for trial in 0..10 {
        let mut net = ReluNetwork::fc_tail(&[2, 3, 3, 1]).unwrap();
        init_he_uniform(&mut net, 4000 + trial);
        let patterns = ActivationPattern::enumerate_all(3);
        let min_cfg = ExpansionConfig::default();
        let max_cfg = ExpansionConfig {
            lead: Lead::Max,
            ..ExpansionConfig::default()
        };
        let min_expr =
            build_minmax(&net, &[patterns.clone(), patterns.clone()], &min_cfg).unwrap();
        let max_expr =
            build_minmax(&net, &[patterns.clone(), patterns.clone()], &max_cfg).unwrap();
        for _ in 0..30 {
            let z: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (a, _) = min_expr.eval(&z);
            let (b, _) = max_expr.eval(&z);
            assert!(close(a, b), "trial {}: min-led {} vs max-led {}", trial, a, b);
        }
    }
}

/// Sign-region oracle for a net with a single hidden layer of two units.
///
/// The input plane splits into at most four regions by the hidden
/// pre-activation signs; on each region the network is one affine function
/// computable directly from the weights. The selected leaf must reproduce
/// that affine value, and its masks must agree with the region pattern on
/// every coordinate that can influence the value.
#[test]
fn sign_region_oracle_2_2_1() {
    let mut rng = ChaCha20Rng::seed_from_u64(500);
    for trial in 0..25 {
        let mut net = ReluNetwork::fc_tail(&[2, 2, 1]).unwrap();
        init_he_uniform(&mut net, 5000 + trial);
        let tail = raw_tail(&net);
        let (w1, b1) = &tail.hidden[0];
        let patterns = ActivationPattern::enumerate_all(2);
        let cfg = ExpansionConfig {
            expansion_depth: 1,
            ..ExpansionConfig::default()
        };
        let expr = build_minmax(&net, std::slice::from_ref(&patterns), &cfg).unwrap();
        for _ in 0..60 {
            let z: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a: Vec<f64> = matvec(w1, &z)
                .iter()
                .zip(b1)
                .map(|(v, bi)| v + bi)
                .collect();
            // Region-restricted affine: keep active units only.
            let region: Vec<bool> = a.iter().map(|&v| v > 0.0).collect();
            let mut region_value = tail.bias;
            for i in 0..2 {
                if region[i] {
                    region_value += tail.row[i] * a[i];
                }
            }
            let (psi, id) = expr.eval(&z);
            assert!(
                close(psi, region_value),
                "trial {}: psi {} vs region {}",
                trial,
                psi,
                region_value
            );
            let (ti, mi) = id.path[0];
            let tau = &patterns[ti];
            let mu = &patterns[mi];
            for i in 0..2 {
                if a[i].abs() < 1e-9 {
                    continue;
                }
                if tail.row[i] > 0.0 {
                    assert_eq!(
                        mu.is_on(i),
                        region[i],
                        "trial {}: mu mask differs on effective unit {}",
                        trial,
                        i
                    );
                }
                if tail.row[i] < 0.0 {
                    assert_eq!(
                        tau.is_on(i),
                        region[i],
                        "trial {}: tau mask differs on effective unit {}",
                        trial,
                        i
                    );
                }
            }
        }
    }
}

#[test]
fn leaf_enumeration_matches_composition_formula() {
    // Every enumerated leaf must equal the direct formula composition.
    let mut net = ReluNetwork::fc_tail(&[2, 3, 3, 1]).unwrap();
    init_he_uniform(&mut net, 600);
    let tail = raw_tail(&net);
    let patterns = ActivationPattern::enumerate_all(3);
    let cfg = ExpansionConfig::default();
    let expr = build_minmax(&net, &[patterns.clone(), patterns.clone()], &cfg).unwrap();
    let raw: Vec<Vec<bool>> = patterns.iter().map(bools).collect();
    let (w2, b2) = &tail.hidden[1];
    let (w1, b1) = &tail.hidden[0];
    let mut count = 0usize;
    for (id, affine) in expr.leaves() {
        let (t2, m2) = id.path[0];
        let (t1, m1) = id.path[1];
        let (row1, bias1) = push(&tail.row, tail.bias, w2, b2, &raw[t2], &raw[m2]);
        let (row0, bias0) = push(&row1, bias1, w1, b1, &raw[t1], &raw[m1]);
        assert_eq!(affine.weights, row0);
        assert_eq!(affine.bias, bias0);
        count += 1;
    }
    assert_eq!(count as u128, expr.leaf_count());
}
