//! Seeded initialization and Adam training with sigmoid cross-entropy.
//!
//! Training is deterministic for a fixed `rng_seed`: initialization, batch
//! order, and the gradient reduction order are all fixed. Per-sample
//! gradients inside a batch are computed in parallel but summed in index
//! order.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::{Feature, Layer, ReluNetwork, Tensor1D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 80,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

/// Produces the sample order for one pass over a dataset of size `n`.
pub trait BatchSampler {
    fn epoch_indices(&mut self, n: usize) -> Vec<usize>;
}

/// Seeded permutation per epoch; the default sampler.
pub struct ShuffleSampler {
    rng: ChaCha20Rng,
}

impl ShuffleSampler {
    pub fn new(seed: u64) -> Self {
        ShuffleSampler {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }
}

impl BatchSampler for ShuffleSampler {
    fn epoch_indices(&mut self, n: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        idx
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable loss on a raw logit; returns `(loss, dloss/dlogit)`.
pub fn sigmoid_cross_entropy(logit: f64, target: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - target)
}

/// Uniform init scaled by fan-in: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
/// Biases are zeroed. Draw order is fixed, so a seed pins every weight.
pub fn init_he_uniform(net: &mut ReluNetwork, seed: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for layer in &mut net.layers {
        match layer {
            Layer::Conv(conv) => {
                let fan_in = (conv.in_channels * conv.kernel_width) as f64;
                let limit = (6.0 / fan_in).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                for w in conv.kernels.iter_mut() {
                    *w = dist.sample(&mut rng);
                }
                conv.bias.iter_mut().for_each(|b| *b = 0.0);
            }
            Layer::MaxPool(_) => {}
            Layer::Affine(aff) => {
                let fan_in = aff.in_dim() as f64;
                let limit = (6.0 / fan_in).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                for w in aff.weights.data_mut().iter_mut() {
                    *w = dist.sample(&mut rng);
                }
                aff.bias.iter_mut().for_each(|b| *b = 0.0);
            }
        }
    }
}

/// Fraction of samples whose logit sign matches the target.
pub fn accuracy(net: &ReluNetwork, inputs: &[Tensor1D], targets: &[f64]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("accuracy inputs"));
    }
    let hits: usize = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(x, &t)| {
            let y = net.forward(x)?;
            Ok(usize::from((y > 0.0) == (t > 0.5)))
        })
        .collect::<Result<Vec<usize>>>()?
        .iter()
        .sum();
    Ok(hits as f64 / inputs.len() as f64)
}

/// Initializes from `cfg.rng_seed` and runs Adam with shuffled minibatches.
pub fn train(
    net: &ReluNetwork,
    inputs: &[Tensor1D],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, TrainLog)> {
    let mut sampler = ShuffleSampler::new(crate::derive_seed(cfg.rng_seed, "batches"));
    train_with_sampler(net, inputs, targets, cfg, &mut sampler)
}

/// As [`train`], with a caller-supplied sample-order source.
pub fn train_with_sampler(
    net: &ReluNetwork,
    inputs: &[Tensor1D],
    targets: &[f64],
    cfg: &TrainConfig,
    sampler: &mut dyn BatchSampler,
) -> Result<(ReluNetwork, TrainLog)> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("training inputs"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "training targets",
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    for x in inputs {
        if x.len() != net.input_len {
            return Err(Error::DimensionMismatch {
                context: "training input",
                expected: net.input_len,
                got: x.len(),
            });
        }
    }
    net.validate()?;

    let mut trained = net.clone();
    init_he_uniform(&mut trained, crate::derive_seed(cfg.rng_seed, "init"));

    let mut adam = AdamState::new(&trained, cfg);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order = sampler.epoch_indices(inputs.len());
        let mut loss_sum = 0.0;
        let mut hit_sum = 0usize;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample: Vec<(GradBuffer, f64, bool)> = chunk
                .par_iter()
                .map(|&i| {
                    let cache = forward_cached(&trained, &inputs[i]);
                    let (loss, dlogit) = sigmoid_cross_entropy(cache.output, targets[i]);
                    let hit = (cache.output > 0.0) == (targets[i] > 0.5);
                    let grads = backward(&trained, &cache, dlogit);
                    (grads, loss, hit)
                })
                .collect();

            let mut batch_grads = GradBuffer::zeros(&trained);
            let mut batch_loss = 0.0;
            for (g, loss, hit) in &per_sample {
                batch_grads.add(g);
                batch_loss += loss;
                hit_sum += usize::from(*hit);
            }
            let scale = 1.0 / chunk.len() as f64;
            batch_grads.scale(scale);
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            loss_sum += batch_loss * chunk.len() as f64;
            seen += chunk.len();
            adam.step(&mut trained, &batch_grads);
        }
        log.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / seen as f64,
            train_accuracy: hit_sum as f64 / seen as f64,
        });
    }
    Ok((trained, log))
}

/// Per-layer gradient storage mirroring the parameter layout.
#[derive(Debug, Clone)]
pub(super) enum LayerGrad {
    Conv { kernels: Vec<f64>, bias: Vec<f64> },
    None,
    Affine { weights: Vec<f64>, bias: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(super) struct GradBuffer {
    pub layers: Vec<LayerGrad>,
}

impl GradBuffer {
    pub(super) fn zeros(net: &ReluNetwork) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => LayerGrad::Conv {
                    kernels: vec![0.0; c.kernels.len()],
                    bias: vec![0.0; c.bias.len()],
                },
                Layer::MaxPool(_) => LayerGrad::None,
                Layer::Affine(a) => LayerGrad::Affine {
                    weights: vec![0.0; a.weights.data().len()],
                    bias: vec![0.0; a.bias.len()],
                },
            })
            .collect();
        GradBuffer { layers }
    }

    fn add(&mut self, other: &GradBuffer) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (
                    LayerGrad::Conv { kernels, bias },
                    LayerGrad::Conv {
                        kernels: k2,
                        bias: b2,
                    },
                ) => {
                    kernels.iter_mut().zip(k2).for_each(|(x, y)| *x += y);
                    bias.iter_mut().zip(b2).for_each(|(x, y)| *x += y);
                }
                (
                    LayerGrad::Affine { weights, bias },
                    LayerGrad::Affine {
                        weights: w2,
                        bias: b2,
                    },
                ) => {
                    weights.iter_mut().zip(w2).for_each(|(x, y)| *x += y);
                    bias.iter_mut().zip(b2).for_each(|(x, y)| *x += y);
                }
                (LayerGrad::None, LayerGrad::None) => {}
                _ => unreachable!("mismatched grad layout"),
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            match layer {
                LayerGrad::Conv { kernels, bias } => {
                    kernels.iter_mut().for_each(|x| *x *= s);
                    bias.iter_mut().for_each(|x| *x *= s);
                }
                LayerGrad::Affine { weights, bias } => {
                    weights.iter_mut().for_each(|x| *x *= s);
                    bias.iter_mut().for_each(|x| *x *= s);
                }
                LayerGrad::None => {}
            }
        }
    }

    /// Gradients flattened in the canonical parameter order.
    pub(super) fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerGrad::Conv { kernels, bias } => {
                    out.extend_from_slice(kernels);
                    out.extend_from_slice(bias);
                }
                LayerGrad::Affine { weights, bias } => {
                    out.extend_from_slice(weights);
                    out.extend_from_slice(bias);
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

pub(super) struct ForwardCache {
    /// Input feature of each layer (`inputs[i]` feeds `layers[i]`).
    pub inputs: Vec<Feature>,
    /// Pre-activation of conv/affine layers.
    pub pres: Vec<Option<Vec<f64>>>,
    /// Absolute winning input index per pool output element.
    pub argmax: Vec<Option<Vec<usize>>>,
    pub output: f64,
}

pub(super) fn forward_cached(net: &ReluNetwork, x: &[f64]) -> ForwardCache {
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pres = Vec::with_capacity(net.layers.len());
    let mut argmax = Vec::with_capacity(net.layers.len());
    let mut f = Feature::flat(x.to_vec());
    for layer in &net.layers {
        inputs.push(f.clone());
        match layer {
            Layer::Conv(conv) => {
                let pre = super::conv_forward(conv, &f).expect("validated shapes");
                let data = if conv.relu {
                    crate::linalg::relu(&pre.data)
                } else {
                    pre.data.clone()
                };
                f = Feature {
                    channels: pre.channels,
                    len: pre.len,
                    data,
                };
                pres.push(Some(pre.data));
                argmax.push(None);
            }
            Layer::MaxPool(pool) => {
                let (out, am) = super::pool_forward(pool, &f).expect("validated shapes");
                f = out;
                pres.push(None);
                argmax.push(Some(am));
            }
            Layer::Affine(aff) => {
                let pre = aff.preactivation(&f.data);
                let data = if aff.relu {
                    crate::linalg::relu(&pre)
                } else {
                    pre.clone()
                };
                f = Feature::flat(data);
                pres.push(Some(pre));
                argmax.push(None);
            }
        }
    }
    ForwardCache {
        inputs,
        pres,
        argmax,
        output: f.data[0],
    }
}

/// Backpropagates `dloss/dlogit` through the cached forward pass.
pub(super) fn backward(net: &ReluNetwork, cache: &ForwardCache, dlogit: f64) -> GradBuffer {
    let mut grads = GradBuffer::zeros(net);
    let mut g_out = vec![dlogit];
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let input = &cache.inputs[i];
        match layer {
            Layer::Conv(conv) => {
                let pre = cache.pres[i].as_ref().expect("conv pre");
                let mut g_pre = g_out;
                if conv.relu {
                    for (g, p) in g_pre.iter_mut().zip(pre) {
                        if *p <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                let out_len = pre.len() / conv.filters;
                let (gk, gb) = match &mut grads.layers[i] {
                    LayerGrad::Conv { kernels, bias } => (kernels, bias),
                    _ => unreachable!(),
                };
                let mut g_in = vec![0.0; input.data.len()];
                for filt in 0..conv.filters {
                    for j in 0..out_len {
                        let g = g_pre[filt * out_len + j];
                        if g == 0.0 {
                            continue;
                        }
                        gb[filt] += g;
                        let start = j * conv.stride;
                        for c in 0..conv.in_channels {
                            let kbase = (filt * conv.in_channels + c) * conv.kernel_width;
                            let ibase = c * input.len + start;
                            for t in 0..conv.kernel_width {
                                gk[kbase + t] += g * input.data[ibase + t];
                                g_in[ibase + t] += g * conv.kernels[kbase + t];
                            }
                        }
                    }
                }
                g_out = g_in;
            }
            Layer::MaxPool(_) => {
                let am = cache.argmax[i].as_ref().expect("pool argmax");
                let mut g_in = vec![0.0; input.data.len()];
                for (g, &src) in g_out.iter().zip(am) {
                    g_in[src] += g;
                }
                g_out = g_in;
            }
            Layer::Affine(aff) => {
                let pre = cache.pres[i].as_ref().expect("affine pre");
                let mut g_pre = g_out;
                if aff.relu {
                    for (g, p) in g_pre.iter_mut().zip(pre) {
                        if *p <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                let (gw, gb) = match &mut grads.layers[i] {
                    LayerGrad::Affine { weights, bias } => (weights, bias),
                    _ => unreachable!(),
                };
                let in_dim = aff.in_dim();
                for r in 0..aff.out_dim() {
                    let g = g_pre[r];
                    gb[r] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..in_dim {
                        gw[r * in_dim + c] += g * input.data[c];
                    }
                }
                g_out = aff.weights.vecmat(&g_pre);
            }
        }
    }
    grads
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    fn new(net: &ReluNetwork, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = param_tensors(net).iter().map(|t| t.len()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn step(&mut self, net: &mut ReluNetwork, grads: &GradBuffer) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut grad_tensors: Vec<&[f64]> = Vec::new();
        for layer in &grads.layers {
            match layer {
                LayerGrad::Conv { kernels, bias } => {
                    grad_tensors.push(kernels);
                    grad_tensors.push(bias);
                }
                LayerGrad::Affine { weights, bias } => {
                    grad_tensors.push(weights);
                    grad_tensors.push(bias);
                }
                LayerGrad::None => {}
            }
        }
        let mut params = param_tensors_mut(net);
        debug_assert_eq!(params.len(), grad_tensors.len());
        for ((tensor, g), (m, v)) in params
            .iter_mut()
            .zip(&grad_tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..tensor.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

fn param_tensors(net: &ReluNetwork) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::Conv(c) => {
                out.push(c.kernels.as_slice());
                out.push(c.bias.as_slice());
            }
            Layer::Affine(a) => {
                out.push(a.weights.data());
                out.push(a.bias.as_slice());
            }
            Layer::MaxPool(_) => {}
        }
    }
    out
}

fn param_tensors_mut(net: &mut ReluNetwork) -> Vec<&mut [f64]> {
    let mut out = Vec::new();
    for layer in &mut net.layers {
        match layer {
            Layer::Conv(c) => {
                out.push(c.kernels.as_mut_slice());
                out.push(c.bias.as_mut_slice());
            }
            Layer::Affine(a) => {
                out.push(a.weights.data_mut());
                out.push(a.bias.as_mut_slice());
            }
            Layer::MaxPool(_) => {}
        }
    }
    out
}

/// Total number of trainable parameters.
pub(super) fn param_count(net: &ReluNetwork) -> usize {
    param_tensors(net).iter().map(|t| t.len()).sum()
}

pub(super) fn get_param(net: &ReluNetwork, idx: usize) -> f64 {
    let mut i = idx;
    for t in param_tensors(net) {
        if i < t.len() {
            return t[i];
        }
        i -= t.len();
    }
    panic!("parameter index out of range");
}

pub(super) fn set_param(net: &mut ReluNetwork, idx: usize, value: f64) {
    let mut i = idx;
    for t in param_tensors_mut(net) {
        if i < t.len() {
            t[i] = value;
            return;
        }
        i -= t.len();
    }
    panic!("parameter index out of range");
}
