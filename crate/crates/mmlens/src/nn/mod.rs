//! Network types and forward evaluation.
//!
//! A [`ReluNetwork`] is a 1-D convolution / max-pool prefix followed by a
//! fully connected tail. Every layer except the terminal affine map is
//! followed by ReLU. One activation along the chain is designated the
//! embedding; everything after it must be affine so the tail can later be
//! rewritten as a Min/Max composition.
//!
//! Activation indexing: activation `0` is the network input, activation
//! `k` is the (post-nonlinearity) output of `layers[k - 1]`.

mod gradcheck;
mod model_io;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use model_io::{
    join_floats, load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT_TAG,
};
pub(crate) use model_io::Lines;
pub use train::{
    accuracy, init_he_uniform, sigmoid_cross_entropy, train, train_with_sampler, BatchSampler,
    EpochStats, ShuffleSampler, TrainConfig, TrainLog,
};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub type Tensor1D = Vec<f64>;

/// 1-D convolution over a multi-channel feature map.
///
/// Kernels are stored row-major as `[filter][in_channel][tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub relu: bool,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, filters: usize, kernel_width: usize, stride: usize) -> Self {
        assert!(in_channels > 0 && filters > 0 && kernel_width > 0 && stride > 0);
        ConvLayer {
            in_channels,
            filters,
            kernel_width,
            stride,
            relu: true,
            kernels: vec![0.0; filters * in_channels * kernel_width],
            bias: vec![0.0; filters],
        }
    }

    pub fn kernel(&self, filter: usize, channel: usize) -> &[f64] {
        let base = (filter * self.in_channels + channel) * self.kernel_width;
        &self.kernels[base..base + self.kernel_width]
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        if in_len < self.kernel_width {
            return Err(Error::InvalidNetwork(format!(
                "conv input length {} shorter than kernel {}",
                in_len, self.kernel_width
            )));
        }
        Ok((in_len - self.kernel_width) / self.stride + 1)
    }
}

/// Per-channel sliding max. Output length is `len - pool + 1` at stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolLayer {
    pub pool: usize,
    pub stride: usize,
}

impl MaxPoolLayer {
    pub fn new(pool: usize, stride: usize) -> Self {
        assert!(pool > 0 && stride > 0);
        MaxPoolLayer { pool, stride }
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        if in_len < self.pool {
            return Err(Error::InvalidNetwork(format!(
                "pool input length {} shorter than window {}",
                in_len, self.pool
            )));
        }
        Ok((in_len - self.pool) / self.stride + 1)
    }
}

impl Default for MaxPoolLayer {
    fn default() -> Self {
        MaxPoolLayer::new(2, 1)
    }
}

/// Dense map `y = W x + b`, optionally followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl AffineLayer {
    pub fn zeros(out: usize, inp: usize, relu: bool) -> Self {
        AffineLayer {
            weights: Mat::zeros(out, inp),
            bias: vec![0.0; out],
            relu,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, relu: bool) -> Self {
        let weights = Mat::from_rows(rows);
        assert_eq!(weights.rows(), bias.len(), "bias length");
        AffineLayer { weights, bias, relu }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Pre-activation `W x + b`.
    pub fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool(MaxPoolLayer),
    Affine(AffineLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MaxPool(_) => "maxpool",
            Layer::Affine(_) => "affine",
        }
    }
}

/// Multi-channel intermediate value, stored channel-major.
///
/// Flattening to a plain vector is the identity on `data`, so affine layers
/// consume conv outputs without a separate flatten step.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Feature {
    pub fn flat(data: Vec<f64>) -> Self {
        Feature {
            channels: 1,
            len: data.len(),
            data,
        }
    }

    pub fn flat_len(&self) -> usize {
        self.channels * self.len
    }
}

/// Feed-forward ReLU network with a designated embedding activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    pub input_len: usize,
    pub layers: Vec<Layer>,
    /// Activation index of the embedding (0 = input).
    pub embedding_index: usize,
    /// Default number of tail ReLU layers to expand.
    pub expansion_depth: usize,
}

/// Weight shapes for the fixed heartbeat-template architecture.
struct EcgArch;

impl EcgArch {
    const CONVS: [(usize, usize); 4] = [(8, 6), (16, 6), (16, 4), (16, 4)]; // (filters, kernel)
    const CONV_STRIDE: usize = 2;
    const FC_WIDTHS: [usize; 4] = [5, 8, 8, 1];
}

impl ReluNetwork {
    pub fn new(input_len: usize, layers: Vec<Layer>, embedding_index: usize) -> Result<Self> {
        let net = ReluNetwork {
            input_len,
            layers,
            embedding_index,
            expansion_depth: 0,
        };
        net.validate()?;
        Ok(net)
    }

    /// Default architecture: four conv+pool stages, then a five-unit
    /// embedding layer and an 8-8-1 tail. Weights are He-uniform from `seed`.
    pub fn ecg_default(input_len: usize, seed: u64) -> Result<Self> {
        let mut layers = Vec::new();
        let mut channels = 1usize;
        let mut len = input_len;
        for (filters, kernel) in EcgArch::CONVS {
            let conv = ConvLayer::zeros(channels, filters, kernel, EcgArch::CONV_STRIDE);
            len = conv.out_len(len)?;
            channels = filters;
            layers.push(Layer::Conv(conv));
            let pool = MaxPoolLayer::default();
            len = pool.out_len(len)?;
            layers.push(Layer::MaxPool(pool));
        }
        let mut width = channels * len;
        for (i, &out) in EcgArch::FC_WIDTHS.iter().enumerate() {
            let relu = i + 1 < EcgArch::FC_WIDTHS.len();
            layers.push(Layer::Affine(AffineLayer::zeros(out, width, relu)));
            width = out;
        }
        let embedding_index = layers.len() - EcgArch::FC_WIDTHS.len() + 1;
        let mut net = ReluNetwork {
            input_len,
            layers,
            embedding_index,
            expansion_depth: 2,
        };
        net.validate()?;
        init_he_uniform(&mut net, seed);
        Ok(net)
    }

    /// Pure fully connected network: `widths[0]` inputs through `widths[n-1]`
    /// outputs, ReLU between, none after the last layer. The embedding is the
    /// input, so the whole network is its own expandable tail.
    pub fn fc_tail(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidNetwork("fc_tail needs >= 2 widths".into()));
        }
        let mut layers = Vec::new();
        for i in 1..widths.len() {
            let relu = i + 1 < widths.len();
            layers.push(Layer::Affine(AffineLayer::zeros(widths[i], widths[i - 1], relu)));
        }
        let net = ReluNetwork {
            input_len: widths[0],
            layers,
            embedding_index: 0,
            expansion_depth: widths.len().saturating_sub(2),
        };
        net.validate()?;
        Ok(net)
    }

    /// Shape (channels, len) of every activation, input first.
    pub fn activation_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut shapes = vec![(1usize, self.input_len)];
        for layer in &self.layers {
            let (c, l) = *shapes.last().expect("nonempty");
            let next = match layer {
                Layer::Conv(conv) => {
                    if c != conv.in_channels {
                        return Err(Error::InvalidNetwork(format!(
                            "conv expects {} channels, got {}",
                            conv.in_channels, c
                        )));
                    }
                    (conv.filters, conv.out_len(l)?)
                }
                Layer::MaxPool(pool) => (c, pool.out_len(l)?),
                Layer::Affine(aff) => {
                    if aff.in_dim() != c * l {
                        return Err(Error::InvalidNetwork(format!(
                            "affine expects width {}, got {}",
                            aff.in_dim(),
                            c * l
                        )));
                    }
                    (1, aff.out_dim())
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork("no layers".into()));
        }
        let shapes = self.activation_shapes()?;
        match self.layers.last() {
            Some(Layer::Affine(aff)) if aff.out_dim() == 1 && !aff.relu => {}
            _ => {
                return Err(Error::InvalidNetwork(
                    "terminal layer must be a scalar affine map without ReLU".into(),
                ))
            }
        }
        if self.embedding_index > self.layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "embedding index {} out of range",
                self.embedding_index
            )));
        }
        for (i, layer) in self.layers.iter().enumerate().skip(self.embedding_index) {
            if !matches!(layer, Layer::Affine(_)) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} after the embedding is {}, expected affine",
                    i,
                    layer.kind()
                )));
            }
        }
        for layer in &self.layers {
            let finite = match layer {
                Layer::Conv(c) => {
                    c.kernels.iter().all(|v| v.is_finite()) && c.bias.iter().all(|v| v.is_finite())
                }
                Layer::MaxPool(_) => true,
                Layer::Affine(a) => {
                    a.weights.data().iter().all(|v| v.is_finite())
                        && a.bias.iter().all(|v| v.is_finite())
                }
            };
            if !finite {
                return Err(Error::NonFiniteData { context: "network weights" });
            }
        }
        let _ = shapes;
        Ok(())
    }

    /// Flattened width of activation `idx`.
    pub fn activation_len(&self, idx: usize) -> Result<usize> {
        let shapes = self.activation_shapes()?;
        shapes
            .get(idx)
            .map(|(c, l)| c * l)
            .ok_or_else(|| Error::InvalidNetwork(format!("activation index {} out of range", idx)))
    }

    /// Affine layers from the embedding to the output.
    pub fn tail_layers(&self) -> Vec<&AffineLayer> {
        self.layers[self.embedding_index..]
            .iter()
            .map(|l| match l {
                Layer::Affine(a) => a,
                _ => unreachable!("validated tail"),
            })
            .collect()
    }

    /// Number of ReLU layers in the tail (every tail layer but the terminal).
    pub fn tail_hidden_count(&self) -> usize {
        self.layers.len() - self.embedding_index - 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_len,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteData { context: "network input" });
        }
        Ok(())
    }

    /// Scalar network output.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut f = Feature::flat(x.to_vec());
        for layer in &self.layers {
            f = apply(layer, &f)?;
        }
        debug_assert_eq!(f.flat_len(), 1);
        Ok(f.data[0])
    }

    /// Post-activation at `idx` (0 = input, flattened).
    pub fn activation_at(&self, x: &[f64], idx: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut f = Feature::flat(x.to_vec());
        if idx > self.layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "activation index {} out of range",
                idx
            )));
        }
        for layer in &self.layers[..idx] {
            f = apply(layer, &f)?;
        }
        Ok(f.data)
    }

    /// Embedding of `x`: the activation at `embedding_index`.
    pub fn embed(&self, x: &[f64]) -> Result<Tensor1D> {
        self.activation_at(x, self.embedding_index)
    }

    /// Runs `layers[idx..]` on a flattened activation.
    pub fn forward_from_activation(&self, idx: usize, v: &[f64]) -> Result<f64> {
        let expected = self.activation_len(idx)?;
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "activation input",
                expected,
                got: v.len(),
            });
        }
        let shapes = self.activation_shapes()?;
        let (c, l) = shapes[idx];
        let mut f = Feature {
            channels: c,
            len: l,
            data: v.to_vec(),
        };
        for layer in &self.layers[idx..] {
            f = apply(layer, &f)?;
        }
        debug_assert_eq!(f.flat_len(), 1);
        Ok(f.data[0])
    }

    /// Forward pass recording every activation, ReLU pattern, and pool choice.
    pub fn forward_with_trace(&self, x: &[f64]) -> Result<ActivationTrace> {
        self.check_input(x)?;
        let mut activations = vec![x.to_vec()];
        let mut shapes = vec![(1usize, self.input_len)];
        let mut relu_patterns: Vec<Option<Vec<bool>>> = Vec::new();
        let mut pool_argmax: Vec<Option<Vec<usize>>> = Vec::new();
        let mut f = Feature::flat(x.to_vec());
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => {
                    let pre = conv_forward(conv, &f)?;
                    let pattern = pre.data.iter().map(|&v| v > 0.0).collect::<Vec<bool>>();
                    f = if conv.relu {
                        Feature {
                            channels: pre.channels,
                            len: pre.len,
                            data: crate::linalg::relu(&pre.data),
                        }
                    } else {
                        pre
                    };
                    relu_patterns.push(if conv.relu { Some(pattern) } else { None });
                    pool_argmax.push(None);
                }
                Layer::MaxPool(pool) => {
                    let (out, argmax) = pool_forward(pool, &f)?;
                    f = out;
                    relu_patterns.push(None);
                    pool_argmax.push(Some(argmax));
                }
                Layer::Affine(aff) => {
                    if aff.in_dim() != f.flat_len() {
                        return Err(Error::DimensionMismatch {
                            context: "affine input",
                            expected: aff.in_dim(),
                            got: f.flat_len(),
                        });
                    }
                    let pre = aff.preactivation(&f.data);
                    let pattern = pre.iter().map(|&v| v > 0.0).collect::<Vec<bool>>();
                    let data = if aff.relu { crate::linalg::relu(&pre) } else { pre };
                    f = Feature::flat(data);
                    relu_patterns.push(if aff.relu { Some(pattern) } else { None });
                    pool_argmax.push(None);
                }
            }
            activations.push(f.data.clone());
            shapes.push((f.channels, f.len));
        }
        Ok(ActivationTrace {
            activations,
            shapes,
            relu_patterns,
            pool_argmax,
        })
    }
}

/// Activations and linear-piece selections from one forward pass.
///
/// `activations[k]` is activation `k` (post-nonlinearity, flattened);
/// `relu_patterns[i]` / `pool_argmax[i]` describe `layers[i]`.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub activations: Vec<Vec<f64>>,
    pub shapes: Vec<(usize, usize)>,
    pub relu_patterns: Vec<Option<Vec<bool>>>,
    pub pool_argmax: Vec<Option<Vec<usize>>>,
}

impl ActivationTrace {
    pub fn output(&self) -> f64 {
        let last = self.activations.last().expect("nonempty trace");
        debug_assert_eq!(last.len(), 1);
        last[0]
    }

    /// On/off pattern of `layers[layer_idx]`; `None` when it has no ReLU.
    pub fn relu_pattern(&self, layer_idx: usize) -> Option<&[bool]> {
        self.relu_patterns
            .get(layer_idx)
            .and_then(|p| p.as_deref())
    }

    /// Replays the recorded linear piece: affine maps with ReLUs replaced by
    /// pattern masks and pools replaced by their recorded selections.
    /// On the traced input this reproduces the activations exactly.
    pub fn replay_linear_piece(&self, net: &ReluNetwork, x: &[f64]) -> Result<f64> {
        net.check_input(x)?;
        let mut f = Feature::flat(x.to_vec());
        for (i, layer) in net.layers.iter().enumerate() {
            match layer {
                Layer::Conv(conv) => {
                    let pre = conv_forward(conv, &f)?;
                    let mut data = pre.data;
                    if conv.relu {
                        let pattern = self.relu_patterns[i].as_ref().expect("conv pattern");
                        for (v, &on) in data.iter_mut().zip(pattern) {
                            if !on {
                                *v = 0.0;
                            }
                        }
                    }
                    f = Feature {
                        channels: pre.channels,
                        len: pre.len,
                        data,
                    };
                }
                Layer::MaxPool(pool) => {
                    let argmax = self.pool_argmax[i].as_ref().expect("pool argmax");
                    let out_len = pool.out_len(f.len)?;
                    let mut data = vec![0.0; f.channels * out_len];
                    for (o, &src) in data.iter_mut().zip(argmax) {
                        *o = f.data[src];
                    }
                    f = Feature {
                        channels: f.channels,
                        len: out_len,
                        data,
                    };
                }
                Layer::Affine(aff) => {
                    let mut pre = aff.preactivation(&f.data);
                    if aff.relu {
                        let pattern = self.relu_patterns[i].as_ref().expect("affine pattern");
                        for (v, &on) in pre.iter_mut().zip(pattern) {
                            if !on {
                                *v = 0.0;
                            }
                        }
                    }
                    f = Feature::flat(pre);
                }
            }
        }
        Ok(f.data[0])
    }
}

fn apply(layer: &Layer, f: &Feature) -> Result<Feature> {
    match layer {
        Layer::Conv(conv) => {
            let pre = conv_forward(conv, f)?;
            Ok(if conv.relu {
                Feature {
                    channels: pre.channels,
                    len: pre.len,
                    data: crate::linalg::relu(&pre.data),
                }
            } else {
                pre
            })
        }
        Layer::MaxPool(pool) => Ok(pool_forward(pool, f)?.0),
        Layer::Affine(aff) => {
            if aff.in_dim() != f.flat_len() {
                return Err(Error::DimensionMismatch {
                    context: "affine input",
                    expected: aff.in_dim(),
                    got: f.flat_len(),
                });
            }
            let pre = aff.preactivation(&f.data);
            Ok(Feature::flat(if aff.relu {
                crate::linalg::relu(&pre)
            } else {
                pre
            }))
        }
    }
}

/// Pre-activation conv output (no ReLU applied).
fn conv_forward(conv: &ConvLayer, f: &Feature) -> Result<Feature> {
    if f.channels != conv.in_channels {
        return Err(Error::DimensionMismatch {
            context: "conv channels",
            expected: conv.in_channels,
            got: f.channels,
        });
    }
    let out_len = conv.out_len(f.len)?;
    let mut data = vec![0.0; conv.filters * out_len];
    for filt in 0..conv.filters {
        for j in 0..out_len {
            let start = j * conv.stride;
            let mut acc = conv.bias[filt];
            for c in 0..conv.in_channels {
                let kernel = conv.kernel(filt, c);
                let inp = &f.data[c * f.len + start..c * f.len + start + conv.kernel_width];
                for (k, x) in kernel.iter().zip(inp) {
                    acc += k * x;
                }
            }
            data[filt * out_len + j] = acc;
        }
    }
    Ok(Feature {
        channels: conv.filters,
        len: out_len,
        data,
    })
}

/// Sliding max per channel. Ties select the lowest input index.
fn pool_forward(pool: &MaxPoolLayer, f: &Feature) -> Result<(Feature, Vec<usize>)> {
    let out_len = pool.out_len(f.len)?;
    let mut data = vec![0.0; f.channels * out_len];
    let mut argmax = vec![0usize; f.channels * out_len];
    for c in 0..f.channels {
        for j in 0..out_len {
            let start = c * f.len + j * pool.stride;
            let mut best = f.data[start];
            let mut best_idx = start;
            for t in 1..pool.pool {
                let v = f.data[start + t];
                if v > best {
                    best = v;
                    best_idx = start + t;
                }
            }
            data[c * out_len + j] = best;
            argmax[c * out_len + j] = best_idx;
        }
    }
    Ok((
        Feature {
            channels: f.channels,
            len: out_len,
            data,
        },
        argmax,
    ))
}
