//! Text serialization of networks (`mmlens-model/1`).
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces weights bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{AffineLayer, ConvLayer, Layer, MaxPoolLayer, ReluNetwork};
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const MODEL_FORMAT_TAG: &str = "mmlens-model/1";

pub fn model_to_string(net: &ReluNetwork) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", MODEL_FORMAT_TAG);
    let _ = writeln!(s, "input_len {}", net.input_len);
    let _ = writeln!(s, "embedding_index {}", net.embedding_index);
    let _ = writeln!(s, "expansion_depth {}", net.expansion_depth);
    let _ = writeln!(s, "layers {}", net.layers.len());
    for layer in &net.layers {
        match layer {
            Layer::Conv(c) => {
                let _ = writeln!(
                    s,
                    "layer conv in_channels {} filters {} kernel {} stride {} relu {}",
                    c.in_channels,
                    c.filters,
                    c.kernel_width,
                    c.stride,
                    u8::from(c.relu)
                );
                let _ = writeln!(s, "kernels");
                let per_filter = c.in_channels * c.kernel_width;
                for f in 0..c.filters {
                    let row = &c.kernels[f * per_filter..(f + 1) * per_filter];
                    let _ = writeln!(s, "{}", join_floats(row));
                }
                let _ = writeln!(s, "bias");
                let _ = writeln!(s, "{}", join_floats(&c.bias));
            }
            Layer::MaxPool(p) => {
                let _ = writeln!(s, "layer maxpool pool {} stride {}", p.pool, p.stride);
            }
            Layer::Affine(a) => {
                let _ = writeln!(
                    s,
                    "layer affine out {} in {} relu {}",
                    a.out_dim(),
                    a.in_dim(),
                    u8::from(a.relu)
                );
                let _ = writeln!(s, "weights");
                for r in 0..a.out_dim() {
                    let _ = writeln!(s, "{}", join_floats(a.weights.row(r)));
                }
                let _ = writeln!(s, "bias");
                let _ = writeln!(s, "{}", join_floats(&a.bias));
            }
        }
    }
    let _ = writeln!(s, "end");
    s
}

pub fn save_model(net: &ReluNetwork, path: &Path) -> Result<()> {
    net.validate()?;
    std::fs::write(path, model_to_string(net))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ReluNetwork> {
    let text = std::fs::read_to_string(path)?;
    model_from_str(&text, &path.display().to_string())
}

pub fn join_floats(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{}", x);
    }
    s
}

/// Line-oriented cursor with positions for error reporting.
pub(crate) struct Lines<'a> {
    path: &'a str,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str, path: &'a str) -> Self {
        Lines {
            path,
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.pos, msg)
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos];
            self.pos += 1;
            if !line.trim().is_empty() {
                return Ok(line.trim());
            }
        }
        Err(Error::parse(self.path, self.lines.len(), "unexpected end of file"))
    }

    /// `key <integer>`
    pub fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let line = self.next_line()?;
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) if k == key => v
                .parse::<usize>()
                .map_err(|e| self.err(format!("bad {}: {}", key, e))),
            _ => Err(self.err(format!("expected '{} <n>', got '{}'", key, line))),
        }
    }

    pub fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.next_line()?;
        if line == word {
            Ok(())
        } else {
            Err(self.err(format!("expected '{}', got '{}'", word, line)))
        }
    }

    pub fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(format!("bad float: {}", e)))?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {} values, got {}", expected, vals.len())));
        }
        Ok(vals)
    }
}

pub fn model_from_str(text: &str, path: &str) -> Result<ReluNetwork> {
    let mut cur = Lines::new(text, path);
    let header = cur.next_line()?;
    if header != MODEL_FORMAT_TAG {
        return Err(cur.err(format!(
            "unsupported format '{}', expected '{}'",
            header, MODEL_FORMAT_TAG
        )));
    }
    let input_len = cur.keyed_usize("input_len")?;
    let embedding_index = cur.keyed_usize("embedding_index")?;
    let expansion_depth = cur.keyed_usize("expansion_depth")?;
    let n_layers = cur.keyed_usize("layers")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let line = cur.next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.first() != Some(&"layer") || toks.len() < 2 {
            return Err(cur.err(format!("expected layer header, got '{}'", line)));
        }
        let fields = |toks: &[&str], key: &str| -> Result<usize> {
            toks.windows(2)
                .find(|w| w[0] == key)
                .map(|w| w[1].parse::<usize>())
                .transpose()
                .map_err(|e| Error::parse(path, 0, format!("bad {}: {}", key, e)))?
                .ok_or_else(|| Error::parse(path, 0, format!("missing field {}", key)))
        };
        match toks[1] {
            "conv" => {
                let in_channels = fields(&toks, "in_channels")?;
                let filters = fields(&toks, "filters")?;
                let kernel = fields(&toks, "kernel")?;
                let stride = fields(&toks, "stride")?;
                let relu = fields(&toks, "relu")? != 0;
                if in_channels == 0 || filters == 0 || kernel == 0 || stride == 0 {
                    return Err(cur.err("conv dimensions must be positive"));
                }
                let mut conv = ConvLayer::zeros(in_channels, filters, kernel, stride);
                conv.relu = relu;
                cur.expect("kernels")?;
                let per_filter = in_channels * kernel;
                for f in 0..filters {
                    let row = cur.floats(per_filter)?;
                    conv.kernels[f * per_filter..(f + 1) * per_filter].copy_from_slice(&row);
                }
                cur.expect("bias")?;
                conv.bias = cur.floats(filters)?;
                layers.push(Layer::Conv(conv));
            }
            "maxpool" => {
                let pool = fields(&toks, "pool")?;
                let stride = fields(&toks, "stride")?;
                if pool == 0 || stride == 0 {
                    return Err(cur.err("pool dimensions must be positive"));
                }
                layers.push(Layer::MaxPool(MaxPoolLayer::new(pool, stride)));
            }
            "affine" => {
                let out = fields(&toks, "out")?;
                let inp = fields(&toks, "in")?;
                let relu = fields(&toks, "relu")? != 0;
                cur.expect("weights")?;
                let mut data = Vec::with_capacity(out * inp);
                for _ in 0..out {
                    data.extend(cur.floats(inp)?);
                }
                cur.expect("bias")?;
                let bias = cur.floats(out)?;
                layers.push(Layer::Affine(AffineLayer {
                    weights: Mat::from_vec(out, inp, data),
                    bias,
                    relu,
                }));
            }
            other => return Err(cur.err(format!("unknown layer kind '{}'", other))),
        }
    }
    cur.expect("end")?;
    let net = ReluNetwork {
        input_len,
        layers,
        embedding_index,
        expansion_depth,
    };
    net.validate()?;
    Ok(net)
}
