//! Plain-text serialization of expressions.
//!
//! Level data round-trips bit exactly: floats are written with the shortest
//! representation that parses back to the same value. The node tree is never
//! written; it is reconstructable from the levels.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::linalg::Mat;
use crate::nn::{join_floats, Lines};

use super::{
    ActivationPattern, ExpansionConfig, ExpansionLevel, Lead, MinMaxExpr,
};

pub const EXPR_FORMAT_TAG: &str = "mmlens-expr/1";

pub fn expr_to_string(expr: &MinMaxExpr) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", EXPR_FORMAT_TAG);
    let _ = writeln!(s, "lead {}", expr.lead.name());
    let _ = writeln!(s, "base_index {}", expr.base_activation_index);
    let _ = writeln!(s, "base_width {}", expr.base_width);
    let c = &expr.config;
    let _ = writeln!(s, "grid_points_per_dim {}", c.grid_points_per_dim);
    let _ = writeln!(s, "bound_percentile_low {}", c.bound_percentile_low);
    let _ = writeln!(s, "bound_percentile_high {}", c.bound_percentile_high);
    let _ = writeln!(
        s,
        "include_training_embeddings {}",
        u8::from(c.include_training_embeddings)
    );
    let _ = writeln!(s, "equality_tolerance {}", c.equality_tolerance);
    let _ = writeln!(s, "terminal_bias {}", expr.terminal_bias);
    let _ = writeln!(s, "terminal_weights {}", expr.terminal_weights.len());
    let _ = writeln!(s, "{}", join_floats(&expr.terminal_weights));
    let _ = writeln!(s, "levels {}", expr.levels.len());
    for (i, level) in expr.levels.iter().enumerate() {
        let _ = writeln!(s, "level {}", i);
        let _ = writeln!(s, "layer_index {}", level.layer_index);
        let _ = writeln!(s, "units {}", level.weights.rows());
        let _ = writeln!(s, "inputs {}", level.weights.cols());
        let _ = writeln!(s, "patterns {}", level.patterns.len());
        for p in &level.patterns {
            let _ = writeln!(s, "{}", p.bitstring());
        }
        let _ = writeln!(s, "weights");
        for r in 0..level.weights.rows() {
            let _ = writeln!(s, "{}", join_floats(level.weights.row(r)));
        }
        let _ = writeln!(s, "bias");
        let _ = writeln!(s, "{}", join_floats(&level.bias));
    }
    let _ = writeln!(s, "end");
    s
}

pub fn save_expr(expr: &MinMaxExpr, path: &Path) -> Result<()> {
    expr.validate()?;
    std::fs::write(path, expr_to_string(expr))?;
    Ok(())
}

pub fn load_expr(path: &Path) -> Result<MinMaxExpr> {
    let text = std::fs::read_to_string(path)?;
    expr_from_str(&text, &path.display().to_string())
}

fn keyed_f64(cur: &mut Lines, key: &str) -> Result<f64> {
    let line = cur.next_line()?;
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(k), Some(v), None) if k == key => v
            .parse::<f64>()
            .map_err(|e| cur.err(format!("bad {}: {}", key, e))),
        _ => Err(cur.err(format!("expected '{} <value>', got '{}'", key, line))),
    }
}

fn keyed_word<'a>(cur: &mut Lines<'a>, key: &str) -> Result<&'a str> {
    let line = cur.next_line()?;
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(cur.err(format!("expected '{} <word>', got '{}'", key, line))),
    }
}

pub fn expr_from_str(text: &str, path: &str) -> Result<MinMaxExpr> {
    let mut cur = Lines::new(text, path);
    let header = cur.next_line()?;
    if header != EXPR_FORMAT_TAG {
        return Err(cur.err(format!(
            "unsupported format '{}', expected '{}'",
            header, EXPR_FORMAT_TAG
        )));
    }
    let lead = match keyed_word(&mut cur, "lead")? {
        "min" => Lead::Min,
        "max" => Lead::Max,
        other => return Err(cur.err(format!("unknown lead '{}'", other))),
    };
    let base_activation_index = cur.keyed_usize("base_index")?;
    let base_width = cur.keyed_usize("base_width")?;
    let grid_points_per_dim = cur.keyed_usize("grid_points_per_dim")?;
    let bound_percentile_low = keyed_f64(&mut cur, "bound_percentile_low")?;
    let bound_percentile_high = keyed_f64(&mut cur, "bound_percentile_high")?;
    let include_training_embeddings = match cur.keyed_usize("include_training_embeddings")? {
        0 => false,
        1 => true,
        other => return Err(cur.err(format!("flag must be 0 or 1, got {}", other))),
    };
    let equality_tolerance = keyed_f64(&mut cur, "equality_tolerance")?;
    let terminal_bias = keyed_f64(&mut cur, "terminal_bias")?;
    let n_terminal = cur.keyed_usize("terminal_weights")?;
    let terminal_weights = cur.floats(n_terminal)?;
    let n_levels = cur.keyed_usize("levels")?;
    let mut levels = Vec::with_capacity(n_levels);
    for i in 0..n_levels {
        let idx = cur.keyed_usize("level")?;
        if idx != i {
            return Err(cur.err(format!("expected level {}, got {}", i, idx)));
        }
        let layer_index = cur.keyed_usize("layer_index")?;
        let units = cur.keyed_usize("units")?;
        let inputs = cur.keyed_usize("inputs")?;
        let n_patterns = cur.keyed_usize("patterns")?;
        let mut patterns = Vec::with_capacity(n_patterns);
        for _ in 0..n_patterns {
            let line = cur.next_line()?;
            let p = ActivationPattern::from_bitstring(line)
                .ok_or_else(|| cur.err(format!("bad pattern '{}'", line)))?;
            if p.len() != units {
                return Err(cur.err(format!(
                    "pattern width {} != units {}",
                    p.len(),
                    units
                )));
            }
            patterns.push(p);
        }
        cur.expect("weights")?;
        let mut rows = Vec::with_capacity(units);
        for _ in 0..units {
            rows.push(cur.floats(inputs)?);
        }
        cur.expect("bias")?;
        let bias = cur.floats(units)?;
        levels.push(ExpansionLevel {
            layer_index,
            patterns,
            weights: Mat::from_rows(&rows),
            bias,
        });
    }
    cur.expect("end")?;
    let expr = MinMaxExpr {
        lead,
        base_activation_index,
        base_width,
        terminal_bias,
        terminal_weights,
        levels,
        config: ExpansionConfig {
            grid_points_per_dim,
            bound_percentile_low,
            bound_percentile_high,
            include_training_embeddings,
            equality_tolerance,
            expansion_depth: n_levels,
            lead,
        },
    };
    expr.validate()?;
    Ok(expr)
}
