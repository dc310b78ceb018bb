//! Deterministic SVG rendering of template overlays and the concept
//! hierarchy.
//!
//! Every figure is a plain SVG 1.1 string built with fixed number formats
//! and seeded sampling, so the same inputs always produce byte-identical
//! output. Waveform crowds are drawn as translucent polylines; a panel
//! showing `n` templates draws `min(cap, n)` of them with replacement at a
//! low alpha, which reads as a density plot.

use rayon::prelude::*;

use crate::derive_seed;
use crate::ecg::{Label, Template};
use crate::error::{Error, Result};
use crate::minmax::{FactorId, MinMaxExpr};
use crate::partition::{node_path_string, ConceptNode, Partition, SampleRecord};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

pub const COLOR_POSITIVE: &str = "#1f77b4";
pub const COLOR_NEGATIVE: &str = "#d62728";
pub const COLOR_NEUTRAL: &str = "#888888";

#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySpec {
    /// Per-panel draw cap; a panel never draws more lines than this.
    pub max_draws: usize,
    pub alpha: f64,
    /// Vertical value range every panel maps to its height.
    pub value_range: (f64, f64),
    pub seed: u64,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        OverlaySpec {
            max_draws: 4000,
            alpha: 0.008,
            value_range: (-1.2, 1.2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureLayout {
    pub panel_width: f64,
    pub panel_height: f64,
    pub h_gap: f64,
    pub v_gap: f64,
    pub margin: f64,
    pub label_height: f64,
    /// Tier rows drawn below the root row; deeper tiers are omitted from
    /// the figure (the expression itself is untouched). The default shows
    /// root, min branches, and max branches: three rows.
    pub max_tier_rows: usize,
}

impl Default for FigureLayout {
    fn default() -> Self {
        FigureLayout {
            panel_width: 200.0,
            panel_height: 100.0,
            h_gap: 14.0,
            v_gap: 46.0,
            margin: 24.0,
            label_height: 12.0,
            max_tier_rows: 2,
        }
    }
}

/// Placement and membership of one rendered panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelInfo {
    pub path: String,
    pub tier: usize,
    pub x: f64,
    pub y: f64,
    pub sample_count: usize,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyFigure {
    pub svg: String,
    pub panels: Vec<PanelInfo>,
}

struct Svg {
    body: String,
}

impl Svg {
    fn new() -> Self {
        Svg {
            body: String::new(),
        }
    }

    fn push(&mut self, s: &str) {
        self.body.push_str(s);
        self.body.push('\n');
    }

    fn comment(&mut self, text: &str) {
        // "--" terminates an XML comment early.
        self.push(&format!("<!-- {} -->", text.replace("--", "- -")));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        self.push(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"{:.1}\" fill=\"#333333\">{}</text>",
            x,
            y,
            size,
            escape_text(content)
        ));
    }

    fn finish(self, width: f64, height: f64) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n<rect x=\"0\" y=\"0\" width=\"{:.0}\" height=\"{:.0}\" fill=\"#ffffff\"/>\n{}</svg>\n",
            width, height, width, height, width, height, self.body
        )
    }
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Draws `min(cap, n)` waveforms from `pool` (with replacement) into `svg`
/// at panel position `(px, py)`. Returns the drawn pool indices.
#[allow(clippy::too_many_arguments)]
fn draw_waveform_panel(
    svg: &mut Svg,
    pool: &[(&[f64], &str)],
    px: f64,
    py: f64,
    layout: &FigureLayout,
    spec: &OverlaySpec,
    panel_seed: u64,
) -> Vec<usize> {
    let (w, h) = (layout.panel_width, layout.panel_height);
    svg.push(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"1\"/>",
        px, py, w, h
    ));
    let (lo, hi) = spec.value_range;
    let zero_y = py + (1.0 - (0.0 - lo) / (hi - lo)) * h;
    svg.push(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#eeeeee\" stroke-width=\"1\"/>",
        px, zero_y, px + w, zero_y
    ));
    if pool.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(panel_seed);
    let draws = spec.max_draws.min(pool.len());
    let picked: Vec<usize> = (0..draws).map(|_| rng.gen_range(0..pool.len())).collect();
    let lines: Vec<String> = picked
        .par_iter()
        .map(|&i| {
            let (wave, color) = pool[i];
            let mut points = String::with_capacity(wave.len() * 12);
            let n = wave.len().max(2);
            for (j, &v) in wave.iter().enumerate() {
                let x = px + j as f64 / (n - 1) as f64 * w;
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                let y = py + (1.0 - t) * h;
                if j > 0 {
                    points.push(' ');
                }
                points.push_str(&format!("{:.2},{:.2}", x, y));
            }
            format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\" stroke-opacity=\"{}\"/>",
                points, color, spec.alpha
            )
        })
        .collect();
    for line in lines {
        svg.push(&line);
    }
    picked
}

fn label_color(label: Label) -> &'static str {
    match label {
        Label::Normal => COLOR_POSITIVE,
        Label::Other => COLOR_NEGATIVE,
        _ => COLOR_NEUTRAL,
    }
}

fn output_color(v: f64) -> &'static str {
    if v > 0.0 {
        COLOR_POSITIVE
    } else {
        COLOR_NEGATIVE
    }
}

/// Standalone overlay of a template set, colored by class label.
pub fn render_overlay(templates: &[Template], spec: &OverlaySpec) -> Result<String> {
    if templates.is_empty() {
        return Err(Error::EmptyInput("templates"));
    }
    let layout = FigureLayout {
        panel_width: 360.0,
        panel_height: 180.0,
        ..FigureLayout::default()
    };
    let mut svg = Svg::new();
    let pool: Vec<(&[f64], &str)> = templates
        .iter()
        .map(|t| (t.samples.as_slice(), label_color(t.label)))
        .collect();
    svg.comment(&format!(
        "overlay templates={} draws={}",
        templates.len(),
        spec.max_draws.min(templates.len())
    ));
    let px = layout.margin;
    let py = layout.margin + layout.label_height;
    let picked = draw_waveform_panel(
        &mut svg,
        &pool,
        px,
        py,
        &layout,
        spec,
        derive_seed(spec.seed, "overlay"),
    );
    svg.text(
        px,
        layout.margin,
        10.0,
        &format!("templates n={} drawn={}", templates.len(), picked.len()),
    );
    let width = layout.panel_width + 2.0 * layout.margin;
    let height = layout.panel_height + 2.0 * layout.margin + layout.label_height;
    Ok(svg.finish(width, height))
}

/// Renders the observed hierarchy: the whole dataset at the top, then one
/// row of panels per tier. Within a panel, waveforms are colored by the
/// sign of the model output. Only observed (unpruned) nodes appear.
///
/// Samples must be the slice the partition was built from, in order.
pub fn render_hierarchy(
    expr: &MinMaxExpr,
    partition: &Partition,
    samples: &[SampleRecord],
    spec: &OverlaySpec,
    layout: &FigureLayout,
) -> Result<HierarchyFigure> {
    if samples.len() != partition.rows.len() {
        return Err(Error::DimensionMismatch {
            context: "partition samples",
            expected: partition.rows.len(),
            got: samples.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    // Collect nodes per tier, left to right in child-index order.
    let mut tiers: Vec<Vec<(Vec<usize>, &ConceptNode)>> =
        vec![Vec::new(); partition.tier_count + 1];
    collect_nodes(&partition.root, &mut Vec::new(), &mut tiers);
    let shown = partition.tier_count.min(layout.max_tier_rows);
    tiers.truncate(shown + 1);

    let widest = tiers.iter().map(Vec::len).max().unwrap_or(1);
    let row_w = layout.panel_width + layout.h_gap;
    let row_h = layout.panel_height + layout.v_gap + layout.label_height;
    let width = 2.0 * layout.margin + widest as f64 * row_w - layout.h_gap;
    let height = 2.0 * layout.margin + (shown + 1) as f64 * row_h - layout.v_gap;

    let mut svg = Svg::new();
    svg.comment(&format!(
        "hierarchy tiers={} rows={} samples={} lead={}",
        partition.tier_count,
        shown + 1,
        samples.len(),
        expr.lead.name()
    ));
    let mut panels = Vec::new();
    for (tier, nodes) in tiers.iter().enumerate() {
        let y = layout.margin + tier as f64 * row_h + layout.label_height;
        let row_label = if tier == 0 {
            "all".to_string()
        } else {
            format!("{} branch", expr.tier_op(tier - 1).name())
        };
        svg.text(layout.margin, y - 3.0, 10.0, &row_label);
        for (k, (tier_path, node)) in nodes.iter().enumerate() {
            let x = layout.margin + k as f64 * row_w;
            let path = node_path_string(expr, tier_path);
            let pool: Vec<(&[f64], &str)> = node
                .sample_indices
                .iter()
                .map(|&i| {
                    (
                        samples[i].input.as_slice(),
                        output_color(partition.rows[i].model_output),
                    )
                })
                .collect();
            svg.comment(&format!(
                "panel path={} tier={} samples={}",
                path,
                tier,
                node.n_samples()
            ));
            let picked = draw_waveform_panel(
                &mut svg,
                &pool,
                x,
                y,
                layout,
                spec,
                derive_seed(spec.seed, &path),
            );
            svg.text(
                x,
                y + layout.panel_height + 11.0,
                9.0,
                &format!("{} n={} drawn={}", path, node.n_samples(), picked.len()),
            );
            panels.push(PanelInfo {
                path,
                tier,
                x,
                y,
                sample_count: node.n_samples(),
                sample_ids: node
                    .sample_indices
                    .iter()
                    .map(|&i| partition.rows[i].sample_id.clone())
                    .collect(),
            });
        }
    }
    Ok(HierarchyFigure {
        svg: svg.finish(width, height),
        panels,
    })
}

fn collect_nodes<'a>(
    node: &'a ConceptNode,
    path: &mut Vec<usize>,
    tiers: &mut [Vec<(Vec<usize>, &'a ConceptNode)>],
) {
    tiers[node.tier].push((path.clone(), node));
    for (&child, sub) in &node.children {
        path.push(child);
        collect_nodes(sub, path, tiers);
        path.pop();
    }
}

/// Heat strip of one leaf factor: a colored cell per base coordinate plus
/// the bias, blue for positive weights and red for negative, intensity
/// proportional to magnitude.
pub fn render_factor_heat(expr: &MinMaxExpr, factor: &FactorId) -> Result<String> {
    let affine = expr.leaf_affine(factor);
    let cell = 26.0;
    let margin = 20.0;
    let n = affine.weights.len();
    let width = margin * 2.0 + (n + 1) as f64 * cell;
    let height = margin * 2.0 + cell + 16.0;
    let scale = affine
        .weights
        .iter()
        .chain(std::iter::once(&affine.bias))
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut svg = Svg::new();
    svg.comment(&format!(
        "factor id={} lead={} base_width={}",
        factor,
        expr.lead.name(),
        n
    ));
    let mut values: Vec<(String, f64)> = affine
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (format!("w{}", i), w))
        .collect();
    values.push(("b".to_string(), affine.bias));
    for (i, (name, v)) in values.iter().enumerate() {
        let x = margin + i as f64 * cell;
        let t = if scale > 0.0 { v.abs() / scale } else { 0.0 };
        let color = heat_color(*v, t);
        svg.push(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" stroke=\"#999999\" stroke-width=\"0.5\"><title>{} = {}</title></rect>",
            x, margin, cell, cell, color, name, v
        ));
        svg.text(x + 4.0, margin + cell + 12.0, 8.0, name);
    }
    Ok(svg.finish(width, height))
}

/// White at zero magnitude toward full blue or red at the extreme.
fn heat_color(value: f64, t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |from: u8, to: u8| -> u8 { (from as f64 + (to as f64 - from as f64) * t) as u8 };
    let (r, g, b) = if value >= 0.0 {
        (lerp(255, 0x1f), lerp(255, 0x77), lerp(255, 0xb4))
    } else {
        (lerp(255, 0xd6), lerp(255, 0x27), lerp(255, 0x28))
    };
    format!("#{:02x}{:02x}{:02x}", r, g, b)
}
