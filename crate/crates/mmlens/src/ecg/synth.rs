//! Synthetic single-lead recordings for tests and demos.
//!
//! Beats are sums of Gaussian bumps (P, Q, R, S, T) placed on a wandering
//! baseline with additive noise. The normal class has regular beat spacing
//! and a visible P wave; the other class has irregular spacing, no P wave,
//! and a flattened T. A configurable fraction of recordings is stored upside
//! down to model lead inversion.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use super::{Label, Recording, Template};
use crate::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub recordings: usize,
    pub seconds_per_recording: f64,
    pub sample_rate_hz: f64,
    /// Fraction of recordings labeled normal; the rest are other.
    pub normal_fraction: f64,
    /// Fraction of recordings stored upside down.
    pub inverted_fraction: f64,
    /// Standard deviation of the additive noise, relative to the R bump.
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            recordings: 80,
            seconds_per_recording: 30.0,
            sample_rate_hz: super::TARGET_HZ,
            normal_fraction: 0.5,
            inverted_fraction: 0.3,
            noise_amplitude: 0.1,
            seed: 0,
        }
    }
}

/// (center offset from R in seconds, amplitude, width in seconds)
type Bump = (f64, f64, f64);

const NORMAL_BUMPS: [Bump; 5] = [
    (-0.20, 0.15, 0.040), // P
    (-0.04, -0.12, 0.010),
    (0.00, 1.00, 0.012), // R
    (0.04, -0.20, 0.012),
    (0.30, 0.30, 0.060), // T
];

const OTHER_BUMPS: [Bump; 4] = [
    (-0.04, -0.10, 0.010),
    (0.00, 1.00, 0.014), // broader R, no P
    (0.05, -0.25, 0.014),
    (0.26, 0.12, 0.080), // flat T
];

pub fn synth_recordings(cfg: &SynthConfig) -> Vec<Recording> {
    (0..cfg.recordings)
        .map(|i| synth_one(cfg, i))
        .collect()
}

fn synth_one(cfg: &SynthConfig, index: usize) -> Recording {
    let mut rng =
        ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, "synth").wrapping_add(index as u64));
    // Deterministic label proportion independent of the draws below.
    let label = if ((index as f64) + 0.5) / (cfg.recordings.max(1) as f64) < cfg.normal_fraction {
        Label::Normal
    } else {
        Label::Other
    };
    let hz = cfg.sample_rate_hz;
    let n = (cfg.seconds_per_recording * hz).round() as usize;
    let (base_rr, rr_jitter) = match label {
        Label::Normal => (rng.gen_range(0.70..0.95), rng.gen_range(0.005..0.02)),
        _ => (rng.gen_range(0.55..1.05), rng.gen_range(0.10..0.22)),
    };
    let amp_scale = rng.gen_range(0.8..1.2);
    let wander_amp = rng.gen_range(0.1..0.4);
    let wander_period = rng.gen_range(2.0..5.0);
    let wander_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let inverted = rng.gen_bool(cfg.inverted_fraction.clamp(0.0, 1.0));

    // Beat centers.
    let mut centers = Vec::new();
    let mut t = rng.gen_range(0.4..0.8);
    while t < cfg.seconds_per_recording - 0.4 {
        centers.push(t);
        let gap = base_rr + rr_jitter * rng.sample::<f64, _>(StandardNormal);
        t += gap.max(0.30);
    }

    let bumps: &[Bump] = match label {
        Label::Normal => &NORMAL_BUMPS,
        _ => &OTHER_BUMPS,
    };
    let mut samples = vec![0.0f64; n];
    for (i, s) in samples.iter_mut().enumerate() {
        let ti = i as f64 / hz;
        let mut v =
            wander_amp * (std::f64::consts::TAU * ti / wander_period + wander_phase).sin();
        for &c in &centers {
            let dt = ti - c;
            if dt.abs() > 0.5 {
                continue;
            }
            for &(off, amp, width) in bumps {
                let u = (dt - off) / width;
                if u.abs() < 6.0 {
                    v += amp_scale * amp * (-0.5 * u * u).exp();
                }
            }
        }
        v += cfg.noise_amplitude * rng.sample::<f64, _>(StandardNormal);
        *s = if inverted { -v } else { v };
    }
    Recording {
        id: format!("S{:04}", index),
        label,
        sample_rate_hz: hz,
        samples,
    }
}

/// Standard normal via Box-Muller; avoids a distributions crate for one curve.
struct StandardNormal;

impl rand::distributions::Distribution<f64> for StandardNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Uniform over recordings, then uniform over that recording's templates,
/// so beat-rich recordings are not oversampled.
pub struct TwoStageSampler {
    rng: ChaCha20Rng,
    /// Global template indices grouped by recording, group order preserved.
    groups: Vec<Vec<usize>>,
}

impl TwoStageSampler {
    /// Groups templates by recording id in first-appearance order. Panics
    /// if `templates` is empty.
    pub fn new(templates: &[Template], seed: u64) -> Self {
        assert!(!templates.is_empty(), "no templates to sample");
        let mut order: Vec<&str> = Vec::new();
        let mut by_rec: std::collections::HashMap<&str, Vec<usize>> =
            std::collections::HashMap::new();
        for (i, t) in templates.iter().enumerate() {
            let entry = by_rec.entry(t.recording_id.as_str()).or_default();
            if entry.is_empty() {
                order.push(&t.recording_id);
            }
            entry.push(i);
        }
        let groups = order
            .iter()
            .map(|id| by_rec.remove(id).expect("grouped"))
            .collect();
        TwoStageSampler {
            rng: ChaCha20Rng::seed_from_u64(seed),
            groups,
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// One draw: a global index into the template list passed to `new`.
    pub fn draw(&mut self) -> usize {
        let g = &self.groups[self.rng.gen_range(0..self.groups.len())];
        g[self.rng.gen_range(0..g.len())]
    }

    pub fn draw_many(&mut self, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.draw()).collect()
    }
}
