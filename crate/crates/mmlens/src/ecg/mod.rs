//! Heartbeat template extraction from single-lead recordings.
//!
//! A recording becomes a set of fixed-length beat templates: detrend with a
//! 0.6 s moving average, find R peaks on the rectified signal, cut a window
//! of 75 samples before each peak and 141 from the peak on (216 at 300 Hz),
//! then scale each window by its largest magnitude, keeping sign.
//!
//! Peak detection runs on `|x|`, so a recording stored upside down still
//! yields aligned windows; its templates simply come out inverted. Polarity
//! correction (off by default) flips such recordings before extraction.

mod synth;

pub use synth::{synth_recordings, SynthConfig, TwoStageSampler};

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{mad, median};
use crate::nn::Tensor1D;

/// Samples kept before the R peak.
pub const TEMPLATE_PRE: usize = 75;
/// Template length; the peak sits at index [`TEMPLATE_PRE`].
pub const TEMPLATE_LEN: usize = 216;
/// Sampling rate the template geometry assumes.
pub const TARGET_HZ: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Other,
    Afib,
    Noisy,
}

impl Label {
    pub fn from_code(code: &str) -> Option<Label> {
        match code {
            "N" => Some(Label::Normal),
            "O" => Some(Label::Other),
            "A" => Some(Label::Afib),
            "~" => Some(Label::Noisy),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::Normal => "N",
            Label::Other => "O",
            Label::Afib => "A",
            Label::Noisy => "~",
        }
    }

    /// Training target for the binary normal-vs-other task; the remaining
    /// classes are excluded from it.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Normal => Some(1.0),
            Label::Other => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    /// `<recording>_b<k>` for the k-th kept beat.
    pub id: String,
    pub recording_id: String,
    pub label: Label,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakConfig {
    /// Threshold is `median(|x|) + mad_multiplier * mad(|x|)`.
    pub mad_multiplier: f64,
    /// Minimum spacing between accepted peaks, in seconds.
    pub refractory_s: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            mad_multiplier: 4.0,
            refractory_s: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub peak: PeakConfig,
    /// Flip recordings whose detected peaks are predominantly negative.
    pub polarity_correction: bool,
}

/// Per-recording extraction summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepStats {
    pub recording_id: String,
    pub label: Label,
    pub peaks: usize,
    pub templates: usize,
    pub flipped: bool,
}

/// Subtracts a centered 0.6 s moving average, truncated at the edges.
pub fn detrend(x: &[f64], sample_rate_hz: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let w = ((0.6 * sample_rate_hz).round() as usize).max(1);
    let half = w / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            v - mean
        })
        .collect()
}

/// R peak indices on the rectified signal.
///
/// A peak is a local maximum of `|x|` above the robust threshold. Peaks
/// closer than the refractory period resolve to the larger magnitude, the
/// earlier one on ties.
pub fn detect_r_peaks(x: &[f64], sample_rate_hz: f64, cfg: &PeakConfig) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    let a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let threshold = median(&a) + cfg.mad_multiplier * mad(&a);
    let refractory = (cfg.refractory_s * sample_rate_hz).round() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..a.len() - 1 {
        if a[i] <= threshold || a[i] < a[i - 1] || a[i] < a[i + 1] {
            continue;
        }
        match peaks.last() {
            Some(&last) if i - last < refractory => {
                if a[i] > a[last] {
                    *peaks.last_mut().expect("nonempty") = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    peaks
}

/// Scales to unit peak magnitude, preserving sign. All-zero input is left
/// unchanged.
pub fn normalize_peak(t: &mut [f64]) {
    let m = t.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if m > 0.0 {
        for v in t.iter_mut() {
            *v /= m;
        }
    }
}

/// True when the detected peaks are predominantly negative in the detrended
/// signal, i.e. the recording looks upside down.
pub fn polarity_flip_needed(detrended: &[f64], peaks: &[usize]) -> bool {
    if peaks.is_empty() {
        return false;
    }
    let values: Vec<f64> = peaks.iter().map(|&p| detrended[p]).collect();
    median(&values) < 0.0
}

/// Cuts and normalizes a window per peak; peaks too close to either edge
/// are dropped.
pub fn extract_templates(
    recording_id: &str,
    label: Label,
    detrended: &[f64],
    peaks: &[usize],
) -> Vec<Template> {
    let mut out = Vec::new();
    for &p in peaks {
        if p < TEMPLATE_PRE || p + (TEMPLATE_LEN - TEMPLATE_PRE) > detrended.len() {
            continue;
        }
        let mut samples = detrended[p - TEMPLATE_PRE..p + TEMPLATE_LEN - TEMPLATE_PRE].to_vec();
        normalize_peak(&mut samples);
        out.push(Template {
            id: format!("{}_b{}", recording_id, out.len()),
            recording_id: recording_id.to_string(),
            label,
            samples,
        });
    }
    out
}

/// Linear resampling to `to_hz`. Returns the input unchanged when the rates
/// already agree.
pub fn resample_linear(x: &[f64], from_hz: f64, to_hz: f64) -> Vec<f64> {
    if (from_hz - to_hz).abs() < 1e-9 || x.len() < 2 {
        return x.to_vec();
    }
    let out_len = (((x.len() - 1) as f64) * to_hz / from_hz).floor() as usize + 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * from_hz / to_hz;
            let lo = (pos.floor() as usize).min(x.len() - 1);
            let hi = (lo + 1).min(x.len() - 1);
            let frac = pos - lo as f64;
            x[lo] * (1.0 - frac) + x[hi] * frac
        })
        .collect()
}

/// Full per-recording pipeline: resample, detrend, detect, optionally flip,
/// extract.
pub fn process_recording(rec: &Recording, cfg: &PipelineConfig) -> (Vec<Template>, PrepStats) {
    let samples = resample_linear(&rec.samples, rec.sample_rate_hz, TARGET_HZ);
    let mut detrended = detrend(&samples, TARGET_HZ);
    let peaks = detect_r_peaks(&detrended, TARGET_HZ, &cfg.peak);
    let flipped = cfg.polarity_correction && polarity_flip_needed(&detrended, &peaks);
    if flipped {
        for v in detrended.iter_mut() {
            *v = -*v;
        }
    }
    let templates = extract_templates(&rec.id, rec.label, &detrended, &peaks);
    let stats = PrepStats {
        recording_id: rec.id.clone(),
        label: rec.label,
        peaks: peaks.len(),
        templates: templates.len(),
        flipped,
    };
    (templates, stats)
}

/// Processes every recording, preserving input order.
pub fn process_dataset(
    recordings: &[Recording],
    cfg: &PipelineConfig,
) -> (Vec<Template>, Vec<PrepStats>) {
    let per_rec: Vec<(Vec<Template>, PrepStats)> = recordings
        .par_iter()
        .map(|r| process_recording(r, cfg))
        .collect();
    let mut templates = Vec::new();
    let mut stats = Vec::new();
    for (t, s) in per_rec {
        templates.extend(t);
        stats.push(s);
    }
    (templates, stats)
}

/// Keeps Normal and Other recordings; atrial fibrillation and noisy classes
/// are outside the binary task. Returns the kept list and the removed count.
pub fn filter_labels(recordings: Vec<Recording>) -> (Vec<Recording>, usize) {
    let before = recordings.len();
    let kept: Vec<Recording> = recordings
        .into_iter()
        .filter(|r| matches!(r.label, Label::Normal | Label::Other))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Seeded template-level split; the test side gets `round(n * test_fraction)`
/// elements.
pub fn split_train_test(
    templates: Vec<Template>,
    test_fraction: f64,
    seed: u64,
) -> (Vec<Template>, Vec<Template>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..templates.len()).collect();
    indices.shuffle(&mut rng);
    let n_test = (templates.len() as f64 * test_fraction).round() as usize;
    let test_set: std::collections::HashSet<usize> = indices[..n_test].iter().copied().collect();
    let mut train = Vec::with_capacity(templates.len() - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (i, t) in templates.into_iter().enumerate() {
        if test_set.contains(&i) {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    (train, test)
}

/// Inputs and targets for the binary task; unlabeled-for-it classes are
/// skipped.
pub fn to_training_pairs(templates: &[Template]) -> (Vec<Tensor1D>, Vec<f64>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for t in templates {
        if let Some(y) = t.label.target() {
            inputs.push(t.samples.clone());
            targets.push(y);
        }
    }
    (inputs, targets)
}

/// Loads a manifest of `id,label` lines plus one data file per id next to
/// it: `<id>.txt` (one sample per line) or `<id>.bin` (16-bit little-endian
/// integers with the rate in a `<id>.hz` sidecar; `.txt` assumes 300 Hz).
/// Problems are collected per recording and reported together.
pub fn load_recordings(manifest_path: &Path) -> Result<Vec<Recording>> {
    let text = std::fs::read_to_string(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut recordings = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (id, code) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(code), None) if !id.is_empty() => (id, code),
            _ => {
                problems.push(format!(
                    "{}:{}: expected 'id,label', got '{}'",
                    manifest_path.display(),
                    lineno + 1,
                    line
                ));
                continue;
            }
        };
        let Some(label) = Label::from_code(code) else {
            problems.push(format!("{}: unknown label '{}'", id, code));
            continue;
        };
        if !seen.insert(id.to_string()) {
            problems.push(format!("{}: duplicate id", id));
            continue;
        }
        match load_signal(dir, id) {
            Ok((samples, hz)) => recordings.push(Recording {
                id: id.to_string(),
                label,
                sample_rate_hz: hz,
                samples,
            }),
            Err(msg) => problems.push(format!("{}: {}", id, msg)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::LoadErrors(problems));
    }
    if recordings.is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }
    Ok(recordings)
}

fn load_signal(dir: &Path, id: &str) -> std::result::Result<(Vec<f64>, f64), String> {
    let txt = dir.join(format!("{}.txt", id));
    if txt.is_file() {
        let text = std::fs::read_to_string(&txt).map_err(|e| e.to_string())?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| format!("{}:{}: {}", txt.display(), lineno + 1, e))?;
            if !v.is_finite() {
                return Err(format!("{}:{}: non-finite sample", txt.display(), lineno + 1));
            }
            samples.push(v);
        }
        if samples.is_empty() {
            return Err(format!("{}: no samples", txt.display()));
        }
        return Ok((samples, TARGET_HZ));
    }
    let bin = dir.join(format!("{}.bin", id));
    if bin.is_file() {
        let bytes = std::fs::read(&bin).map_err(|e| e.to_string())?;
        if bytes.len() % 2 != 0 {
            return Err(format!("{}: odd byte count", bin.display()));
        }
        if bytes.is_empty() {
            return Err(format!("{}: no samples", bin.display()));
        }
        let samples: Vec<f64> = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect();
        let hz_path = dir.join(format!("{}.hz", id));
        let hz_text = std::fs::read_to_string(&hz_path)
            .map_err(|_| format!("{}: missing rate sidecar", hz_path.display()))?;
        let hz: f64 = hz_text
            .trim()
            .parse()
            .map_err(|e| format!("{}: {}", hz_path.display(), e))?;
        if !(hz.is_finite() && hz > 0.0) {
            return Err(format!("{}: bad rate {}", hz_path.display(), hz));
        }
        return Ok((samples, hz));
    }
    Err(format!("no {}.txt or {}.bin in {}", id, id, dir.display()))
}

/// Writes templates as TSV: id, label code, then one column per sample.
pub fn write_templates(path: &Path, templates: &[Template]) -> Result<()> {
    use std::fmt::Write as _;
    let mut s = String::new();
    for t in templates {
        let _ = write!(s, "{}\t{}", t.id, t.label.code());
        for v in &t.samples {
            let _ = write!(s, "\t{}", v);
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads templates written by [`write_templates`]. Values round-trip bit
/// exactly. The recording id is recovered from the template id.
pub fn read_templates(path: &Path) -> Result<Vec<Template>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(&name, lineno + 1, "missing id"))?;
        let code = parts
            .next()
            .ok_or_else(|| Error::parse(&name, lineno + 1, "missing label"))?;
        let label = Label::from_code(code)
            .ok_or_else(|| Error::parse(&name, lineno + 1, format!("unknown label '{}'", code)))?;
        let samples: Vec<f64> = parts
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(&name, lineno + 1, format!("bad sample: {}", e)))?;
        if samples.len() != TEMPLATE_LEN {
            return Err(Error::parse(
                &name,
                lineno + 1,
                format!("expected {} samples, got {}", TEMPLATE_LEN, samples.len()),
            ));
        }
        let recording_id = id.rfind("_b").map(|i| &id[..i]).unwrap_or(id).to_string();
        out.push(Template {
            id: id.to_string(),
            recording_id,
            label,
            samples,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_codes_roundtrip() {
        for code in ["N", "O", "A", "~"] {
            assert_eq!(Label::from_code(code).unwrap().code(), code);
        }
        assert!(Label::from_code("X").is_none());
        assert_eq!(Label::Normal.target(), Some(1.0));
        assert_eq!(Label::Other.target(), Some(0.0));
        assert_eq!(Label::Afib.target(), None);
        assert_eq!(Label::Noisy.target(), None);
    }

    #[test]
    fn detrend_removes_slow_drift() {
        let n = 3000;
        let x: Vec<f64> = (0..n)
            .map(|i| 0.5 + 0.3 * (i as f64 / n as f64) + (i as f64 * 0.9).sin() * 0.01)
            .collect();
        let y = detrend(&x, TARGET_HZ);
        // Away from the edges the trend is gone; only the fast ripple stays.
        for v in &y[200..n - 200] {
            assert!(v.abs() < 0.05, "residual {}", v);
        }
    }

    #[test]
    fn detrend_keeps_fast_spikes() {
        let mut x = vec![0.0; 900];
        x[450] = 1.0;
        let y = detrend(&x, TARGET_HZ);
        assert!(y[450] > 0.9);
    }

    /// Spikes on a small deterministic ripple; the ripple keeps the MAD
    /// threshold meaningful, as any physiological baseline would.
    #[test]
    fn filter_keeps_binary_classes_only() {
        let recordings: Vec<Recording> = [Label::Normal, Label::Afib, Label::Other, Label::Noisy]
            .iter()
            .enumerate()
            .map(|(i, &label)| Recording {
                id: format!("r{}", i),
                label,
                sample_rate_hz: TARGET_HZ,
                samples: vec![0.0; 10],
            })
            .collect();
        let (kept, removed) = filter_labels(recordings);
        assert_eq!(removed, 2);
        let labels: Vec<Label> = kept.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![Label::Normal, Label::Other]);
        let (none, gone) = filter_labels(vec![Recording {
            id: "a".into(),
            label: Label::Afib,
            sample_rate_hz: TARGET_HZ,
            samples: vec![0.0; 10],
        }]);
        assert!(none.is_empty());
        assert_eq!(gone, 1);
    }

    fn spike_train(positions: &[usize], len: usize, amp: f64) -> Vec<f64> {
        let mut x: Vec<f64> = (0..len).map(|i| 0.05 * (i as f64 * 0.9).sin()).collect();
        for &p in positions {
            x[p] += amp;
            if p > 0 {
                x[p - 1] += amp * 0.4;
            }
            if p + 1 < len {
                x[p + 1] += amp * 0.4;
            }
        }
        x
    }

    #[test]
    fn peaks_found_at_spikes() {
        let positions = [300usize, 540, 800, 1100, 1400];
        let x = spike_train(&positions, 1800, 1.0);
        let peaks = detect_r_peaks(&x, TARGET_HZ, &PeakConfig::default());
        assert_eq!(peaks, positions.to_vec());
    }

    #[test]
    fn negative_spikes_are_found_via_rectification() {
        let positions = [300usize, 700, 1100];
        let x: Vec<f64> = spike_train(&positions, 1500, -1.0);
        let peaks = detect_r_peaks(&x, TARGET_HZ, &PeakConfig::default());
        assert_eq!(peaks, positions.to_vec());
        assert!(polarity_flip_needed(&x, &peaks));
    }

    #[test]
    fn refractory_keeps_larger_peak() {
        let mut x = vec![0.0; 900];
        x[400] = 0.8;
        x[420] = 1.0; // within 0.2 s (60 samples) of the first
        x[700] = 0.9;
        let peaks = detect_r_peaks(&x, TARGET_HZ, &PeakConfig::default());
        assert_eq!(peaks, vec![420, 700]);
    }

    #[test]
    fn templates_are_aligned_and_normalized() {
        let positions = [300usize, 700, 1100];
        let x = spike_train(&positions, 1500, 2.5);
        let peaks = detect_r_peaks(&x, TARGET_HZ, &PeakConfig::default());
        let templates = extract_templates("r1", Label::Normal, &x, &peaks);
        assert_eq!(templates.len(), 3);
        for (k, t) in templates.iter().enumerate() {
            assert_eq!(t.id, format!("r1_b{}", k));
            assert_eq!(t.recording_id, "r1");
            assert_eq!(t.samples.len(), TEMPLATE_LEN);
            assert_eq!(t.samples[TEMPLATE_PRE], 1.0);
        }
    }

    #[test]
    fn edge_peaks_are_dropped() {
        let positions = [30usize, 700, 1460];
        let x = spike_train(&positions, 1500, 1.0);
        let templates = extract_templates("r1", Label::Other, &x, &positions);
        assert_eq!(templates.len(), 1);
    }

    #[test]
    fn inverted_recording_gives_inverted_templates_without_correction() {
        let positions = [300usize, 700, 1100];
        let rec = Recording {
            id: "inv".into(),
            label: Label::Normal,
            sample_rate_hz: TARGET_HZ,
            samples: spike_train(&positions, 1500, -1.0),
        };
        let (templates, stats) = process_recording(&rec, &PipelineConfig::default());
        assert!(!stats.flipped);
        assert!(templates.iter().all(|t| t.samples[TEMPLATE_PRE] == -1.0));

        let cfg = PipelineConfig {
            polarity_correction: true,
            ..PipelineConfig::default()
        };
        let (templates, stats) = process_recording(&rec, &cfg);
        assert!(stats.flipped);
        assert!(templates.iter().all(|t| t.samples[TEMPLATE_PRE] == 1.0));
    }

    #[test]
    fn split_is_seeded_and_sized() {
        let templates: Vec<Template> = (0..100)
            .map(|i| Template {
                id: format!("r_b{}", i),
                recording_id: "r".into(),
                label: Label::Normal,
                samples: vec![0.0; TEMPLATE_LEN],
            })
            .collect();
        let (train_a, test_a) = split_train_test(templates.clone(), 0.2, 5);
        let (train_b, test_b) = split_train_test(templates.clone(), 0.2, 5);
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(test_a.len(), 20);
        assert_eq!(train_a.len(), 80);
        let (_, test_c) = split_train_test(templates, 0.2, 6);
        assert_ne!(test_a, test_c);
    }

    #[test]
    fn resample_halves_and_keeps_endpoints() {
        let x: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let y = resample_linear(&x, 600.0, 300.0);
        assert_eq!(y, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn template_tsv_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.tsv");
        let templates: Vec<Template> = (0..5)
            .map(|i| Template {
                id: format!("rec7_b{}", i),
                recording_id: "rec7".into(),
                label: if i % 2 == 0 { Label::Normal } else { Label::Other },
                samples: (0..TEMPLATE_LEN)
                    .map(|j| ((i * 31 + j) as f64 * 0.717).sin() / 3.0)
                    .collect(),
            })
            .collect();
        write_templates(&path, &templates).unwrap();
        let back = read_templates(&path).unwrap();
        assert_eq!(back, templates);
    }

    #[test]
    fn loader_reports_all_problems() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.txt"), "0.1\n0.5\n-0.2\n").unwrap();
        std::fs::write(dir.path().join("bad.txt"), "0.1\nnot-a-number\n").unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "ok,N\nbad,O\nmissing,N\nok2,Z\n").unwrap();
        let err = load_recordings(&manifest).unwrap_err();
        let Error::LoadErrors(problems) = err else {
            panic!("expected itemized load errors, got {}", err);
        };
        assert_eq!(problems.len(), 3);
        assert!(problems[0].starts_with("bad:"));
        assert!(problems[1].starts_with("missing:"));
        assert!(problems[2].contains("unknown label"));
    }

    #[test]
    fn loader_reads_txt_and_bin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "1.5\n-2.25\n3.0\n").unwrap();
        let vals: [i16; 4] = [100, -200, 300, -400];
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.path().join("b.bin"), bytes).unwrap();
        std::fs::write(dir.path().join("b.hz"), "250\n").unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "a,N\nb,O\n").unwrap();
        let recs = load_recordings(&manifest).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].samples, vec![1.5, -2.25, 3.0]);
        assert_eq!(recs[0].sample_rate_hz, TARGET_HZ);
        assert_eq!(recs[1].samples, vec![100.0, -200.0, 300.0, -400.0]);
        assert_eq!(recs[1].sample_rate_hz, 250.0);
    }

    #[test]
    fn training_pairs_skip_unlabeled_classes() {
        let make = |label| Template {
            id: "x_b0".into(),
            recording_id: "x".into(),
            label,
            samples: vec![0.0; TEMPLATE_LEN],
        };
        let templates = vec![
            make(Label::Normal),
            make(Label::Afib),
            make(Label::Other),
            make(Label::Noisy),
        ];
        let (inputs, targets) = to_training_pairs(&templates);
        assert_eq!(inputs.len(), 2);
        assert_eq!(targets, vec![1.0, 0.0]);
    }
}
