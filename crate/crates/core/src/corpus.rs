//! Synthetic speech-like corpus: voiced pulse-shaped harmonic complexes with
//! pitch drift, high-passed noise for unvoiced segments, and near-silence.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conceal::classify_frame;
use crate::toycodec::{frames_from_signal, FrameSignal, FRAME_LEN, SAMPLE_RATE};
use crate::vq::FrameClass;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("label line {line}: {reason}")]
    LabelFormat { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seconds: f64,
    pub voiced_fraction: f64,
    pub unvoiced_fraction: f64,
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Relative pitch change over one voiced segment, drawn from ±this.
    pub pitch_drift: f64,
    /// Harmonics above this frequency are not generated.
    pub max_harmonic_hz: f64,
    /// Harmonic amplitudes fall as `h^-t` with `t` drawn from `1 ± tilt_spread`.
    pub tilt_spread: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seconds: 120.0,
            voiced_fraction: 0.55,
            unvoiced_fraction: 0.2,
            min_segment_frames: 15,
            max_segment_frames: 40,
            f0_min_hz: 90.0,
            f0_max_hz: 150.0,
            pitch_drift: 0.1,
            max_harmonic_hz: 700.0,
            tilt_spread: 0.2,
        }
    }
}

impl CorpusConfig {
    pub fn silence_fraction(&self) -> f64 {
        1.0 - self.voiced_fraction - self.unvoiced_fraction
    }

    pub fn frames(&self) -> usize {
        (self.seconds * SAMPLE_RATE as f64 / FRAME_LEN as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(CorpusError::InvalidParam { name, reason: reason.into() });
        if !(self.seconds.is_finite() && self.seconds > 0.0) {
            return bad("seconds", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.voiced_fraction)
            || !(0.0..=1.0).contains(&self.unvoiced_fraction)
            || self.silence_fraction() < -1e-12
        {
            return bad("voiced_fraction", "class fractions must lie in [0, 1] and sum to at most 1");
        }
        if self.min_segment_frames == 0 || self.min_segment_frames > self.max_segment_frames {
            return bad("min_segment_frames", "need 1 <= min <= max");
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz <= self.f0_max_hz && self.f0_max_hz < self.max_harmonic_hz) {
            return bad("f0_min_hz", "need 0 < f0_min <= f0_max < max_harmonic_hz");
        }
        if !(0.0..1.0).contains(&self.pitch_drift) {
            return bad("pitch_drift", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.tilt_spread) {
            return bad("tilt_spread", "must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Generated audio and the class each segment was synthesized as.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<f64>,
    pub generated: Vec<FrameClass>,
}

impl Corpus {
    pub fn frames(&self) -> Vec<FrameSignal> {
        frames_from_signal(&self.samples)
    }

    /// Labels from the energy / zero-crossing rule.
    pub fn labels(&self) -> Vec<FrameClass> {
        self.frames().iter().map(classify_frame).collect()
    }
}

/// Segment classes are chosen by largest shortfall against the target
/// proportions, so the realized mix tracks the configuration closely.
pub fn generate(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = cfg.frames();
    let targets = [cfg.silence_fraction().max(0.0), cfg.voiced_fraction, cfg.unvoiced_fraction];
    let mut counts = [0usize; 3];
    let mut samples = Vec::with_capacity(total * FRAME_LEN);
    let mut generated = Vec::with_capacity(total);
    while generated.len() < total {
        let done = generated.len() as f64;
        let len = rng.random_range(cfg.min_segment_frames..=cfg.max_segment_frames).min(total - generated.len());
        let after = done + len as f64;
        let class = (0..3)
            .filter(|&c| targets[c] > 0.0)
            .max_by(|&a, &b| {
                let da = targets[a] * after - counts[a] as f64;
                let db = targets[b] * after - counts[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("at least one class has positive weight");
        let n = len * FRAME_LEN;
        match FrameClass::ALL[class] {
            FrameClass::Voiced => voiced(cfg, n, &mut rng, &mut samples),
            FrameClass::Unvoiced => unvoiced(n, &mut rng, &mut samples),
            FrameClass::Silence => silence(n, &mut rng, &mut samples),
        }
        counts[class] += len;
        generated.extend(std::iter::repeat_n(FrameClass::ALL[class], len));
    }
    Ok(Corpus { samples, generated })
}

fn voiced(cfg: &CorpusConfig, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let f_start = rng.random_range(cfg.f0_min_hz..=cfg.f0_max_hz);
    let f_end = (f_start * (1.0 + rng.random_range(-cfg.pitch_drift..=cfg.pitch_drift)))
        .clamp(cfg.f0_min_hz * (1.0 - cfg.pitch_drift), cfg.max_harmonic_hz * 0.99);
    let amp = rng.random_range(0.1..0.3);
    let tilt = rng.random_range(1.0 - cfg.tilt_spread..=1.0 + cfg.tilt_spread);
    let n_harm = (cfg.max_harmonic_hz / f_start.max(f_end)).floor().max(1.0) as usize;
    let weights: Vec<f64> = (1..=n_harm).map(|h| (h as f64).powf(-tilt)).collect();
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt() / std::f64::consts::SQRT_2;
    let fs = SAMPLE_RATE as f64;
    let mut phase = 0.0;
    for i in 0..n {
        let t = i as f64 / n as f64;
        let f0 = f_start + (f_end - f_start) * t;
        phase += std::f64::consts::TAU * f0 / fs;
        // All harmonics share phase zero, so every period has the same pulse shape.
        let s: f64 = weights.iter().enumerate().map(|(h, w)| w * ((h + 1) as f64 * phase).sin()).sum();
        out.push(amp * edge_ramp(i, n) * s / norm);
    }
}

fn unvoiced(n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let amp = rng.random_range(0.03..0.08);
    let white = Normal::new(0.0, 1.0).expect("unit normal");
    let mut prev = 0.0;
    for i in 0..n {
        let w = white.sample(rng);
        // First difference pushes energy toward high frequencies.
        out.push(amp * edge_ramp(i, n) * (w - prev) / std::f64::consts::SQRT_2);
        prev = w;
    }
}

fn silence(n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let floor = Normal::new(0.0, 1e-3).expect("valid std");
    out.extend((0..n).map(|_| floor.sample(rng)));
}

/// 2.5 ms linear ramps at segment edges.
fn edge_ramp(i: usize, n: usize) -> f64 {
    const RAMP: usize = 40;
    let d = i.min(n - 1 - i);
    if d >= RAMP {
        1.0
    } else {
        (d + 1) as f64 / (RAMP + 1) as f64
    }
}

/// CSV with header `frame_n,label`.
pub fn write_labels<W: Write>(w: &mut W, labels: &[FrameClass]) -> std::io::Result<()> {
    writeln!(w, "frame_n,label")?;
    for (n, l) in labels.iter().enumerate() {
        writeln!(w, "{n},{}", l.as_str())?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<FrameClass>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 && line.starts_with("frame_n") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| CorpusError::LabelFormat { line: i + 1, reason: reason.into() };
        let (n, l) = line.split_once(',').ok_or_else(|| bad("expected frame_n,label"))?;
        let n: usize = n.trim().parse().map_err(|_| bad("bad frame number"))?;
        if n != out.len() {
            return Err(bad("frame numbers must be consecutive from 0"));
        }
        out.push(FrameClass::parse(l).ok_or_else(|| bad("unknown label"))?);
    }
    Ok(out)
}

/// Fraction of frames per class in silence, voiced, unvoiced order.
pub fn class_proportions(labels: &[FrameClass]) -> [f64; 3] {
    let mut c = [0usize; 3];
    for l in labels {
        c[*l as usize] += 1;
    }
    let n = labels.len().max(1) as f64;
    c.map(|x| x as f64 / n)
}
