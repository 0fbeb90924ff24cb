//! Deterministic stand-in for a neural frame codec.
//!
//! A 10 ms frame (160 samples at 16 kHz) is projected onto the first `D`
//! rows of the orthonormal DCT-II basis and each coefficient is scaled so the
//! training corpus has unit variance per latent component. Decoding applies
//! the transposed basis, so `decode ∘ encode` is the orthogonal projection onto
//! the basis span and frames are decoded independently of each other.

use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 160;
pub const FRAME_MS: f64 = 10.0;
pub const DEFAULT_LATENT_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame must have {FRAME_LEN} samples, found {0}")]
    FrameLength(usize),
    #[error("non-finite sample or coefficient")]
    NonFinite,
    #[error("latent dimension {found} does not match transform dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("latent dimension must be in 1..={FRAME_LEN}, got {0}")]
    BadDim(usize),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    WavFormat(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// One 10 ms frame of mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSignal(Vec<f64>);

impl FrameSignal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != FRAME_LEN {
            return Err(CodecError::FrameLength(samples.len()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        Ok(Self(samples))
    }

    pub fn silent() -> Self {
        Self(vec![0.0; FRAME_LEN])
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.0
    }

    pub fn energy(&self) -> f64 {
        self.0.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / FRAME_LEN as f64).sqrt()
    }

    /// Sign changes per sample pair; exact zeros count as positive.
    pub fn zero_crossing_rate(&self) -> f64 {
        let crossings = self.0.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
        crossings as f64 / (FRAME_LEN - 1) as f64
    }
}

/// Truncated orthonormal cosine projection with per-component scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisTransform {
    dim: usize,
    basis: Vec<f64>,
    scale: Vec<f64>,
}

/// Row `k` of the orthonormal DCT-II matrix of size [`FRAME_LEN`].
pub fn dct_row(k: usize) -> Vec<f64> {
    let n = FRAME_LEN as f64;
    let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    (0..FRAME_LEN)
        .map(|i| alpha * (PI * (i as f64 + 0.5) * k as f64 / n).cos())
        .collect()
}

impl AnalysisTransform {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > FRAME_LEN {
            return Err(CodecError::BadDim(dim));
        }
        let basis = (0..dim).flat_map(dct_row).collect();
        Ok(Self { dim, basis, scale: vec![1.0; dim] })
    }

    pub fn with_scale(dim: usize, scale: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(dim)?;
        if scale.len() != dim {
            return Err(CodecError::Dimension { expected: dim, found: scale.len() });
        }
        if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(CodecError::NonFinite);
        }
        t.scale = scale;
        Ok(t)
    }

    /// Chooses scales so every latent component of `frames` has unit variance.
    /// Components with no variance keep a scale of 1.
    pub fn fit(dim: usize, frames: &[FrameSignal]) -> Result<Self> {
        let mut t = Self::new(dim)?;
        if frames.is_empty() {
            return Ok(t);
        }
        let coeffs: Vec<Vec<f64>> = frames.iter().map(|f| t.project(f)).collect();
        let n = coeffs.len() as f64;
        for j in 0..dim {
            let mean = coeffs.iter().map(|c| c[j]).sum::<f64>() / n;
            let var = coeffs.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n;
            t.scale[j] = if var > 1e-18 { 1.0 / var.sqrt() } else { 1.0 };
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn basis_row(&self, j: usize) -> &[f64] {
        &self.basis[j * FRAME_LEN..(j + 1) * FRAME_LEN]
    }

    fn project(&self, frame: &FrameSignal) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.basis_row(j).iter().zip(frame.samples()).map(|(b, s)| b * s).sum())
            .collect()
    }

    pub fn encode(&self, frame: &FrameSignal) -> Vec<f64> {
        self.project(frame).into_iter().zip(&self.scale).map(|(c, s)| c * s).collect()
    }

    pub fn decode(&self, latent: &[f64]) -> Result<FrameSignal> {
        if latent.len() != self.dim {
            return Err(CodecError::Dimension { expected: self.dim, found: latent.len() });
        }
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        let mut out = vec![0.0; FRAME_LEN];
        for (j, (&l, &s)) in latent.iter().zip(&self.scale).enumerate() {
            let c = l / s;
            for (o, b) in out.iter_mut().zip(self.basis_row(j)) {
                *o += c * b;
            }
        }
        Ok(FrameSignal(out))
    }
}

pub fn encode_frame(frame: &FrameSignal, t: &AnalysisTransform) -> Vec<f64> {
    t.encode(frame)
}

pub fn decode_frame(latent: &[f64], t: &AnalysisTransform) -> Result<FrameSignal> {
    t.decode(latent)
}

/// Splits a signal into frames, zero-padding the last one.
pub fn frames_from_signal(signal: &[f64]) -> Vec<FrameSignal> {
    signal
        .chunks(FRAME_LEN)
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(FRAME_LEN, 0.0);
            FrameSignal(v.into_iter().map(|s| if s.is_finite() { s } else { 0.0 }).collect())
        })
        .collect()
}

pub fn signal_from_frames(frames: &[FrameSignal]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.samples().iter().copied()).collect()
}

/// Writes mono 16 kHz 16-bit PCM. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE || spec.bits_per_sample != 16 {
        return Err(CodecError::WavFormat(format!(
            "{} ch, {} Hz, {} bit (need mono 16 kHz 16-bit)",
            spec.channels, spec.sample_rate, spec.bits_per_sample
        )));
    }
    r.samples::<i16>()
        .map(|s| s.map(|v| v as f64 / i16::MAX as f64).map_err(CodecError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng) -> FrameSignal {
        FrameSignal::new((0..FRAME_LEN).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn basis_is_orthonormal() {
        let t = AnalysisTransform::new(DEFAULT_LATENT_DIM).unwrap();
        for a in 0..t.dim() {
            for b in 0..t.dim() {
                let dot: f64 = t.basis_row(a).iter().zip(t.basis_row(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "rows {a},{b}: {dot}");
            }
        }
    }

    #[test]
    fn zero_frame_and_zero_latent() {
        let t = AnalysisTransform::with_scale(4, vec![2.0, 0.5, 1.0, 3.0]).unwrap();
        assert_eq!(t.encode(&FrameSignal::silent()), vec![0.0; 4]);
        assert_eq!(t.decode(&[0.0; 4]).unwrap(), FrameSignal::silent());
    }

    #[test]
    fn basis_row_encodes_to_scaled_unit_vector() {
        let scale = vec![2.0, 0.5, 1.5, 3.0];
        let t = AnalysisTransform::with_scale(4, scale.clone()).unwrap();
        let f = FrameSignal::new(t.basis_row(2).to_vec()).unwrap();
        let l = t.encode(&f);
        for (j, v) in l.iter().enumerate() {
            let want = if j == 2 { scale[2] } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = AnalysisTransform::with_scale(16, (1..=16).map(|i| i as f64 * 0.3).collect()).unwrap();
        for _ in 0..20 {
            let l = t.encode(&noise(&mut rng));
            let l2 = t.encode(&t.decode(&l).unwrap());
            for (a, b) in l.iter().zip(&l2) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn in_span_signals_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = AnalysisTransform::new(16).unwrap();
        let coeffs: Vec<f64> = (0..16).map(|_| rng.random_range(-0.2..0.2)).collect();
        let x = t.decode(&coeffs).unwrap();
        let y = t.decode(&t.encode(&x)).unwrap();
        let rms = (x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 160.0).sqrt();
        assert!(rms < 1e-6);
    }

    #[test]
    fn noise_loses_only_out_of_span_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = AnalysisTransform::new(16).unwrap();
        let full = AnalysisTransform::new(FRAME_LEN).unwrap();
        for _ in 0..10 {
            let x = noise(&mut rng);
            let y = t.decode(&t.encode(&x)).unwrap();
            let err: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
            let complement: f64 = full.encode(&x)[16..].iter().map(|c| c * c).sum();
            assert!((err - complement).abs() < 1e-9);
            assert!(y.energy() <= x.energy() + 1e-9);
        }
    }

    #[test]
    fn encoder_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = AnalysisTransform::with_scale(8, vec![1.7; 8]).unwrap();
        let (x, y) = (noise(&mut rng), noise(&mut rng));
        let (a, b) = (0.3, -1.2);
        let z = FrameSignal::new(x.samples().iter().zip(y.samples()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (ex, ey, ez) = (t.encode(&x), t.encode(&y), t.encode(&z));
        for j in 0..8 {
            assert!((ez[j] - (a * ex[j] + b * ey[j])).abs() < 1e-9);
        }
    }

    #[test]
    fn fitted_scale_gives_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<_> = (0..500).map(|_| noise(&mut rng)).collect();
        let t = AnalysisTransform::fit(16, &frames).unwrap();
        let lat: Vec<Vec<f64>> = frames.iter().map(|f| t.encode(f)).collect();
        for j in 0..16 {
            let m = lat.iter().map(|l| l[j]).sum::<f64>() / 500.0;
            let v = lat.iter().map(|l| (l[j] - m).powi(2)).sum::<f64>() / 500.0;
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(FrameSignal::new(vec![0.0; 159]), Err(CodecError::FrameLength(159))));
        assert!(matches!(FrameSignal::new(vec![f64::NAN; 160]), Err(CodecError::NonFinite)));
        assert!(AnalysisTransform::new(0).is_err());
        let t = AnalysisTransform::new(4).unwrap();
        assert!(matches!(t.decode(&[0.0; 3]), Err(CodecError::Dimension { .. })));
    }

    #[test]
    fn zcr_of_alternating_signal() {
        let f = FrameSignal::new((0..160).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect()).unwrap();
        assert_eq!(f.zero_crossing_rate(), 1.0);
        assert_eq!(FrameSignal::silent().zero_crossing_rate(), 0.0);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let s: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.05).sin() * 0.5).collect();
        write_wav(&p, &s).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 400);
        for (a, b) in s.iter().zip(&r) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }
}
