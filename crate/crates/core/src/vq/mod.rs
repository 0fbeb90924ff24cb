//! Residual vector quantization over fixed-size codebooks.
//!
//! Every codebook holds exactly [`CODEBOOK_SIZE`] code-vectors, so one index
//! costs 8 bits. A [`ResidualVq`] chains up to [`MAX_STAGES`] codebooks: stage
//! `s` quantizes what is left of the latent after subtracting the code-vectors
//! chosen by stages `0..s`. The [`DistilledCodebook`] is a single codebook
//! trained on the sum of the first two stages; it is the unit of loss
//! concealment and of the redundant (FEC) payload.

mod io;
mod train;

use thiserror::Error;

pub use io::{read_distilled, read_rvq, write_distilled, write_rvq, DISTILLED_MAGIC, RVQ_MAGIC};
pub use train::{
    distill_codebook, distillation_targets, ema_update, refine_rvq, train_codebook, train_rvq, EmaState,
    TrainConfig, TrainedCodebook, DEAD_CODE_THRESHOLD, EMA_EPSILON,
};

/// Entries per codebook; one index is one byte.
pub const CODEBOOK_SIZE: usize = 256;
/// Number of residual stages carried by a packet.
pub const MAX_STAGES: usize = 4;
/// Stages summed to form the distillation target.
pub const DISTILLED_SOURCE_STAGES: usize = 2;
/// Frames per second (10 ms frames).
pub const FRAMES_PER_SECOND: u32 = 100;
/// Bits spent on one codebook index.
pub const BITS_PER_INDEX: u32 = 8;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("stage count {requested} out of range 1..={available}")]
    StageCount { requested: usize, available: usize },
    #[error("codebook must have {CODEBOOK_SIZE} rows, found {0}")]
    RowCount(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {batch} vectors but {assignments} assignments")]
    AssignmentLength { batch: usize, assignments: usize },
    #[error("need at least {needed} distinct training vectors, found {found}")]
    CorpusTooSmall { needed: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad codebook file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, VqError>;

/// Bitrate in bits per second of `indices_per_frame` 8-bit indices per 10 ms frame.
pub fn bitrate_bps(indices_per_frame: u32) -> u32 {
    indices_per_frame * BITS_PER_INDEX * FRAMES_PER_SECOND
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One table of 256 code-vectors of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn from_rows(dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(VqError::DimensionMismatch { expected: 1, found: 0 });
        }
        if vectors.len() != dim * CODEBOOK_SIZE {
            return Err(VqError::RowCount(vectors.len() / dim));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(VqError::NonFinite("codebook"));
        }
        Ok(Self { dim, vectors })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, vectors: vec![0.0; dim * CODEBOOK_SIZE] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, index: u8) -> &[f64] {
        let i = index as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    pub(crate) fn row_mut(&mut self, index: usize) -> &mut [f64] {
        let i = index * self.dim;
        &mut self.vectors[i..i + self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    /// Nearest code-vector under squared Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, latent: &[f64]) -> Result<(u8, &[f64])> {
        if latent.len() != self.dim {
            return Err(VqError::DimensionMismatch { expected: self.dim, found: latent.len() });
        }
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, row) in self.rows().enumerate() {
            let d = squared_distance(latent, row);
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        let index = best as u8;
        Ok((index, self.row(index)))
    }

    /// Mean squared error of quantizing every vector in `data` with this codebook.
    pub fn distortion(&self, data: &[Vec<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(VqError::EmptyBatch);
        }
        let mut total = 0.0;
        for x in data {
            let (_, c) = self.quantize(x)?;
            total += squared_distance(x, c);
        }
        Ok(total / (data.len() * self.dim) as f64)
    }
}

/// Free-function form of [`Codebook::quantize`] returning an owned code-vector.
pub fn quantize_stage(latent: &[f64], codebook: &Codebook) -> Result<(u8, Vec<f64>)> {
    codebook.quantize(latent).map(|(i, c)| (i, c.to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVq {
    stages: Vec<Codebook>,
}

impl ResidualVq {
    pub fn new(stages: Vec<Codebook>) -> Result<Self> {
        if stages.is_empty() || stages.len() > MAX_STAGES {
            return Err(VqError::StageCount { requested: stages.len(), available: MAX_STAGES });
        }
        let dim = stages[0].dim();
        for s in &stages {
            if s.dim() != dim {
                return Err(VqError::DimensionMismatch { expected: dim, found: s.dim() });
            }
        }
        Ok(Self { stages })
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, s: usize) -> &Codebook {
        &self.stages[s]
    }

    pub fn stages(&self) -> &[Codebook] {
        &self.stages
    }

    /// Greedy residual encoding with the first `n_stages` codebooks.
    pub fn encode(&self, latent: &[f64], n_stages: usize) -> Result<Vec<u8>> {
        if n_stages == 0 || n_stages > self.stages.len() {
            return Err(VqError::StageCount { requested: n_stages, available: self.stages.len() });
        }
        if latent.len() != self.dim() {
            return Err(VqError::DimensionMismatch { expected: self.dim(), found: latent.len() });
        }
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(VqError::NonFinite("latent"));
        }
        let mut residual = latent.to_vec();
        let mut indices = Vec::with_capacity(n_stages);
        for cb in &self.stages[..n_stages] {
            let (i, c) = cb.quantize(&residual)?;
            for (r, v) in residual.iter_mut().zip(c) {
                *r -= v;
            }
            indices.push(i);
        }
        Ok(indices)
    }

    /// Sum of the code-vectors named by `indices`, one per leading stage.
    pub fn decode(&self, indices: &[u8]) -> Result<Vec<f64>> {
        if indices.is_empty() || indices.len() > self.stages.len() {
            return Err(VqError::StageCount {
                requested: indices.len(),
                available: self.stages.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        for (cb, &i) in self.stages.iter().zip(indices) {
            for (o, v) in out.iter_mut().zip(cb.row(i)) {
                *o += v;
            }
        }
        Ok(out)
    }
}

pub fn rvq_encode(latent: &[f64], rvq: &ResidualVq, n_stages: usize) -> Result<Vec<u8>> {
    rvq.encode(latent, n_stages)
}

pub fn rvq_decode(indices: &[u8], rvq: &ResidualVq) -> Result<Vec<f64>> {
    rvq.decode(indices)
}

/// Voiced/unvoiced/silence label attached to a distilled index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameClass {
    Silence,
    Voiced,
    Unvoiced,
}

impl FrameClass {
    pub const ALL: [FrameClass; 3] = [FrameClass::Silence, FrameClass::Voiced, FrameClass::Unvoiced];

    pub fn as_str(self) -> &'static str {
        match self {
            FrameClass::Silence => "silence",
            FrameClass::Voiced => "voiced",
            FrameClass::Unvoiced => "unvoiced",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "silence" => Some(FrameClass::Silence),
            "voiced" => Some(FrameClass::Voiced),
            "unvoiced" => Some(FrameClass::Unvoiced),
            _ => None,
        }
    }
}

/// Single 256-entry codebook trained on two-stage sums, plus its class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledCodebook {
    codebook: Codebook,
    class_map: Option<[FrameClass; CODEBOOK_SIZE]>,
}

impl DistilledCodebook {
    pub fn new(codebook: Codebook) -> Self {
        Self { codebook, class_map: None }
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn vector(&self, index: u8) -> &[f64] {
        self.codebook.row(index)
    }

    pub fn quantize(&self, v: &[f64]) -> Result<(u8, &[f64])> {
        self.codebook.quantize(v)
    }

    /// Row nearest the zero latent.
    pub fn silence_index(&self) -> u8 {
        let zero = vec![0.0; self.dim()];
        self.codebook.quantize(&zero).map(|(i, _)| i).unwrap_or(0)
    }

    pub fn class_map(&self) -> Option<&[FrameClass; CODEBOOK_SIZE]> {
        self.class_map.as_ref()
    }

    pub fn set_class_map(&mut self, map: [FrameClass; CODEBOOK_SIZE]) {
        self.class_map = Some(map);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_codebook(rng: &mut ChaCha8Rng, dim: usize) -> Codebook {
        let v = (0..dim * CODEBOOK_SIZE).map(|_| rng.random_range(-1.0..1.0)).collect();
        Codebook::from_rows(dim, v).unwrap()
    }

    #[test]
    fn exact_row_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cb = random_codebook(&mut rng, 16);
        let latent = cb.row(7).to_vec();
        let (i, c) = quantize_stage(&latent, &cb).unwrap();
        assert_eq!(i, 7);
        assert_eq!(c, latent);
    }

    #[test]
    fn zero_row_at_index_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cb = random_codebook(&mut rng, 8);
        cb.row_mut(0).fill(0.0);
        let (i, c) = cb.quantize(&[0.0; 8]).unwrap();
        assert_eq!(i, 0);
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = Codebook::zeros(4);
        assert_eq!(cb.quantize(&[1.0, 2.0, 3.0, 4.0]).unwrap().0, 0);
    }

    #[test]
    fn brute_force_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let cb = random_codebook(&mut rng, 4);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = (f64::INFINITY, 0usize);
            for i in 0..CODEBOOK_SIZE {
                let row = &cb.as_slice()[i * 4..i * 4 + 4];
                let d: f64 = (0..4).map(|k| (x[k] - row[k]).powi(2)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(cb.quantize(&x).unwrap().0 as usize, best.1);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cb = Codebook::zeros(4);
        assert!(matches!(
            cb.quantize(&[0.0; 3]),
            Err(VqError::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn codebook_rejects_non_finite() {
        let mut v = vec![0.0; 2 * CODEBOOK_SIZE];
        v[17] = f64::NAN;
        assert!(matches!(Codebook::from_rows(2, v), Err(VqError::NonFinite(_))));
        assert!(matches!(Codebook::from_rows(2, vec![0.0; 10]), Err(VqError::RowCount(_))));
    }

    #[test]
    fn constructed_decomposition_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s1 = random_codebook(&mut rng, 8);
        // Stage 2 rows are small so the stage-1 choice is unambiguous.
        let s2v = (0..8 * CODEBOOK_SIZE).map(|_| rng.random_range(-0.01..0.01)).collect();
        let s2 = Codebook::from_rows(8, s2v).unwrap();
        let rvq = ResidualVq::new(vec![s1, s2, Codebook::zeros(8), Codebook::zeros(8)]).unwrap();
        let (a, b) = (41u8, 200u8);
        let x: Vec<f64> = rvq.stage(0).row(a).iter().zip(rvq.stage(1).row(b)).map(|(p, q)| p + q).collect();
        let idx = rvq.encode(&x, 4).unwrap();
        assert_eq!(&idx[..2], &[a, b]);
    }

    #[test]
    fn fewer_stages_is_a_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rvq = ResidualVq::new((0..4).map(|_| random_codebook(&mut rng, 6)).collect()).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let full = rvq.encode(&x, 4).unwrap();
            for n in 1..4 {
                assert_eq!(rvq.encode(&x, n).unwrap(), full[..n]);
            }
        }
    }

    #[test]
    fn decode_of_zero_rows_is_zero() {
        let rvq = ResidualVq::new(vec![Codebook::zeros(3), Codebook::zeros(3)]).unwrap();
        assert_eq!(rvq.decode(&[9, 250]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn stage_count_errors() {
        let rvq = ResidualVq::new(vec![Codebook::zeros(3), Codebook::zeros(3)]).unwrap();
        assert!(matches!(rvq.encode(&[0.0; 3], 3), Err(VqError::StageCount { .. })));
        assert!(matches!(rvq.encode(&[0.0; 3], 0), Err(VqError::StageCount { .. })));
        assert!(matches!(rvq.decode(&[1, 2, 3]), Err(VqError::StageCount { .. })));
        assert!(ResidualVq::new(vec![Codebook::zeros(3); 5]).is_err());
        assert!(ResidualVq::new(vec![Codebook::zeros(3), Codebook::zeros(4)]).is_err());
    }

    #[test]
    fn bitrates() {
        assert_eq!(bitrate_bps(4), 3200);
        assert_eq!(bitrate_bps(1), 800);
    }
}
