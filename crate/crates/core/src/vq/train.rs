//! EMA codebook training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    squared_distance, Codebook, DistilledCodebook, ResidualVq, Result, VqError, CODEBOOK_SIZE,
    DISTILLED_SOURCE_STAGES,
};

/// Floor on the EMA count used when normalizing a row.
pub const EMA_EPSILON: f64 = 1e-5;
/// Rows whose EMA count drops below this are re-seeded from the batch.
pub const DEAD_CODE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 256, decay: 0.99, seed: 0 }
    }
}

/// Running EMA statistics for one codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub cluster_size: Vec<f64>,
    pub cluster_sum: Vec<f64>,
    pub decay: f64,
    /// Row 0 is pinned to the zero vector and never updated.
    pub zero_row_pinned: bool,
}

impl EmaState {
    /// Starts every row with unit count so the codebook is already consistent with the stats.
    pub fn new(codebook: &Codebook, decay: f64) -> Self {
        Self {
            cluster_size: vec![1.0; CODEBOOK_SIZE],
            cluster_sum: codebook.as_slice().to_vec(),
            decay,
            zero_row_pinned: false,
        }
    }

    pub fn with_pinned_zero_row(mut self) -> Self {
        self.zero_row_pinned = true;
        self
    }
}

/// One EMA step. Returns the number of dead rows that were re-seeded.
pub fn ema_update<R: Rng>(
    state: &mut EmaState,
    codebook: &mut Codebook,
    batch: &[&[f64]],
    assignments: &[u8],
    rng: &mut R,
) -> Result<usize> {
    if batch.is_empty() {
        return Err(VqError::EmptyBatch);
    }
    if batch.len() != assignments.len() {
        return Err(VqError::AssignmentLength { batch: batch.len(), assignments: assignments.len() });
    }
    let dim = codebook.dim();
    if let Some(bad) = batch.iter().find(|x| x.len() != dim) {
        return Err(VqError::DimensionMismatch { expected: dim, found: bad.len() });
    }

    let mut counts = vec![0.0; CODEBOOK_SIZE];
    let mut sums = vec![0.0; CODEBOOK_SIZE * dim];
    for (x, &a) in batch.iter().zip(assignments) {
        let a = a as usize;
        counts[a] += 1.0;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x.iter()) {
            *s += v;
        }
    }

    let d = state.decay;
    let first = usize::from(state.zero_row_pinned);
    let mut reseeded = 0;
    for i in first..CODEBOOK_SIZE {
        state.cluster_size[i] = d * state.cluster_size[i] + (1.0 - d) * counts[i];
        let row_sum = &mut state.cluster_sum[i * dim..(i + 1) * dim];
        for (s, b) in row_sum.iter_mut().zip(&sums[i * dim..(i + 1) * dim]) {
            *s = d * *s + (1.0 - d) * b;
        }
        if state.cluster_size[i] < DEAD_CODE_THRESHOLD {
            let pick = batch[rng.random_range(0..batch.len())];
            state.cluster_size[i] = 1.0;
            row_sum.copy_from_slice(pick);
            reseeded += 1;
        }
        let n = state.cluster_size[i].max(EMA_EPSILON);
        for (r, s) in codebook.row_mut(i).iter_mut().zip(row_sum.iter()) {
            *r = s / n;
        }
    }
    Ok(reseeded)
}

/// Picks 256 distinct vectors in a seeded random order.
fn sample_distinct(data: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::with_capacity(CODEBOOK_SIZE);
    for i in order {
        let key: Vec<u64> = data[i].iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            rows.push(i);
            if rows.len() == CODEBOOK_SIZE {
                break;
            }
        }
    }
    if rows.len() < CODEBOOK_SIZE {
        return Err(VqError::CorpusTooSmall { needed: CODEBOOK_SIZE, found: rows.len() });
    }
    Ok(rows.iter().flat_map(|&i| data[i].iter().copied()).collect())
}

#[derive(Debug, Clone)]
pub struct TrainedCodebook {
    pub codebook: Codebook,
    pub state: EmaState,
    /// Mean squared error over the full training set after each epoch.
    pub curve: Vec<f64>,
}

/// EMA k-means over `data`.
///
/// With `pin_zero_row`, row 0 is the zero vector for the whole run, which
/// guarantees that a residual stage never increases the error of any input.
pub fn train_codebook(data: &[Vec<f64>], cfg: &TrainConfig, pin_zero_row: bool) -> Result<TrainedCodebook> {
    if data.is_empty() {
        return Err(VqError::EmptyBatch);
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(VqError::DimensionMismatch { expected: dim, found: bad.len() });
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(VqError::NonFinite("training data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = sample_distinct(data, &mut rng)?;
    if pin_zero_row {
        rows[..dim].fill(0.0);
    }
    let mut codebook = Codebook::from_rows(dim, rows)?;
    let mut state = EmaState::new(&codebook, cfg.decay);
    if pin_zero_row {
        state = state.with_pinned_zero_row();
    }

    let batch_size = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let assignments = batch
                .iter()
                .map(|x| codebook.quantize(x).map(|(i, _)| i))
                .collect::<Result<Vec<_>>>()?;
            ema_update(&mut state, &mut codebook, &batch, &assignments, &mut rng)?;
        }
        curve.push(codebook.distortion(data)?);
    }
    Ok(TrainedCodebook { codebook, state, curve })
}

/// Trains `n_stages` residual codebooks greedily: each stage on what the
/// previous stages leave behind. Stages after the first keep a zero row.
pub fn train_rvq(latents: &[Vec<f64>], n_stages: usize, cfg: &TrainConfig) -> Result<(ResidualVq, Vec<Vec<f64>>)> {
    if n_stages == 0 || n_stages > super::MAX_STAGES {
        return Err(VqError::StageCount { requested: n_stages, available: super::MAX_STAGES });
    }
    let mut residuals = latents.to_vec();
    let mut stages = Vec::with_capacity(n_stages);
    let mut curves = Vec::with_capacity(n_stages);
    for s in 0..n_stages {
        let stage_cfg = TrainConfig { seed: cfg.seed.wrapping_add(s as u64 * 7919), ..*cfg };
        let trained = train_codebook(&residuals, &stage_cfg, s > 0)?;
        for r in residuals.iter_mut() {
            let (_, c) = trained.codebook.quantize(r)?;
            for (a, b) in r.iter_mut().zip(c) {
                *a -= b;
            }
        }
        curves.push(trained.curve);
        stages.push(trained.codebook);
    }
    Ok((ResidualVq::new(stages)?, curves))
}

/// Joint refinement of a trained quantizer. Assignments stay greedy, but
/// stage `s` moves toward the latent minus the code-vectors picked at every
/// other stage, so the codebooks minimize the full-rate reconstruction error
/// instead of each stage's own residual. Returns the full-rate MSE after each epoch.
pub fn refine_rvq(rvq: ResidualVq, latents: &[Vec<f64>], cfg: &TrainConfig) -> Result<(ResidualVq, Vec<f64>)> {
    if latents.is_empty() {
        return Err(VqError::EmptyBatch);
    }
    let n_stages = rvq.num_stages();
    let dim = rvq.dim();
    let mut stages: Vec<Codebook> = rvq.stages().to_vec();
    let mut states: Vec<EmaState> = stages
        .iter()
        .enumerate()
        .map(|(s, cb)| {
            let st = EmaState::new(cb, cfg.decay);
            if s > 0 { st.with_pinned_zero_row() } else { st }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let current = ResidualVq::new(stages.clone())?;
            let codes = chunk
                .iter()
                .map(|&i| current.encode(&latents[i], n_stages))
                .collect::<Result<Vec<_>>>()?;
            let recon = codes.iter().map(|c| current.decode(c)).collect::<Result<Vec<_>>>()?;
            for s in 0..n_stages {
                let targets: Vec<Vec<f64>> = chunk
                    .iter()
                    .zip(&codes)
                    .zip(&recon)
                    .map(|((&i, c), r)| {
                        let own = stages[s].row(c[s]);
                        (0..dim).map(|j| latents[i][j] - r[j] + own[j]).collect()
                    })
                    .collect();
                let batch: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
                let assign: Vec<u8> = codes.iter().map(|c| c[s]).collect();
                ema_update(&mut states[s], &mut stages[s], &batch, &assign, &mut rng)?;
            }
        }
        let current = ResidualVq::new(stages.clone())?;
        let mut err = 0.0;
        for x in latents {
            let r = current.decode(&current.encode(x, n_stages)?)?;
            err += squared_distance(x, &r);
        }
        curve.push(err / (latents.len() * dim) as f64);
    }
    Ok((ResidualVq::new(stages)?, curve))
}

/// Sum of the first two stage code-vectors of each latent.
pub fn distillation_targets(rvq: &ResidualVq, corpus: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rvq.num_stages() < DISTILLED_SOURCE_STAGES {
        return Err(VqError::StageCount {
            requested: DISTILLED_SOURCE_STAGES,
            available: rvq.num_stages(),
        });
    }
    corpus
        .iter()
        .map(|x| {
            let idx = rvq.encode(x, DISTILLED_SOURCE_STAGES)?;
            rvq.decode(&idx)
        })
        .collect()
}

/// Distills stages 1+2 of `rvq` onto a single 256-entry codebook.
///
/// Returns the codebook and the per-epoch MSE between targets and their
/// distilled reconstruction.
pub fn distill_codebook(
    rvq: &ResidualVq,
    corpus: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(DistilledCodebook, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(VqError::EmptyBatch);
    }
    let targets = distillation_targets(rvq, corpus)?;
    let trained = train_codebook(&targets, cfg, false)?;
    Ok((DistilledCodebook::new(trained.codebook), trained.curve))
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_mixture(centers: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let c: Vec<Vec<f64>> = (0..centers).map(|_| (0..dim).map(|_| 4.0 * n.sample(&mut rng)).collect()).collect();
        let mut data = Vec::new();
        for _ in 0..per {
            for cc in &c {
                data.push(cc.iter().map(|m| m + spread * n.sample(&mut rng)).collect());
            }
        }
        (c, data)
    }

    #[test]
    fn update_touches_only_assigned_row() {
        let (_, data) = gaussian_mixture(256, 1, 4, 0.1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cb = Codebook::from_rows(4, data.iter().flatten().copied().collect()).unwrap();
        let before = cb.clone();
        let mut state = EmaState::new(&cb, 0.99);
        let batch: Vec<&[f64]> = data[..10].iter().map(|v| v.as_slice()).collect();
        let reseeded = ema_update(&mut state, &mut cb, &batch, &[3; 10], &mut rng).unwrap();
        assert_eq!(reseeded, 0);
        for i in 0..CODEBOOK_SIZE as u8 {
            let same = before.row(i).iter().zip(cb.row(i)).all(|(a, b)| (a - b).abs() < 1e-12);
            assert_eq!(same, i != 3, "row {i}");
        }
        assert!((state.cluster_size[3] - (0.99 + 0.01 * 10.0)).abs() < 1e-12);
        assert!((state.cluster_size[4] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn row_is_a_fixed_point_of_its_own_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, data) = gaussian_mixture(256, 1, 3, 0.1, 2);
        let mut cb = Codebook::from_rows(3, data.iter().flatten().copied().collect()).unwrap();
        let mut state = EmaState::new(&cb, 0.99);
        let row = cb.row(12).to_vec();
        let batch: Vec<&[f64]> = vec![row.as_slice(); 32];
        ema_update(&mut state, &mut cb, &batch, &[12; 32], &mut rng).unwrap();
        assert!(squared_distance(cb.row(12), &row) < 1e-20);
    }

    #[test]
    fn rows_match_normalized_stats() {
        let (_, data) = gaussian_mixture(256, 4, 4, 0.5, 3);
        let t = train_codebook(&data, &TrainConfig { epochs: 3, ..Default::default() }, false).unwrap();
        for i in 0..CODEBOOK_SIZE {
            let n = t.state.cluster_size[i].max(EMA_EPSILON);
            for k in 0..4 {
                assert_eq!(t.codebook.row(i as u8)[k], t.state.cluster_sum[i * 4 + k] / n);
            }
            assert!(t.state.cluster_size[i] >= 0.0);
        }
    }

    #[test]
    fn dead_rows_are_reseeded() {
        let (_, data) = gaussian_mixture(256, 1, 2, 0.1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cb = Codebook::from_rows(2, data.iter().flatten().copied().collect()).unwrap();
        let mut state = EmaState::new(&cb, 0.5);
        state.cluster_size[200] = 0.015;
        let batch: Vec<&[f64]> = data[..4].iter().map(|v| v.as_slice()).collect();
        let reseeded = ema_update(&mut state, &mut cb, &batch, &[0, 1, 2, 3], &mut rng).unwrap();
        assert!(reseeded >= 1);
        assert_eq!(state.cluster_size[200], 1.0);
        assert!(batch.iter().any(|b| *b == cb.row(200)));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut cb = Codebook::zeros(2);
        let mut state = EmaState::new(&cb, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(ema_update(&mut state, &mut cb, &[], &[], &mut rng), Err(VqError::EmptyBatch)));
    }

    #[test]
    fn pinned_zero_row_stays_zero() {
        let (_, data) = gaussian_mixture(64, 20, 3, 0.3, 5);
        let t = train_codebook(&data, &TrainConfig { epochs: 5, ..Default::default() }, true).unwrap();
        assert!(t.codebook.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let (_, data) = gaussian_mixture(256, 3, 4, 0.5, 6);
        let cfg = TrainConfig { epochs: 4, seed: 11, ..Default::default() };
        let a = train_codebook(&data, &cfg, false).unwrap();
        let b = train_codebook(&data, &cfg, false).unwrap();
        assert_eq!(a.codebook, b.codebook);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn too_few_distinct_vectors() {
        let data = vec![vec![1.0, 2.0]; 1000];
        assert!(matches!(
            train_codebook(&data, &TrainConfig::default(), false),
            Err(VqError::CorpusTooSmall { needed: 256, found: 1 })
        ));
    }

    #[test]
    fn distillation_needs_two_stages() {
        let rvq = ResidualVq::new(vec![Codebook::zeros(2)]).unwrap();
        assert!(matches!(
            distill_codebook(&rvq, &[vec![0.0, 0.0]], &TrainConfig::default()),
            Err(VqError::StageCount { .. })
        ));
    }
}
