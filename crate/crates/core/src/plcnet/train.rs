//! Teacher-forced training on ground-truth index sequences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, argmax, nll_loss, AdamState, ForwardCache, HistoryWindow, PlcError, PlcModel, Result, WINDOW};
use crate::vq::Codebook;

/// Two seconds of 10 ms frames.
pub const SEQUENCE_FRAMES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainPlcConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainPlcConfig {
    fn default() -> Self {
        Self { iterations: 20_000, batch_size: 128, lr: 1e-4, seed: 0 }
    }
}

/// Position `frame` of sequence `sequence`; the window is the seven frames before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub sequence: usize,
    pub frame: usize,
}

pub fn teacher_forcing_pairs(corpus: &[Vec<u8>]) -> Result<Vec<TrainingPair>> {
    if corpus.is_empty() {
        return Err(PlcError::EmptyCorpus);
    }
    let mut pairs = Vec::new();
    for (s, seq) in corpus.iter().enumerate() {
        if seq.len() <= WINDOW {
            return Err(PlcError::SequenceTooShort { index: s, len: seq.len() });
        }
        pairs.extend((WINDOW..seq.len()).map(|frame| TrainingPair { sequence: s, frame }));
    }
    Ok(pairs)
}

fn window_for(corpus: &[Vec<u8>], codebook: &Codebook, pair: TrainingPair, out: &mut HistoryWindow) {
    let seq = &corpus[pair.sequence];
    for &i in &seq[pair.frame - WINDOW..pair.frame] {
        out.push(codebook.row(i));
    }
}

/// Mean NLL and top-1 accuracy over every pair of `corpus`.
pub fn mean_nll(model: &PlcModel, corpus: &[Vec<u8>], codebook: &Codebook) -> Result<(f64, f64)> {
    let pairs = teacher_forcing_pairs(corpus)?;
    let mut window = HistoryWindow::empty(codebook.dim());
    let mut cache = ForwardCache::default();
    let (mut nll, mut hits) = (0.0, 0usize);
    for &p in &pairs {
        window_for(corpus, codebook, p, &mut window);
        model.forward_cached(&window, &mut cache)?;
        let target = corpus[p.sequence][p.frame] as usize;
        nll += nll_loss(&cache.probs, target)?;
        hits += usize::from(argmax(&cache.probs) == target);
    }
    Ok((nll / pairs.len() as f64, hits as f64 / pairs.len() as f64))
}

/// Minimizes mean NLL of the next index with Adam. Windows always hold
/// ground-truth code-vectors. Returns the mean batch NLL of every iteration.
pub fn train_teacher_forcing(
    model: &mut PlcModel,
    corpus: &[Vec<u8>],
    codebook: &Codebook,
    cfg: &TrainPlcConfig,
) -> Result<Vec<f64>> {
    if codebook.dim() != model.dim() {
        return Err(PlcError::Shape { expected: model.dim(), found: codebook.dim() });
    }
    let mut pairs = teacher_forcing_pairs(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model, cfg.lr);
    let mut window = HistoryWindow::empty(codebook.dim());
    let mut cache = ForwardCache::default();
    let mut grad = model.zeros_like();
    let batch_size = cfg.batch_size.max(1);
    let mut cursor = pairs.len();
    let mut curve = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        for p in grad.params_mut() {
            p.fill(0.0);
        }
        let mut loss = 0.0;
        for _ in 0..batch_size {
            if cursor == pairs.len() {
                pairs.shuffle(&mut rng);
                cursor = 0;
            }
            let pair = pairs[cursor];
            cursor += 1;
            window_for(corpus, codebook, pair, &mut window);
            model.forward_cached(&window, &mut cache)?;
            let target = corpus[pair.sequence][pair.frame] as usize;
            loss += nll_loss(&cache.probs, target)?;
            model.backward(&cache, target, &mut grad)?;
        }
        let scale = 1.0 / batch_size as f64;
        for p in grad.params_mut() {
            p.iter_mut().for_each(|g| *g *= scale);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(PlcError::NonFiniteLoss(it));
        }
        curve.push(loss);
        adam_step(model, &grad, &mut adam)?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vq::CODEBOOK_SIZE;
    use rand::Rng;

    fn random_codebook(dim: usize, seed: u64) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Codebook::from_rows(dim, (0..dim * CODEBOOK_SIZE).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn pairs_skip_partial_windows() {
        let corpus = vec![vec![0u8; 10], vec![1u8; 8]];
        let pairs = teacher_forcing_pairs(&corpus).unwrap();
        assert_eq!(pairs.len(), 3 + 1);
        assert_eq!(pairs[0], TrainingPair { sequence: 0, frame: 7 });
        assert!(matches!(teacher_forcing_pairs(&[]), Err(PlcError::EmptyCorpus)));
        assert!(matches!(
            teacher_forcing_pairs(&[vec![1u8; 7]]),
            Err(PlcError::SequenceTooShort { index: 0, len: 7 })
        ));
    }

    #[test]
    fn cyclic_sequence_is_learned() {
        let cb = random_codebook(4, 1);
        let cycle = [3u8, 77, 140, 9, 200];
        let corpus: Vec<Vec<u8>> = (0..4).map(|o| (0..60).map(|i| cycle[(i + o) % 5]).collect()).collect();
        let mut m = PlcModel::new(4, 16, 2).unwrap();
        let cfg = TrainPlcConfig { iterations: 400, batch_size: 32, lr: 3e-3, seed: 3 };
        train_teacher_forcing(&mut m, &corpus, &cb, &cfg).unwrap();
        let mut w = HistoryWindow::empty(4);
        for i in 0..7 {
            w.push(cb.row(cycle[i % 5]));
        }
        let p = m.forward(&w).unwrap();
        assert!(p[cycle[7 % 5] as usize] > 0.9, "{}", p[cycle[2] as usize]);
    }

    #[test]
    fn constant_stream_is_predicted() {
        let cb = random_codebook(3, 4);
        let corpus = vec![vec![123u8; 50]; 2];
        let mut m = PlcModel::new(3, 8, 5).unwrap();
        let cfg = TrainPlcConfig { iterations: 200, batch_size: 16, lr: 1e-2, seed: 6 };
        train_teacher_forcing(&mut m, &corpus, &cb, &cfg).unwrap();
        let w = HistoryWindow::filled(cb.row(123));
        assert_eq!(m.predict_index(&w).unwrap(), 123);
    }

    #[test]
    fn overfitting_one_batch_reduces_loss() {
        let cb = random_codebook(4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corpus = vec![(0..135).map(|_| rng.random::<u8>()).collect::<Vec<u8>>()];
        let mut m = PlcModel::zeros(4, 8).unwrap();
        let mut init = PlcModel::new(4, 8, 9).unwrap();
        // Start from exactly uniform output so the first loss is ln 256.
        init.fc = m.fc.clone();
        m = init;
        let cfg = TrainPlcConfig { iterations: 200, batch_size: 128, lr: 1e-4, seed: 10 };
        let curve = train_teacher_forcing(&mut m, &corpus, &cb, &cfg).unwrap();
        assert!((curve[0] - 256f64.ln()).abs() < 1e-12);
        let (after, _) = mean_nll(&m, &corpus, &cb).unwrap();
        assert!(after < 256f64.ln());
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let cb = random_codebook(3, 11);
        let corpus = vec![(0..40).map(|i| (i * 37 % 256) as u8).collect::<Vec<u8>>()];
        let cfg = TrainPlcConfig { iterations: 30, batch_size: 8, lr: 1e-3, seed: 12 };
        let run = || {
            let mut m = PlcModel::new(3, 8, 13).unwrap();
            let c = train_teacher_forcing(&mut m, &corpus, &cb, &cfg).unwrap();
            (m, c)
        };
        let (a, ca) = run();
        let (b, cb2) = run();
        assert_eq!(a, b);
        assert_eq!(ca.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), cb2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
