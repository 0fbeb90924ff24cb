//! Causal convolutional predictor of the next distilled codebook index.
//!
//! The input is the window of the last seven distilled code-vectors
//! (`D` channels × 7 frames). A kernel-7 convolution collapses the window to
//! `H` channels, two pointwise convolutions mix channels, and a dense layer
//! produces 256 logits followed by a softmax. LeakyReLU follows each of the
//! three convolutions. Because the kernel spans exactly the window, the
//! prediction for frame `n` can only see frames `n-7..n-1`.
//!
//! Gradients are computed by hand; [`PlcModel::backward`] is checked against
//! central finite differences in the tests.

mod adam;
mod io;
mod train;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vq::CODEBOOK_SIZE;

pub use adam::{adam_step, AdamState};
pub use io::{read_model, write_model, write_loss_curve, MODEL_MAGIC};
pub use train::{
    mean_nll, teacher_forcing_pairs, train_teacher_forcing, TrainPlcConfig, TrainingPair, SEQUENCE_FRAMES,
};

/// Frames of history the model conditions on.
pub const WINDOW: usize = 7;
pub const DEFAULT_HIDDEN: usize = 256;
pub const LEAKY_SLOPE: f64 = 0.01;
/// Probabilities are clamped to this before taking the log.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PlcError {
    #[error("history window holds {0} of {WINDOW} frames")]
    WindowNotFull(usize),
    #[error("target index {0} out of range 0..{CODEBOOK_SIZE}")]
    TargetOutOfRange(usize),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("hidden width and latent dimension must be positive (D={dim}, H={hidden})")]
    BadSize { dim: usize, hidden: usize },
    #[error("non-finite gradient in parameter block {0}; step aborted")]
    NonFiniteGradient(usize),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("training sequence {index} has {len} frames, need at least {}", WINDOW + 1)]
    SequenceTooShort { index: usize, len: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, PlcError>;

/// Fully connected map `out = W·in + b` with `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weight.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    /// Accumulates parameter gradients into `grad` and writes the input gradient to `dx`.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense, dx: Option<&mut Vec<f64>>) {
        for ((g_row, gb), &d) in grad.weight.chunks_exact_mut(self.inputs).zip(&mut grad.bias).zip(dz) {
            *gb += d;
            if d != 0.0 {
                for (g, v) in g_row.iter_mut().zip(x) {
                    *g += d * v;
                }
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.inputs, 0.0);
            for (row, &d) in self.weight.chunks_exact(self.inputs).zip(dz) {
                for (o, w) in dx.iter_mut().zip(row) {
                    *o += w * d;
                }
            }
        }
    }
}

fn leaky(z: &[f64], alpha: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(z.iter().map(|&v| if v > 0.0 { v } else { alpha * v }));
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// The last seven distilled code-vectors, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    dim: usize,
    frames: VecDeque<Vec<f64>>,
}

impl HistoryWindow {
    pub fn empty(dim: usize) -> Self {
        Self { dim, frames: VecDeque::with_capacity(WINDOW) }
    }

    /// A full window where every slot holds `fill`.
    pub fn filled(fill: &[f64]) -> Self {
        Self { dim: fill.len(), frames: std::iter::repeat_n(fill.to_vec(), WINDOW).collect() }
    }

    /// Window for predicting frame `n` of `sequence`: frames `n-7..n-1`, left-padded with `pad`.
    pub fn for_frame(sequence: &[Vec<f64>], n: usize, pad: &[f64]) -> Self {
        let mut w = Self::filled(pad);
        for v in &sequence[n.saturating_sub(WINDOW)..n] {
            w.push(v);
        }
        w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == WINDOW
    }

    /// Appends the newest frame, dropping the oldest once full.
    pub fn push(&mut self, codevector: &[f64]) {
        debug_assert_eq!(codevector.len(), self.dim);
        if self.frames.len() == WINDOW {
            self.frames.pop_front();
        }
        self.frames.push_back(codevector.to_vec());
    }

    pub fn frames(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.frames.iter()
    }

    pub fn newest(&self) -> Option<&[f64]> {
        self.frames.back().map(Vec::as_slice)
    }

    /// Channel-major `[D][7]` layout expected by the input convolution.
    fn to_input(&self, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.dim * WINDOW, 0.0);
        for (t, f) in self.frames.iter().enumerate() {
            for (d, v) in f.iter().enumerate() {
                out[d * WINDOW + t] = *v;
            }
        }
    }
}

/// Activations retained by the forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlcModel {
    dim: usize,
    hidden: usize,
    alpha: f64,
    /// Kernel-7 convolution, weights laid out `[H][D][7]`.
    pub conv_in: Dense,
    pub pw1: Dense,
    pub pw2: Dense,
    pub fc: Dense,
}

impl PlcModel {
    pub fn zeros(dim: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(PlcError::BadSize { dim, hidden });
        }
        Ok(Self {
            dim,
            hidden,
            alpha: LEAKY_SLOPE,
            conv_in: Dense::zeros(dim * WINDOW, hidden),
            pw1: Dense::zeros(hidden, hidden),
            pw2: Dense::zeros(hidden, hidden),
            fc: Dense::zeros(hidden, CODEBOOK_SIZE),
        })
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dim, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.conv_in = Dense::uniform(dim * WINDOW, hidden, &mut rng);
        m.pw1 = Dense::uniform(hidden, hidden, &mut rng);
        m.pw2 = Dense::uniform(hidden, hidden, &mut rng);
        m.fc = Dense::uniform(hidden, CODEBOOK_SIZE, &mut rng);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn leaky_slope(&self) -> f64 {
        self.alpha
    }

    /// A zero model with the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dim, self.hidden).expect("shape already validated");
        z.alpha = self.alpha;
        z
    }

    fn layers(&self) -> [&Dense; 4] {
        [&self.conv_in, &self.pw1, &self.pw2, &self.fc]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 4] {
        [&mut self.conv_in, &mut self.pw1, &mut self.pw2, &mut self.fc]
    }

    /// Parameter blocks in file order: conv_in.w, conv_in.b, pw1.w, pw1.b, pw2.w, pw2.b, fc.w, fc.b.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_window(&self, window: &HistoryWindow) -> Result<()> {
        if !window.is_full() {
            return Err(PlcError::WindowNotFull(window.len()));
        }
        if window.dim() != self.dim {
            return Err(PlcError::Shape { expected: self.dim, found: window.dim() });
        }
        Ok(())
    }

    pub fn forward_cached(&self, window: &HistoryWindow, cache: &mut ForwardCache) -> Result<()> {
        self.check_window(window)?;
        window.to_input(&mut cache.input);
        self.conv_in.forward(&cache.input, &mut cache.z1);
        leaky(&cache.z1, self.alpha, &mut cache.a1);
        self.pw1.forward(&cache.a1, &mut cache.z2);
        leaky(&cache.z2, self.alpha, &mut cache.a2);
        self.pw2.forward(&cache.a2, &mut cache.z3);
        leaky(&cache.z3, self.alpha, &mut cache.a3);
        let mut logits = Vec::with_capacity(CODEBOOK_SIZE);
        self.fc.forward(&cache.a3, &mut logits);
        cache.probs = softmax(&logits);
        Ok(())
    }

    /// Distribution over the 256 distilled indices of the next frame.
    pub fn forward(&self, window: &HistoryWindow) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(window, &mut cache)?;
        Ok(cache.probs)
    }

    /// Adds the gradient of `nll_loss(forward(window), target)` to `grad`.
    /// Requires `cache` from [`forward_cached`](Self::forward_cached) on the same window.
    pub fn backward(&self, cache: &ForwardCache, target: usize, grad: &mut PlcModel) -> Result<()> {
        if target >= CODEBOOK_SIZE {
            return Err(PlcError::TargetOutOfRange(target));
        }
        if cache.probs.len() != CODEBOOK_SIZE {
            return Err(PlcError::Shape { expected: CODEBOOK_SIZE, found: cache.probs.len() });
        }
        if grad.dim != self.dim || grad.hidden != self.hidden {
            return Err(PlcError::Shape { expected: self.hidden, found: grad.hidden });
        }
        let mut d = cache.probs.clone();
        d[target] -= 1.0;

        let mut da = Vec::new();
        self.fc.backward(&cache.a3, &d, &mut grad.fc, Some(&mut da));
        let dz3 = leaky_grad(&cache.z3, &da, self.alpha);
        self.pw2.backward(&cache.a2, &dz3, &mut grad.pw2, Some(&mut da));
        let dz2 = leaky_grad(&cache.z2, &da, self.alpha);
        self.pw1.backward(&cache.a1, &dz2, &mut grad.pw1, Some(&mut da));
        let dz1 = leaky_grad(&cache.z1, &da, self.alpha);
        self.conv_in.backward(&cache.input, &dz1, &mut grad.conv_in, None);
        Ok(())
    }

    /// Gradient of the loss for a single (window, target) pair.
    pub fn gradient(&self, window: &HistoryWindow, target: usize) -> Result<PlcModel> {
        let mut cache = ForwardCache::default();
        self.forward_cached(window, &mut cache)?;
        let mut grad = self.zeros_like();
        self.backward(&cache, target, &mut grad)?;
        Ok(grad)
    }

    pub fn predict_index(&self, window: &HistoryWindow) -> Result<u8> {
        Ok(argmax(&self.forward(window)?) as u8)
    }

    pub fn complexity(&self) -> ComplexityReport {
        ComplexityReport::for_shape(self.dim, self.hidden)
    }
}

fn leaky_grad(z: &[f64], da: &[f64], alpha: f64) -> Vec<f64> {
    z.iter().zip(da).map(|(&z, &g)| if z > 0.0 { g } else { alpha * g }).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn nll_loss(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or(PlcError::TargetOutOfRange(target))?;
    Ok(-p.max(NLL_FLOOR).ln())
}

pub fn forward(model: &PlcModel, window: &HistoryWindow) -> Result<Vec<f64>> {
    model.forward(window)
}

pub fn predict_index(model: &PlcModel, window: &HistoryWindow) -> Result<u8> {
    model.predict_index(window)
}

/// Analytic parameter and compute count for one prediction per 10 ms frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ComplexityReport {
    pub dim: usize,
    pub hidden: usize,
    pub param_count: usize,
    pub macs_per_frame: usize,
    /// Two FLOPs per multiply-add.
    pub flops_per_frame: usize,
    /// At 100 predictions per second.
    pub mflops: f64,
}

impl ComplexityReport {
    pub fn for_shape(dim: usize, hidden: usize) -> Self {
        let conv_in = dim * hidden * WINDOW;
        let pointwise = hidden * hidden;
        let fc = hidden * CODEBOOK_SIZE;
        let param_count = conv_in + hidden + 2 * (pointwise + hidden) + fc + CODEBOOK_SIZE;
        let macs_per_frame = conv_in + 2 * pointwise + fc;
        let flops_per_frame = 2 * macs_per_frame;
        Self {
            dim,
            hidden,
            param_count,
            macs_per_frame,
            flops_per_frame,
            mflops: flops_per_frame as f64 * crate::vq::FRAMES_PER_SECOND as f64 / 1e6,
        }
    }
}

pub fn complexity_report(model: &PlcModel) -> ComplexityReport {
    model.complexity()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_window(dim: usize, seed: u64) -> HistoryWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = HistoryWindow::empty(dim);
        for _ in 0..WINDOW {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            w.push(&v);
        }
        w
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = PlcModel::zeros(4, 8).unwrap();
        let p = m.forward(&random_window(4, 1)).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 256.0).abs() < 1e-15));
        assert_eq!(m.predict_index(&random_window(4, 2)).unwrap(), 0);
    }

    #[test]
    fn probabilities_are_a_distribution() {
        let m = PlcModel::new(6, 16, 3).unwrap();
        for s in 0..20 {
            let p = m.forward(&random_window(6, s)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn partial_window_is_rejected() {
        let m = PlcModel::zeros(2, 2).unwrap();
        let mut w = HistoryWindow::empty(2);
        w.push(&[0.0, 1.0]);
        assert!(matches!(m.forward(&w), Err(PlcError::WindowNotFull(1))));
    }

    #[test]
    fn window_shifts_out_oldest() {
        let mut w = HistoryWindow::filled(&[0.0]);
        for i in 1..=9 {
            w.push(&[i as f64]);
        }
        let got: Vec<f64> = w.frames().map(|f| f[0]).collect();
        assert_eq!(got, vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let seq: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 + 10.0]).collect();
        let w = HistoryWindow::for_frame(&seq, 3, &[-1.0]);
        let got: Vec<f64> = w.frames().map(|f| f[0]).collect();
        assert_eq!(got, vec![-1.0, -1.0, -1.0, -1.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn nll_values() {
        let mut p = vec![0.0; 256];
        p[5] = 1.0;
        assert_eq!(nll_loss(&p, 5).unwrap(), 0.0);
        assert!((nll_loss(&p, 6).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
        let u = vec![1.0 / 256.0; 256];
        assert!((nll_loss(&u, 17).unwrap() - 256f64.ln()).abs() < 1e-12);
        assert!(matches!(nll_loss(&u, 256), Err(PlcError::TargetOutOfRange(256))));
    }

    #[test]
    fn zero_model_bias_gradient_is_probs_minus_onehot() {
        let m = PlcModel::zeros(3, 5).unwrap();
        let g = m.gradient(&random_window(3, 4), 9).unwrap();
        for (i, &v) in g.fc.bias.iter().enumerate() {
            let want = 1.0 / 256.0 - if i == 9 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_logit_row_gradient_follows_its_probability() {
        let m = PlcModel::new(3, 5, 7).unwrap();
        let w = random_window(3, 5);
        let mut cache = ForwardCache::default();
        m.forward_cached(&w, &mut cache).unwrap();
        let mut g = m.zeros_like();
        m.backward(&cache, 0, &mut g).unwrap();
        for j in 1..CODEBOOK_SIZE {
            assert_eq!(g.fc.bias[j], cache.probs[j]);
            assert!(g.fc.bias[j] != 0.0);
            for h in 0..5 {
                assert!((g.fc.weight[j * 5 + h] - cache.probs[j] * cache.a3[h]).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = PlcModel::new(3, 6, 11).unwrap();
        let w = random_window(3, 12);
        let target = 42;
        let g = m.gradient(&w, target).unwrap();
        let loss = |m: &PlcModel| nll_loss(&m.forward(&w).unwrap(), target).unwrap();
        let h = 1e-5;
        let grads = g.params();
        for block in 0..8 {
            for i in 0..m.params()[block].len() {
                let mut plus = m.clone();
                plus.params_mut()[block][i] += h;
                let mut minus = m.clone();
                minus.params_mut()[block][i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads[block][i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "block {block} index {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn causality_window_ignores_other_frames() {
        let m = PlcModel::new(2, 8, 1).unwrap();
        let seq: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let pad = [0.0, 0.0];
        let n = 12;
        let base = m.forward(&HistoryWindow::for_frame(&seq, n, &pad)).unwrap();
        for perturbed in [n - 8, n, n + 1] {
            let mut s = seq.clone();
            s[perturbed] = vec![9.0, -9.0];
            assert_eq!(m.forward(&HistoryWindow::for_frame(&s, n, &pad)).unwrap(), base);
        }
        let mut s = seq.clone();
        s[n - 1] = vec![9.0, -9.0];
        assert_ne!(m.forward(&HistoryWindow::for_frame(&s, n, &pad)).unwrap(), base);
    }

    #[test]
    fn complexity_matches_enumeration() {
        let m = PlcModel::zeros(16, 256).unwrap();
        let r = m.complexity();
        assert_eq!(r.param_count, m.param_count());
        assert_eq!(r.param_count, 226_304);
        assert!(PlcModel::zeros(16, 0).is_err());
    }

    #[test]
    fn flops_quadratic_term() {
        let a = ComplexityReport::for_shape(16, 128);
        let b = ComplexityReport::for_shape(16, 256);
        // f(H) = 2((7D + 256)H + 2H²) so f(2H) - 2f(H) = 8H².
        assert_eq!(b.flops_per_frame - 2 * a.flops_per_frame, 8 * 128 * 128);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.2]), 1);
        assert_eq!(argmax(&[0.5; 4]), 0);
    }
}
