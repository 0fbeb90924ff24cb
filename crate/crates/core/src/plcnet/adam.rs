use super::{PlcError, PlcModel, Result};

/// Adam moments, one buffer per parameter block of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &PlcModel, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is non-finite.
pub fn adam_step(model: &mut PlcModel, grads: &PlcModel, state: &mut AdamState) -> Result<()> {
    let g = grads.params();
    if g.len() != state.m.len() {
        return Err(PlcError::Shape { expected: state.m.len(), found: g.len() });
    }
    for (b, (gb, mb)) in g.iter().zip(&state.m).enumerate() {
        if gb.len() != mb.len() {
            return Err(PlcError::Shape { expected: mb.len(), found: gb.len() });
        }
        if gb.iter().any(|x| !x.is_finite()) {
            return Err(PlcError::NonFiniteGradient(b));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((p, gb), m), v) in model.params_mut().into_iter().zip(g).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            let gi = gb[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
