//! Bias-corrected Adam over a fixed group of parameter arrays.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// First/second moment buffers for a group of parameter arrays, plus the
/// shared step counter. The array layout is fixed at construction; every
/// step must pass the same shapes in the same order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, array_lens: &[usize]) -> Result<Self> {
        if hyper.lr <= 0.0 {
            return Err(Error::ConfigError(format!(
                "learning rate {} must be positive",
                hyper.lr
            )));
        }
        Ok(Self {
            m: array_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: array_lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            hyper,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update across the whole parameter group. The
/// step counter increments exactly once per call.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::NumericsError(format!(
            "adam group size mismatch: state {}, params {}, grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != state.m[k].len() || g.len() != state.m[k].len() {
            return Err(Error::NumericsError(format!(
                "adam array {k} length mismatch: state {}, params {}, grads {}",
                state.m[k].len(),
                p.len(),
                g.len()
            )));
        }
    }

    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);

    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..p.len() {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}
