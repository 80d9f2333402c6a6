use crate::model::ModelParams;
use crate::{Error, Result};

/// Adam moments, step counter and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState) -> Result<()> {
    let grad_tensors = grads.tensors();
    for (name, g) in &grad_tensors {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);
    let p_tensors = params.tensors_mut();
    let m_tensors = state.m.tensors_mut();
    let v_tensors = state.v.tensors_mut();
    for (((_, p), (_, m)), ((_, v), (_, g))) in p_tensors
        .into_iter()
        .zip(m_tensors)
        .zip(v_tensors.into_iter().zip(grad_tensors))
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(())
}
