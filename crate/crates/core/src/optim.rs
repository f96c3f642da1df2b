//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::{ModelParams, ParamGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(shape_of: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: shape_of.zeros_like(),
            v: shape_of.zeros_like(),
            step: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Clear moments and the step counter, keeping hyper-parameters.
    pub fn reset(&mut self) {
        self.m.scale(0.0);
        self.v.scale(0.0);
        self.step = 0;
    }
}

/// One in-place Adam step. Fails without touching anything if a gradient is
/// non-finite.
pub fn step_in_place(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut OptimizerState,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(FedError::Dimension("gradient/moment shape mismatch".into()));
    }
    if !grads.all_finite() {
        return Err(FedError::Diverged(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, wd, eps) = (state.lr, state.weight_decay, state.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}

/// Functional form: returns updated parameters and optimizer state.
pub fn optimizer_step(
    params: &ModelParams,
    grads: &ParamGrads,
    state: &OptimizerState,
) -> Result<(ModelParams, OptimizerState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    step_in_place(&mut p, grads, &mut s)?;
    Ok((p, s))
}
