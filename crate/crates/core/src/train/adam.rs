//! Adam optimizer with bias correction.

use super::TrainError;
use crate::model::PanTinyModel;
use crate::tensor::{Gradients, Tensor, TensorError};
use std::collections::BTreeMap;

pub const ADAM_EPS: f32 = 1e-8;
pub const ADAM_BETAS: (f32, f32) = (0.9, 0.999);

/// First/second moment estimates of one parameter.
#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// In-place Adam update of one parameter array.
///
/// Standard bias-corrected form: `m` and `v` are exponential moving averages
/// of the gradient and its square; the step is
/// `lr * m_hat / (sqrt(v_hat) + eps)` with the epsilon outside the square
/// root. Bias corrections `1 - beta^t` are computed in f64.
pub fn adam_update(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f32,
    betas: (f32, f32),
    eps: f32,
) {
    debug_assert!(t >= 1, "t counts completed steps starting at 1");
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), m.len());
    debug_assert_eq!(param.len(), v.len());
    let (b1, b2) = betas;
    let mc = (1.0 / (1.0 - (b1 as f64).powi(t as i32))) as f32;
    let vc = (1.0 / (1.0 - (b2 as f64).powi(t as i32))) as f32;
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] * mc;
        let v_hat = v[i] * vc;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state over all model parameters, keyed by parameter name. Moments
/// are allocated lazily on the first step and match their parameter's shape
/// thereafter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub betas: (f32, f32),
    pub eps: f32,
    t: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(betas: (f32, f32), eps: f32) -> Self {
        Adam { betas, eps, t: 0, state: BTreeMap::new() }
    }

    /// Completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one optimization step to every model parameter. Every parameter
    /// must have a gradient in `grads`; a missing one is a contract error
    /// naming the parameter.
    pub fn step(
        &mut self,
        model: &mut PanTinyModel,
        grads: &Gradients,
        lr: f32,
    ) -> Result<(), TrainError> {
        self.t += 1;
        let t = self.t;
        let (betas, eps) = (self.betas, self.eps);
        let state = &mut self.state;
        model.update_params(&mut |name, p| {
            let g = grads.get(p).ok_or_else(|| TensorError::Invalid {
                op: "adam_step",
                msg: format!("missing gradient for parameter `{name}`"),
            })?;
            let n = p.shape().numel();
            let slot = state
                .entry(name.to_string())
                .or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
            let mut data = p.data().to_vec();
            adam_update(&mut data, g, &mut slot.m, &mut slot.v, t, lr, betas, eps);
            Tensor::from_vec(p.shape(), data, true)
        })?;
        Ok(())
    }
}
