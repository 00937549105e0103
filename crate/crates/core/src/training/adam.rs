use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter, in
/// [`ModelParams::visit_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update of a single tensor. `step` is the 1-based
/// index of this update.
pub fn adam_update(
    param: &mut Tensor,
    grad: &Tensor,
    first: &mut Tensor,
    second: &mut Tensor,
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape()
        || param.shape() != first.shape()
        || param.shape() != second.shape()
    {
        return Err(Error::shape("adam_update", param.shape(), grad.shape()));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = *cfg;
    let c1 = 1.0 - beta1.powi(step as i32);
    let c2 = 1.0 - beta2.powi(step as i32);
    let (p, g) = (param.data_mut(), grad.data());
    let (m, v) = (first.data_mut(), second.data_mut());
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Applies one Adam step to every parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != state.first.len() {
        return Err(Error::Invalid(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    let step = state.step;
    let mut i = 0;
    let mut result = Ok(());
    params.visit_mut(|_, p| {
        if result.is_ok() {
            result = adam_update(
                p,
                &grads[i],
                &mut state.first[i],
                &mut state.second[i],
                step,
                cfg,
            );
        }
        i += 1;
    });
    result
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
