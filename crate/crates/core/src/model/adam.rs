//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::net::ModelParams;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0) || !self.lr.is_finite() || !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments, one buffer per parameter tensor (empty for
/// running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = |trainable: bool, n: usize| vec![T::zero(); if trainable { n } else { 0 }];
        let m: Vec<Vec<T>> = params.tensors.iter().map(|t| zeros(t.trainable, t.value.len())).collect();
        Self {
            t: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One update from the gradients stored in `params`. Fails before touching
/// anything if a gradient is not finite.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if state.m.len() != params.tensors.len() {
        return Err(Error::invalid("optimizer state does not match the parameters"));
    }
    if params.tensors.iter().any(|t| t.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::Numeric("non-finite gradient passed to Adam".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (k, t) in params.tensors.iter_mut().enumerate() {
        if !t.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for j in 0..t.value.len() {
            let g = t.grad[j].to_f64().unwrap();
            let mj = cfg.beta1 * m[j].to_f64().unwrap() + (1.0 - cfg.beta1) * g;
            let vj = cfg.beta2 * v[j].to_f64().unwrap() + (1.0 - cfg.beta2) * g * g;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let step = cfg.lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            t.value[j] = T::from_f64(t.value[j].to_f64().unwrap() - step);
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(())
}
