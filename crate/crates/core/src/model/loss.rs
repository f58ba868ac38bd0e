//! Averaged soft-Dice loss over connectivity channels.
//!
//! `L = 1 − (1/C) Σ_i 2 Σ_x p_i y_i / (Σ_x (p_i + y_i) + ε)`, with ε in the
//! denominator only. An empty channel predicted as all zeros therefore scores
//! 0, not 1; the per-channel terms are kept so callers can see that.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::connectivity::ConnectivityCube;
use crate::error::{Error, Result};

pub const DEFAULT_LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub loss: f64,
    /// Dice term of each channel, averaged over the batch.
    pub terms: Vec<f64>,
    pub eps: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("loss epsilon {eps} must be positive")));
    }
    Ok(())
}

/// `(Σ p·y, Σ (p + y))` of one channel.
fn sums<T: Scalar>(p: &[T], y: &[T]) -> (f64, f64) {
    p.iter().zip(y).fold((0.0, 0.0), |(i, s), (a, b)| {
        let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
        (i + a * b, s + a + b)
    })
}

/// Loss of a single cube given as channel-major slices.
pub fn dice_loss<T: Scalar>(p: &[T], y: &[T], channels: usize, eps: f64) -> Result<LossValue> {
    check_eps(eps)?;
    if p.len() != y.len() || channels == 0 || p.len() % channels != 0 {
        return Err(Error::invalid(format!(
            "loss inputs of {} and {} values do not split into {channels} channels",
            p.len(),
            y.len()
        )));
    }
    let n = p.len() / channels;
    let terms: Vec<f64> = (0..channels)
        .map(|c| {
            let (i, s) = sums(&p[c * n..(c + 1) * n], &y[c * n..(c + 1) * n]);
            2.0 * i / (s + eps)
        })
        .collect();
    let loss = 1.0 - terms.iter().sum::<f64>() / channels as f64;
    Ok(LossValue { loss, terms, eps })
}

pub fn dice_connectivity_loss(p: &ConnectivityCube, y: &ConnectivityCube, eps: f64) -> Result<LossValue> {
    if p.shape() != y.shape() {
        return Err(Error::invalid(format!(
            "prediction {} and label {} differ in shape",
            p.shape(),
            y.shape()
        )));
    }
    dice_loss(p.data(), y.data(), crate::voxel::CHANNELS, eps)
}

/// Batch loss (mean of per-sample losses) and its gradient w.r.t. `p`.
pub fn dice_loss_with_grad<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>, eps: f64) -> Result<(LossValue, Tensor<T>)> {
    check_eps(eps)?;
    if p.n != y.n || p.c != y.c || p.shape != y.shape {
        return Err(Error::invalid("prediction and label tensors differ in shape"));
    }
    let (nb, nc, plane) = (p.n, p.c, p.plane());
    let mut grad = Tensor::zeros(nb, nc, p.shape);
    let mut terms = vec![0.0f64; nc];
    // dL/dp = −(2 / (N·C)) · (y·S − I) / S², S including ε
    let scale = 2.0 / (nb * nc) as f64;
    for i in 0..nb {
        for c in 0..nc {
            let (pc, yc) = (p.channel(i, c), y.channel(i, c));
            let (inter, sum) = sums(pc, yc);
            let s = sum + eps;
            terms[c] += 2.0 * inter / s / nb as f64;
            let off = (i * nc + c) * plane;
            for (g, yv) in grad.data[off..off + plane].iter_mut().zip(yc) {
                *g = T::from_f64(-scale * (yv.to_f64().unwrap() * s - inter) / (s * s));
            }
        }
    }
    let loss = 1.0 - terms.iter().sum::<f64>() / nc as f64;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric("non-finite Dice loss or gradient".into()));
    }
    Ok((LossValue { loss, terms, eps }, grad))
}
