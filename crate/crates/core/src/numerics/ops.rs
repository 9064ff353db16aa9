//! Value-level (non-recording) versions of the core operations.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor applied to the second distribution of a KL divergence before the log.
pub const KL_EPS: f64 = 1e-12;

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-12;

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return Err(Error::shape(format!("axis {axis} out of range for shape {:?}", x.shape())));
    }
    let data = kernels::softmax_axis(x.data(), x.shape(), axis);
    Tensor::new(x.shape().to_vec(), data)
}

/// `sum p * ln(p / max(q, KL_EPS))`, with `0 * ln(0 / q) = 0`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.numel() != q.numel() {
        return Err(Error::shape(format!(
            "kl_divergence length mismatch: {} vs {}",
            p.numel(),
            q.numel()
        )));
    }
    Ok(kl_slice(p.data(), q.data()))
}

pub(crate) fn kl_slice(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(KL_EPS).ln()))
        .sum()
}

/// Cosine similarity. A zero-norm argument yields 0 (with a warning) rather
/// than an error, since all-padding rows can legitimately produce one.
pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<f64> {
    if u.numel() != v.numel() {
        return Err(Error::shape(format!(
            "cosine_similarity length mismatch: {} vs {}",
            u.numel(),
            v.numel()
        )));
    }
    Ok(cosine_slice(u.data(), v.data()).0)
}

/// Returns (cosine, |u|, |v|).
pub(crate) fn cosine_slice(u: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let nu = kernels::dot(u, u).sqrt();
    let nv = kernels::dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine similarity of a zero-norm vector; using 0");
        return (0.0, nu, nv);
    }
    let c = kernels::dot(u, v) / (nu * nv);
    (c.clamp(-1.0, 1.0), nu, nv)
}

pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| kernels::gelu(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Normalizes over the last axis, then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::shape(format!(
            "layer_norm gain/bias length {}/{} does not match last axis {d}",
            gain.numel(),
            bias.numel()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config("layer_norm eps must be positive"));
    }
    let (out, _, _) = kernels::layer_norm_rows(x.data(), gain.data(), bias.data(), eps);
    Tensor::new(x.shape().to_vec(), out)
}

/// `-sum one_hot * log softmax(logits)`; exactly 0 for an all-zero target.
pub fn cross_entropy(logits: &Tensor, one_hot: &Tensor) -> Result<f64> {
    if logits.numel() != one_hot.numel() {
        return Err(Error::shape(format!(
            "cross_entropy length mismatch: {} vs {}",
            logits.numel(),
            one_hot.numel()
        )));
    }
    if one_hot.data().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut logp = vec![0.0; logits.numel()];
    kernels::log_softmax(logits.data(), &mut logp);
    Ok(-one_hot.data().iter().zip(&logp).filter(|(&y, _)| y != 0.0).map(|(y, lp)| y * lp).sum::<f64>())
}
