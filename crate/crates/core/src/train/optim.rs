use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameterized;

/// AdamW hyperparameters (learning rate comes from the schedule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(Error::config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Per-parameter moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: HashMap<String, Vec<f64>>,
    pub v: HashMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        OptimizerState { config, step: 0, m: HashMap::new(), v: HashMap::new() }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<M: Parameterized + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit(&mut |_, t| {
        if let Some(g) = t.grad() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        model.visit_mut(&mut |_, t| {
            if let Some(g) = t.grad().map(|g| g.iter().map(|v| v * (scale - 1.0)).collect::<Vec<_>>()) {
                t.accumulate_grad(&g);
            }
        });
    }
    norm
}

/// One AdamW update with decoupled weight decay
/// `p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Frozen tensors and tensors without a gradient are left untouched. If any
/// gradient is non-finite the whole step is skipped (nothing changes, the
/// step counter included) and `false` is returned.
pub fn adamw_step<M: Parameterized + ?Sized>(model: &mut M, state: &mut OptimizerState, lr: f64) -> Result<bool> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be finite and nonnegative, got {lr}")));
    }
    let mut finite = true;
    model.visit(&mut |_, t| {
        if t.requires_grad() {
            if let Some(g) = t.grad() {
                finite &= g.iter().all(|v| v.is_finite());
            }
        }
    });
    if !finite {
        log::warn!("non-finite gradient; optimizer step {} skipped", state.step + 1);
        return Ok(false);
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (ms, vs) = (&mut state.m, &mut state.v);
    model.visit_mut(&mut |name, p| {
        if !p.requires_grad() {
            return;
        }
        let Some(g) = p.grad().map(<[f64]>::to_vec) else { return };
        let m = ms.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
        let v = vs.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
        let decay = 1.0 - lr * c.weight_decay;
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *x = *x * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    });
    Ok(true)
}
