//! Named-parameter traversal shared by every model container.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Anything that owns named parameter tensors.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

/// True for parameters belonging to a bottleneck adapter.
pub fn is_adapter_param(name: &str) -> bool {
    name.split('.').any(|part| part == "adapters")
}

/// True for the pre-training MLM head, which is dropped before fine-tuning.
pub fn is_mlm_head_param(name: &str) -> bool {
    name.starts_with("mlm_head.")
}

/// True for a downstream task head.
pub fn is_task_head_param(name: &str) -> bool {
    name.starts_with("task_head.")
}

/// Exact parameter count. The pre-training MLM head is excluded, matching
/// the parameters a model carries into fine-tuning. With `tunable_only`,
/// frozen tensors are skipped as well.
pub fn count_parameters<M: Parameterized + ?Sized>(model: &M, tunable_only: bool) -> usize {
    let mut n = 0;
    model.visit(&mut |name, t| {
        if !is_mlm_head_param(name) && (!tunable_only || t.requires_grad()) {
            n += t.numel();
        }
    });
    n
}

/// Count of every parameter, heads included.
pub fn count_all_parameters<M: Parameterized + ?Sized>(model: &M) -> usize {
    let mut n = 0;
    model.visit(&mut |_, t| n += t.numel());
    n
}

/// Freezes every parameter for which `tunable` returns false and unfreezes
/// the rest.
pub fn apply_freeze<M: Parameterized + ?Sized>(model: &mut M, tunable: &dyn Fn(&str) -> bool) {
    model.visit_mut(&mut |name, t| t.set_requires_grad(tunable(name)));
}

pub fn zero_grads<M: Parameterized + ?Sized>(model: &mut M) {
    model.visit_mut(&mut |_, t| t.zero_grad());
}

/// Copies gradients of the named parameters bound on `tape` into the
/// parameters' gradient slots (adding to what is there).
pub fn accumulate_grads<M: Parameterized + ?Sized>(model: &mut M, tape: &Tape) {
    model.visit_mut(&mut |name, t| {
        if t.requires_grad() {
            if let Some(g) = tape.param_grad(name) {
                t.accumulate_grad(g);
            }
        }
    });
}

/// All parameter values concatenated in visit order.
pub fn flatten<M: Parameterized + ?Sized>(model: &M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit(&mut |_, t| out.extend_from_slice(t.data()));
    out
}

/// All gradients concatenated in visit order (zeros where absent).
pub fn flatten_grads<M: Parameterized + ?Sized>(model: &M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit(&mut |_, t| match t.grad() {
        Some(g) => out.extend_from_slice(g),
        None => out.extend(std::iter::repeat_n(0.0, t.numel())),
    });
    out
}

/// Inverse of [`flatten`].
pub fn unflatten<M: Parameterized + ?Sized>(model: &mut M, values: &[f64]) -> Result<()> {
    let mut offset = 0;
    let mut overflow = false;
    model.visit_mut(&mut |_, t| {
        let n = t.numel();
        if offset + n > values.len() {
            overflow = true;
            return;
        }
        t.data_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    });
    if overflow || offset != values.len() {
        return Err(Error::shape(format!("unflatten: {} values for model", values.len())));
    }
    Ok(())
}

/// SHA-256 over the names, shapes and values of the parameters selected by
/// `filter`, in visit order.
pub fn param_digest<M: Parameterized + ?Sized>(model: &M, filter: &dyn Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    model.visit(&mut |name, t| {
        if filter(name) {
            h.update(name.as_bytes());
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    });
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameter initialization policy.
pub enum Init<'a> {
    /// `N(0, INIT_STD^2)` weights.
    Normal(&'a mut ChaCha8Rng),
    /// All-zero weights; allocation is lazy, so this is cheap even for
    /// large configurations.
    Zeros,
}

impl Init<'_> {
    pub fn weight(&mut self, shape: &[usize]) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Normal(rng) => {
                let dist = Normal::new(0.0, INIT_STD).expect("valid std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| dist.sample(&mut **rng)).collect();
                Tensor::new(shape.to_vec(), data).expect("shape matches")
            }
        }
    }
}
