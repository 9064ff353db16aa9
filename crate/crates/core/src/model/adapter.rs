use super::config::Nonlinearity;
use super::params::Init;
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

/// Residual bottleneck `x + W_up act(W_down x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// `d x b`
    pub down_w: Tensor,
    pub down_b: Tensor,
    /// `b x d`
    pub up_w: Tensor,
    pub up_b: Tensor,
}

impl AdapterParams {
    /// `W_down ~ N(0, 0.02^2)`, `W_up = 0`, zero biases: the identity map.
    pub fn new(hidden_dim: usize, bottleneck: usize, init: &mut Init) -> Self {
        AdapterParams {
            down_w: init.weight(&[hidden_dim, bottleneck]),
            down_b: Tensor::zeros(&[bottleneck]),
            up_w: Tensor::zeros(&[bottleneck, hidden_dim]),
            up_b: Tensor::zeros(&[hidden_dim]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.down_w"), &self.down_w);
        f(&format!("{prefix}.down_b"), &self.down_b);
        f(&format!("{prefix}.up_w"), &self.up_w);
        f(&format!("{prefix}.up_b"), &self.up_b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.down_w"), &mut self.down_w);
        f(&format!("{prefix}.down_b"), &mut self.down_b);
        f(&format!("{prefix}.up_w"), &mut self.up_w);
        f(&format!("{prefix}.up_b"), &mut self.up_b);
    }

    pub fn forward(&self, tape: &mut Tape, prefix: &str, x: Var, act: Nonlinearity) -> Result<Var> {
        let dw = tape.param(&format!("{prefix}.down_w"), &self.down_w);
        let db = tape.param(&format!("{prefix}.down_b"), &self.down_b);
        let uw = tape.param(&format!("{prefix}.up_w"), &self.up_w);
        let ub = tape.param(&format!("{prefix}.up_b"), &self.up_b);
        let down = tape.linear(x, dw, Some(db))?;
        let h = match act {
            Nonlinearity::Relu => tape.relu(down),
            Nonlinearity::Gelu => tape.gelu(down),
        };
        let up = tape.linear(h, uw, Some(ub))?;
        tape.weighted_sum(&[(up, 1.0), (x, 1.0)])
    }
}

/// Applies one adapter to a value tensor whose last axis is `d`.
pub fn adapter_apply(x: &Tensor, adapter: &AdapterParams, act: Nonlinearity) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = adapter.forward(&mut tape, "adapter", xv, act)?;
    tape.value(out).clone().reshape(x.shape().to_vec())
}

/// The attention-side and FFN-side adapters of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub att: AdapterParams,
    pub mlp: AdapterParams,
}

impl AdapterPair {
    pub fn new(hidden_dim: usize, bottleneck: usize, init: &mut Init) -> Self {
        AdapterPair {
            att: AdapterParams::new(hidden_dim, bottleneck, init),
            mlp: AdapterParams::new(hidden_dim, bottleneck, init),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.att.visit(&format!("{prefix}.att"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.att.visit_mut(&format!("{prefix}.att"), f);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), f);
    }
}
