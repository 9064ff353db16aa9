use super::config::ModelConfig;
use super::embedding::EmbeddingParams;
use super::params::Init;
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

/// Dense + GELU + layer norm, decoded against the tied effective embedding
/// `E = E_low W_e` (no decoder bias).
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl MlmHead {
    pub fn new(cfg: &ModelConfig, init: &mut Init) -> Self {
        let d = cfg.hidden_dim;
        MlmHead {
            dense_w: init.weight(&[d, d]),
            dense_b: Tensor::zeros(&[d]),
            ln_gain: Tensor::full(&[d], 1.0),
            ln_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.dense_w"), &self.dense_w);
        f(&format!("{prefix}.dense_b"), &self.dense_b);
        f(&format!("{prefix}.ln_gain"), &self.ln_gain);
        f(&format!("{prefix}.ln_bias"), &self.ln_bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.dense_w"), &mut self.dense_w);
        f(&format!("{prefix}.dense_b"), &mut self.dense_b);
        f(&format!("{prefix}.ln_gain"), &mut self.ln_gain);
        f(&format!("{prefix}.ln_bias"), &mut self.ln_bias);
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        prefix: &str,
        hidden: Var,
        embeddings: &EmbeddingParams,
        embeddings_prefix: &str,
        eps: f64,
    ) -> Result<Var> {
        let w = tape.param(&format!("{prefix}.dense_w"), &self.dense_w);
        let b = tape.param(&format!("{prefix}.dense_b"), &self.dense_b);
        let g = tape.param(&format!("{prefix}.ln_gain"), &self.ln_gain);
        let beta = tape.param(&format!("{prefix}.ln_bias"), &self.ln_bias);
        let h = tape.linear(hidden, w, Some(b))?;
        let h = tape.gelu(h);
        let h = tape.layer_norm(h, g, beta, eps)?;
        let e = embeddings.effective_var(tape, embeddings_prefix)?;
        tape.matmul_nt(h, e)
    }
}
