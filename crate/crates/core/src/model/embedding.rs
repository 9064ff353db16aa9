use super::config::ModelConfig;
use super::encoder::{Mode, TokenBatch};
use super::params::Init;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Factorized token embedding `E = E_low W_e` plus positions, optional
/// token types and a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    /// `|V| x r`
    pub e_low: Tensor,
    /// `r x d`; `None` stands for the fixed identity when `r == d`.
    pub w_e: Option<Tensor>,
    /// `max_positions x d`
    pub positional: Tensor,
    /// `2 x d`
    pub token_type: Option<Tensor>,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl EmbeddingParams {
    pub fn new(cfg: &ModelConfig, init: &mut Init) -> Self {
        let d = cfg.hidden_dim;
        EmbeddingParams {
            e_low: init.weight(&[cfg.vocab_size, cfg.embedding_rank]),
            w_e: cfg.is_factorized().then(|| init.weight(&[cfg.embedding_rank, d])),
            positional: init.weight(&[cfg.max_positions, d]),
            token_type: cfg.token_types.then(|| init.weight(&[2, d])),
            ln_gain: Tensor::full(&[d], 1.0),
            ln_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.e_low"), &self.e_low);
        if let Some(w) = &self.w_e {
            f(&format!("{prefix}.w_e"), w);
        }
        f(&format!("{prefix}.positional"), &self.positional);
        if let Some(t) = &self.token_type {
            f(&format!("{prefix}.token_type"), t);
        }
        f(&format!("{prefix}.ln_gain"), &self.ln_gain);
        f(&format!("{prefix}.ln_bias"), &self.ln_bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.e_low"), &mut self.e_low);
        if let Some(w) = &mut self.w_e {
            f(&format!("{prefix}.w_e"), w);
        }
        f(&format!("{prefix}.positional"), &mut self.positional);
        if let Some(t) = &mut self.token_type {
            f(&format!("{prefix}.token_type"), t);
        }
        f(&format!("{prefix}.ln_gain"), &mut self.ln_gain);
        f(&format!("{prefix}.ln_bias"), &mut self.ln_bias);
    }

    pub fn hidden_dim(&self) -> usize {
        self.positional.last_dim()
    }

    /// `E = E_low W_e` as a tape node, `|V| x d`.
    pub fn effective_var(&self, tape: &mut Tape, prefix: &str) -> Result<Var> {
        let e_low = tape.param(&format!("{prefix}.e_low"), &self.e_low);
        match &self.w_e {
            Some(w) => {
                let w = tape.param(&format!("{prefix}.w_e"), w);
                tape.matmul(e_low, w)
            }
            None => Ok(e_low),
        }
    }

    /// `E = E_low W_e` as a value.
    pub fn effective(&self) -> Tensor {
        let mut tape = Tape::new();
        let e = self.effective_var(&mut tape, "e").expect("embedding shapes are consistent");
        tape.value(e).clone()
    }

    /// Row `t` is `E_low[token] W_e + positional[t] (+ token_type[0])`,
    /// followed by layer norm and (train mode) dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        prefix: &str,
        batch: &TokenBatch,
        cfg: &ModelConfig,
        mode: &mut Mode,
    ) -> Result<Var> {
        let vocab = self.e_low.shape()[0];
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::input(format!("token id {bad} out of range for vocabulary of {vocab}")));
        }
        let max_pos = self.positional.shape()[0];
        if batch.seq > max_pos {
            return Err(Error::input(format!("sequence length {} exceeds max_positions {max_pos}", batch.seq)));
        }
        let e_low = tape.param(&format!("{prefix}.e_low"), &self.e_low);
        let mut tok = tape.gather_rows(e_low, &batch.ids)?;
        if let Some(w) = &self.w_e {
            let w = tape.param(&format!("{prefix}.w_e"), w);
            tok = tape.matmul(tok, w)?;
        }
        let pos_table = tape.param(&format!("{prefix}.positional"), &self.positional);
        let positions: Vec<usize> = (0..batch.positions()).map(|i| i % batch.seq).collect();
        let pos = tape.gather_rows(pos_table, &positions)?;
        let mut terms = vec![(tok, 1.0), (pos, 1.0)];
        if let Some(tt) = &self.token_type {
            let table = tape.param(&format!("{prefix}.token_type"), tt);
            let types = tape.gather_rows(table, &vec![0; batch.positions()])?;
            terms.push((types, 1.0));
        }
        let sum = tape.weighted_sum(&terms)?;
        let g = tape.param(&format!("{prefix}.ln_gain"), &self.ln_gain);
        let b = tape.param(&format!("{prefix}.ln_bias"), &self.ln_bias);
        let normed = tape.layer_norm(sum, g, b, cfg.layer_norm_eps)?;
        Ok(mode.dropout(tape, normed, cfg.dropout_prob))
    }
}
