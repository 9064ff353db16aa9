//! Inputs, execution mode and the interface shared by teacher and student.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::Parameterized;
use crate::error::{Error, Result};
use crate::numerics::{AttnDims, Tape, Tensor, Var};

/// Token ids of a padded batch, row-major `batch x seq`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
    /// Attention validity per position; `false` marks padding.
    pub valid: Vec<bool>,
}

impl TokenBatch {
    pub fn new(ids: Vec<usize>, valid: Vec<bool>, batch: usize, seq: usize) -> Result<Self> {
        if ids.len() != batch * seq || valid.len() != batch * seq {
            return Err(Error::shape(format!(
                "token batch of {}x{seq} needs {} ids and mask entries, got {} and {}",
                batch,
                batch * seq,
                ids.len(),
                valid.len()
            )));
        }
        Ok(TokenBatch { ids, batch, seq, valid })
    }

    /// Pads rows to the longest one with `pad_id`.
    pub fn from_rows(rows: &[Vec<u32>], pad_id: u32) -> Result<Self> {
        let seq = rows.iter().map(Vec::len).max().unwrap_or(0);
        if rows.is_empty() || seq == 0 {
            return Err(Error::input("empty token batch"));
        }
        let mut ids = Vec::with_capacity(rows.len() * seq);
        let mut valid = Vec::with_capacity(rows.len() * seq);
        for row in rows {
            for j in 0..seq {
                match row.get(j) {
                    Some(&id) => {
                        ids.push(id as usize);
                        valid.push(id != pad_id);
                    }
                    None => {
                        ids.push(pad_id as usize);
                        valid.push(false);
                    }
                }
            }
        }
        Self::new(ids, valid, rows.len(), seq)
    }

    /// Every position valid.
    pub fn unpadded(ids: Vec<usize>, batch: usize, seq: usize) -> Result<Self> {
        let valid = vec![true; ids.len()];
        Self::new(ids, valid, batch, seq)
    }

    pub fn positions(&self) -> usize {
        self.batch * self.seq
    }

    pub(crate) fn attn_dims(&self, cfg: &ModelConfig) -> AttnDims {
        AttnDims { batch: self.batch, seq: self.seq, heads: cfg.num_heads, head_dim: cfg.head_dim() }
    }
}

/// Train mode carries the dropout stream; eval mode disables dropout.
pub enum Mode {
    Eval,
    Train(ChaCha8Rng),
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub(crate) fn dropout(&mut self, tape: &mut Tape, v: Var, p: f64) -> Var {
        match self {
            Mode::Eval => v,
            Mode::Train(rng) => tape.dropout(v, p, rng),
        }
    }
}

/// Tape handles for one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    /// Embedding-layer output, `[batch*seq, d]`.
    pub embedding: Var,
    /// Output of each layer/iteration, `[batch*seq, d]`.
    pub hidden: Vec<Var>,
    /// Pre-dropout attention probabilities, `[batch, heads, seq, seq]`.
    pub attention: Vec<Var>,
}

impl EncoderVars {
    pub fn last_hidden(&self) -> Var {
        *self.hidden.last().unwrap_or(&self.embedding)
    }
}

/// Values of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `[batch, seq, d]`
    pub embedding_output: Tensor,
    /// One `[batch, seq, d]` tensor per layer/iteration.
    pub hidden_states: Vec<Tensor>,
    /// One `[batch, heads, seq, seq]` tensor per layer/iteration.
    pub attention_maps: Vec<Tensor>,
    /// `[batch, seq, vocab]`; absent when no head was evaluated.
    pub logits: Option<Tensor>,
}

impl ForwardTrace {
    pub fn collect(tape: &Tape, vars: &EncoderVars, logits: Option<Var>, batch: &TokenBatch) -> Result<Self> {
        let as_bsd = |v: Var| -> Result<Tensor> {
            let t = tape.value(v).clone();
            let last = t.last_dim();
            t.reshape(vec![batch.batch, batch.seq, last])
        };
        Ok(ForwardTrace {
            embedding_output: as_bsd(vars.embedding)?,
            hidden_states: vars.hidden.iter().map(|&v| as_bsd(v)).collect::<Result<_>>()?,
            attention_maps: vars.attention.iter().map(|&v| tape.value(v).clone()).collect(),
            logits: logits.map(as_bsd).transpose()?,
        })
    }

    /// Bitwise equality of every tensor in the trace.
    pub fn bit_eq(&self, other: &ForwardTrace) -> bool {
        let all = |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y));
        self.embedding_output.bit_eq(&other.embedding_output)
            && all(&self.hidden_states, &other.hidden_states)
            && all(&self.attention_maps, &other.attention_maps)
            && match (&self.logits, &other.logits) {
                (Some(a), Some(b)) => a.bit_eq(b),
                (None, None) => true,
                _ => false,
            }
    }
}

/// A transformer encoder with an MLM head.
pub trait Encoder: Parameterized {
    fn config(&self) -> &ModelConfig;

    /// Embedding plus every layer/iteration, without a head.
    fn encode(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<EncoderVars>;

    /// MLM logits `[batch*seq, vocab]` from a final hidden state.
    fn mlm_logits(&self, tape: &mut Tape, hidden: Var) -> Result<Var>;

    /// Embedding output only, `[batch*seq, d]`.
    fn embed(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<Var>;

    /// Eval-mode pass returning every intermediate value.
    fn forward_trace(&self, batch: &TokenBatch) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let vars = self.encode(&mut tape, batch, &mut Mode::Eval)?;
        let logits = self.mlm_logits(&mut tape, vars.last_hidden())?;
        ForwardTrace::collect(&tape, &vars, Some(logits), batch)
    }
}
