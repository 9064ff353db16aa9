use super::adapter::AdapterPair;
use super::config::{AdapterPlacement, ModelConfig};
use super::encoder::{Mode, TokenBatch};
use super::params::Init;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// One post-layer-norm transformer block: multi-head self-attention and a
/// GELU feed-forward network, each followed by residual add and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlockParams {
    pub q_w: Tensor,
    pub q_b: Tensor,
    pub k_w: Tensor,
    pub k_b: Tensor,
    pub v_w: Tensor,
    pub v_b: Tensor,
    pub o_w: Tensor,
    pub o_b: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ffn_in_w: Tensor,
    pub ffn_in_b: Tensor,
    pub ffn_out_w: Tensor,
    pub ffn_out_b: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

macro_rules! for_each_field {
    ($self:ident, $prefix:ident, $f:ident, $($amp:tt)*) => {
        $f(&format!("{}.q_w", $prefix), $($amp)* $self.q_w);
        $f(&format!("{}.q_b", $prefix), $($amp)* $self.q_b);
        $f(&format!("{}.k_w", $prefix), $($amp)* $self.k_w);
        $f(&format!("{}.k_b", $prefix), $($amp)* $self.k_b);
        $f(&format!("{}.v_w", $prefix), $($amp)* $self.v_w);
        $f(&format!("{}.v_b", $prefix), $($amp)* $self.v_b);
        $f(&format!("{}.o_w", $prefix), $($amp)* $self.o_w);
        $f(&format!("{}.o_b", $prefix), $($amp)* $self.o_b);
        $f(&format!("{}.ln1_gain", $prefix), $($amp)* $self.ln1_gain);
        $f(&format!("{}.ln1_bias", $prefix), $($amp)* $self.ln1_bias);
        $f(&format!("{}.ffn_in_w", $prefix), $($amp)* $self.ffn_in_w);
        $f(&format!("{}.ffn_in_b", $prefix), $($amp)* $self.ffn_in_b);
        $f(&format!("{}.ffn_out_w", $prefix), $($amp)* $self.ffn_out_w);
        $f(&format!("{}.ffn_out_b", $prefix), $($amp)* $self.ffn_out_b);
        $f(&format!("{}.ln2_gain", $prefix), $($amp)* $self.ln2_gain);
        $f(&format!("{}.ln2_bias", $prefix), $($amp)* $self.ln2_bias);
    };
}

impl TransformerBlockParams {
    pub fn new(cfg: &ModelConfig, init: &mut Init) -> Self {
        let (d, f) = (cfg.hidden_dim, cfg.ffn_dim);
        TransformerBlockParams {
            q_w: init.weight(&[d, d]),
            q_b: Tensor::zeros(&[d]),
            k_w: init.weight(&[d, d]),
            k_b: Tensor::zeros(&[d]),
            v_w: init.weight(&[d, d]),
            v_b: Tensor::zeros(&[d]),
            o_w: init.weight(&[d, d]),
            o_b: Tensor::zeros(&[d]),
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            ffn_in_w: init.weight(&[d, f]),
            ffn_in_b: Tensor::zeros(&[f]),
            ffn_out_w: init.weight(&[f, d]),
            ffn_out_b: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for_each_field!(self, prefix, f, &);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for_each_field!(self, prefix, f, &mut);
    }

    /// `4(d^2 + d) + d*ffn + ffn + ffn*d + d + 4d`.
    pub fn expected_count(d: usize, ffn: usize) -> usize {
        4 * (d * d + d) + d * ffn + ffn + ffn * d + d + 4 * d
    }

    /// Runs the block on `x` (`[batch*seq, d]`), optionally wrapping each
    /// sub-block with the given adapters. Returns the output and the
    /// pre-dropout attention probabilities.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        prefix: &str,
        x: Var,
        adapters: Option<(&AdapterPair, &str)>,
        cfg: &ModelConfig,
        batch: &TokenBatch,
        mode: &mut Mode,
    ) -> Result<(Var, Var)> {
        let p = |name: &str| format!("{prefix}.{name}");
        let d = cfg.hidden_dim;
        if tape.value(x).shape() != [batch.positions(), d] {
            return Err(Error::shape(format!(
                "block input {:?}, expected [{}, {d}]",
                tape.value(x).shape(),
                batch.positions()
            )));
        }
        let act = cfg.adapter_nonlinearity;
        let adapt = |tape: &mut Tape, which: usize, v: Var| -> Result<Var> {
            match adapters {
                None => Ok(v),
                Some((pair, ap)) => {
                    let (a, name) = if which == 0 { (&pair.att, "att") } else { (&pair.mlp, "mlp") };
                    a.forward(tape, &format!("{ap}.{name}"), v, act)
                }
            }
        };
        let input_side = cfg.adapter_placement == AdapterPlacement::Input;

        // Attention sub-block.
        let a_in = if input_side { adapt(tape, 0, x)? } else { x };
        let q_w = tape.param(&p("q_w"), &self.q_w);
        let q_b = tape.param(&p("q_b"), &self.q_b);
        let k_w = tape.param(&p("k_w"), &self.k_w);
        let k_b = tape.param(&p("k_b"), &self.k_b);
        let v_w = tape.param(&p("v_w"), &self.v_w);
        let v_b = tape.param(&p("v_b"), &self.v_b);
        let o_w = tape.param(&p("o_w"), &self.o_w);
        let o_b = tape.param(&p("o_b"), &self.o_b);
        let q = tape.linear(a_in, q_w, Some(q_b))?;
        let k = tape.linear(a_in, k_w, Some(k_b))?;
        let v = tape.linear(a_in, v_w, Some(v_b))?;
        let dims = batch.attn_dims(cfg);
        let probs = tape.attention_probs(q, k, dims, &batch.valid)?;
        let dropped = mode.dropout(tape, probs, cfg.dropout_prob);
        let ctx = tape.attention_context(dropped, v, dims)?;
        let attn_out = tape.linear(ctx, o_w, Some(o_b))?;
        let attn_out = mode.dropout(tape, attn_out, cfg.dropout_prob);
        let attn_out = if input_side { attn_out } else { adapt(tape, 0, attn_out)? };
        let res1 = tape.add(a_in, attn_out)?;
        let g1 = tape.param(&p("ln1_gain"), &self.ln1_gain);
        let b1 = tape.param(&p("ln1_bias"), &self.ln1_bias);
        let h = tape.layer_norm(res1, g1, b1, cfg.layer_norm_eps)?;

        // Feed-forward sub-block.
        let f_in = if input_side { adapt(tape, 1, h)? } else { h };
        let w1 = tape.param(&p("ffn_in_w"), &self.ffn_in_w);
        let fb1 = tape.param(&p("ffn_in_b"), &self.ffn_in_b);
        let w2 = tape.param(&p("ffn_out_w"), &self.ffn_out_w);
        let fb2 = tape.param(&p("ffn_out_b"), &self.ffn_out_b);
        let inner = tape.linear(f_in, w1, Some(fb1))?;
        let inner = tape.gelu(inner);
        let ffn_out = tape.linear(inner, w2, Some(fb2))?;
        let ffn_out = mode.dropout(tape, ffn_out, cfg.dropout_prob);
        let ffn_out = if input_side { ffn_out } else { adapt(tape, 1, ffn_out)? };
        let res2 = tape.add(f_in, ffn_out)?;
        let g2 = tape.param(&p("ln2_gain"), &self.ln2_gain);
        let b2 = tape.param(&p("ln2_bias"), &self.ln2_bias);
        let out = tape.layer_norm(res2, g2, b2, cfg.layer_norm_eps)?;
        Ok((out, probs))
    }
}

/// Value-level block evaluation: returns the `[batch, seq, d]` output and
/// the `[batch, heads, seq, seq]` attention map.
pub fn block_forward(
    x: &Tensor,
    block: &TransformerBlockParams,
    batch: &TokenBatch,
    cfg: &ModelConfig,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let d = cfg.hidden_dim;
    let xv = tape.constant(x.clone().reshape(vec![batch.positions(), d])?);
    let (out, probs) = block.forward(&mut tape, "block", xv, None, cfg, batch, &mut Mode::Eval)?;
    Ok((
        tape.value(out).clone().reshape(vec![batch.batch, batch.seq, d])?,
        tape.value(probs).clone(),
    ))
}
