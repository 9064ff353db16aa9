use super::adapter::AdapterPair;
use super::block::TransformerBlockParams;
use super::config::ModelConfig;
use super::embedding::EmbeddingParams;
use super::encoder::{Encoder, EncoderVars, Mode, TokenBatch};
use super::mlm_head::MlmHead;
use super::params::{Init, Parameterized};
use super::teacher::{EncoderLayer, TeacherModel};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Encoder that applies one shared block `num_layers` times, optionally with
/// a distinct adapter pair per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveStudent {
    pub config: ModelConfig,
    pub embeddings: EmbeddingParams,
    pub block: TransformerBlockParams,
    /// Empty, or exactly one pair per iteration.
    pub adapters: Vec<AdapterPair>,
    pub mlm_head: MlmHead,
}

impl RecursiveStudent {
    pub fn new(config: ModelConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let embeddings = EmbeddingParams::new(&config, init);
        let block = TransformerBlockParams::new(&config, init);
        let adapters = if config.has_adapters() {
            (0..config.num_layers)
                .map(|_| AdapterPair::new(config.hidden_dim, config.adapter_bottleneck, init))
                .collect()
        } else {
            Vec::new()
        };
        let mlm_head = MlmHead::new(&config, init);
        Ok(RecursiveStudent { config, embeddings, block, adapters, mlm_head })
    }

    /// Copies embeddings, head and block `layer` from a teacher with the same
    /// width. Embeddings must match in rank as well.
    pub fn init_from_teacher(&mut self, teacher: &TeacherModel, layer: usize) -> Result<()> {
        let src = teacher
            .layers
            .get(layer)
            .ok_or_else(|| Error::config(format!("teacher has no layer {layer}")))?;
        if teacher.embeddings.e_low.shape() != self.embeddings.e_low.shape()
            || teacher.embeddings.w_e.as_ref().map(Tensor::shape) != self.embeddings.w_e.as_ref().map(Tensor::shape)
            || teacher.embeddings.positional.shape() != self.embeddings.positional.shape()
            || src.block.ffn_in_w.shape() != self.block.ffn_in_w.shape()
        {
            return Err(Error::config("teacher and student geometries differ"));
        }
        self.embeddings = teacher.embeddings.clone();
        self.block = src.block.clone();
        self.mlm_head = teacher.mlm_head.clone();
        Ok(())
    }

    /// Adds freshly initialized adapters (one pair per iteration) to a
    /// student that has none.
    pub fn inject_adapters(&mut self, bottleneck: usize, init: &mut Init) -> Result<()> {
        if !self.adapters.is_empty() {
            return Err(Error::State("student already has adapters".into()));
        }
        let mut cfg = self.config.clone();
        cfg.adapter_bottleneck = bottleneck;
        cfg.validate()?;
        if bottleneck == 0 {
            return Err(Error::config("adapter bottleneck must be positive"));
        }
        self.adapters = (0..cfg.num_layers).map(|_| AdapterPair::new(cfg.hidden_dim, bottleneck, init)).collect();
        self.config = cfg;
        Ok(())
    }

    /// Teacher-shaped model holding `num_layers` copies of the shared block
    /// and the per-iteration adapters as per-layer sublayers.
    pub fn materialize_unrolled(&self) -> TeacherModel {
        let layers = (0..self.config.num_layers)
            .map(|i| EncoderLayer { block: self.block.clone(), adapters: self.adapters.get(i).cloned() })
            .collect();
        TeacherModel {
            config: self.config.clone(),
            embeddings: self.embeddings.clone(),
            layers,
            mlm_head: self.mlm_head.clone(),
        }
    }
}

impl Parameterized for RecursiveStudent {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.embeddings.visit("embeddings", f);
        self.block.visit("block", f);
        for (i, a) in self.adapters.iter().enumerate() {
            a.visit(&format!("adapters.{i}"), f);
        }
        self.mlm_head.visit("mlm_head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.embeddings.visit_mut("embeddings", f);
        self.block.visit_mut("block", f);
        for (i, a) in self.adapters.iter_mut().enumerate() {
            a.visit_mut(&format!("adapters.{i}"), f);
        }
        self.mlm_head.visit_mut("mlm_head", f);
    }
}

impl Encoder for RecursiveStudent {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn embed(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<Var> {
        self.embeddings.forward(tape, "embeddings", batch, &self.config, mode)
    }

    fn encode(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<EncoderVars> {
        if !self.adapters.is_empty() && self.adapters.len() != self.config.num_layers {
            return Err(Error::config(format!(
                "{} adapter pairs for {} iterations",
                self.adapters.len(),
                self.config.num_layers
            )));
        }
        let embedding = self.embed(tape, batch, mode)?;
        let mut h = embedding;
        let n = self.config.num_layers;
        let mut hidden = Vec::with_capacity(n);
        let mut attention = Vec::with_capacity(n);
        for i in 0..n {
            let ap = format!("adapters.{i}");
            let adapters = self.adapters.get(i).map(|a| (a, ap.as_str()));
            let (out, probs) = self.block.forward(tape, "block", h, adapters, &self.config, batch, mode)?;
            hidden.push(out);
            attention.push(probs);
            h = out;
        }
        Ok(EncoderVars { embedding, hidden, attention })
    }

    fn mlm_logits(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        self.mlm_head.forward(tape, "mlm_head", hidden, &self.embeddings, "embeddings", self.config.layer_norm_eps)
    }
}
