use super::adapter::AdapterPair;
use super::block::TransformerBlockParams;
use super::config::ModelConfig;
use super::embedding::EmbeddingParams;
use super::encoder::{Encoder, EncoderVars, Mode, TokenBatch};
use super::mlm_head::MlmHead;
use super::params::{Init, Parameterized};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// One teacher layer; adapters appear only in unrolled students.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub block: TransformerBlockParams,
    pub adapters: Option<AdapterPair>,
}

/// Fully parameterized encoder with `num_layers` independent blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub config: ModelConfig,
    pub embeddings: EmbeddingParams,
    pub layers: Vec<EncoderLayer>,
    pub mlm_head: MlmHead,
}

impl TeacherModel {
    pub fn new(config: ModelConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let embeddings = EmbeddingParams::new(&config, init);
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayer {
                block: TransformerBlockParams::new(&config, init),
                adapters: config
                    .has_adapters()
                    .then(|| AdapterPair::new(config.hidden_dim, config.adapter_bottleneck, init)),
            })
            .collect();
        let mlm_head = MlmHead::new(&config, init);
        Ok(TeacherModel { config, embeddings, layers, mlm_head })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Adds freshly initialized adapters to every layer of a model that has
    /// none.
    pub fn inject_adapters(&mut self, bottleneck: usize, init: &mut Init) -> Result<()> {
        if self.layers.iter().any(|l| l.adapters.is_some()) {
            return Err(Error::State("model already has adapters".into()));
        }
        if bottleneck == 0 {
            return Err(Error::config("adapter bottleneck must be positive"));
        }
        let mut cfg = self.config.clone();
        cfg.adapter_bottleneck = bottleneck;
        cfg.validate()?;
        for layer in &mut self.layers {
            layer.adapters = Some(AdapterPair::new(cfg.hidden_dim, bottleneck, init));
        }
        self.config = cfg;
        Ok(())
    }
}

impl Parameterized for TeacherModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &crate::numerics::Tensor)) {
        self.embeddings.visit("embeddings", f);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.block.visit(&format!("layers.{i}.block"), f);
            if let Some(a) = &layer.adapters {
                a.visit(&format!("layers.{i}.adapters"), f);
            }
        }
        self.mlm_head.visit("mlm_head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::numerics::Tensor)) {
        self.embeddings.visit_mut("embeddings", f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.block.visit_mut(&format!("layers.{i}.block"), f);
            if let Some(a) = &mut layer.adapters {
                a.visit_mut(&format!("layers.{i}.adapters"), f);
            }
        }
        self.mlm_head.visit_mut("mlm_head", f);
    }
}

impl Encoder for TeacherModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn embed(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<Var> {
        self.embeddings.forward(tape, "embeddings", batch, &self.config, mode)
    }

    fn encode(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<EncoderVars> {
        let embedding = self.embed(tape, batch, mode)?;
        let mut h = embedding;
        let mut hidden = Vec::with_capacity(self.layers.len());
        let mut attention = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ap = format!("layers.{i}.adapters");
            let adapters = layer.adapters.as_ref().map(|a| (a, ap.as_str()));
            let (out, probs) =
                layer.block.forward(tape, &format!("layers.{i}.block"), h, adapters, &self.config, batch, mode)?;
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
