use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    #[default]
    Gelu,
}

/// Where the per-iteration adapters sit relative to each sub-block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdapterPlacement {
    /// Adapter on the sub-block input: `LN(a + f(a))` with `a = adapter(x)`.
    #[default]
    Input,
    /// Adapter on the sub-block output: `LN(x + adapter(f(x)))`.
    Output,
}

fn default_true() -> bool {
    true
}

fn default_ln_eps() -> f64 {
    1e-12
}

fn default_dropout() -> f64 {
    0.1
}

/// Architecture hyperparameters shared by teachers and students.
///
/// `num_layers` is the number of distinct blocks for a teacher and the
/// number of recursive iterations for a student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Equal to `hidden_dim` for an unfactorized embedding.
    pub embedding_rank: usize,
    /// 0 disables adapters.
    #[serde(default)]
    pub adapter_bottleneck: usize,
    #[serde(default)]
    pub adapter_nonlinearity: Nonlinearity,
    #[serde(default)]
    pub adapter_placement: AdapterPlacement,
    #[serde(default = "default_dropout")]
    pub dropout_prob: f64,
    #[serde(default = "default_true")]
    pub token_types: bool,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Small configuration for tests and desk-scale runs.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            hidden_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            num_layers: 2,
            vocab_size,
            max_positions: 32,
            embedding_rank: 16,
            adapter_bottleneck: 0,
            adapter_nonlinearity: Nonlinearity::Gelu,
            adapter_placement: AdapterPlacement::Input,
            dropout_prob: 0.1,
            token_types: true,
            layer_norm_eps: 1e-12,
        }
    }

    /// BERT-base geometry (d=768, 12 heads, FFN 3072, 12 layers, 30522
    /// word pieces, 512 positions) with the given embedding rank and adapter
    /// bottleneck.
    pub fn base(embedding_rank: usize, adapter_bottleneck: usize) -> Self {
        ModelConfig {
            hidden_dim: 768,
            num_heads: 12,
            ffn_dim: 3072,
            num_layers: 12,
            vocab_size: 30522,
            max_positions: 512,
            embedding_rank,
            adapter_bottleneck,
            ..Self::tiny(30522)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn is_factorized(&self) -> bool {
        self.embedding_rank < self.hidden_dim
    }

    pub fn has_adapters(&self) -> bool {
        self.adapter_bottleneck > 0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("num_layers", self.num_layers),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("embedding_rank", self.embedding_rank),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "model.num_heads ({}) must divide model.hidden_dim ({})",
                self.num_heads, self.hidden_dim
            )));
        }
        if self.embedding_rank > self.hidden_dim {
            return Err(Error::config("model.embedding_rank must not exceed model.hidden_dim"));
        }
        if self.adapter_bottleneck >= self.hidden_dim {
            return Err(Error::config("model.adapter_bottleneck must be smaller than model.hidden_dim"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("model.dropout_prob must be in [0, 1)"));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::config("model.layer_norm_eps must be positive"));
        }
        Ok(())
    }

    /// Flat key/value form used in checkpoint headers.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object()
            .expect("config is an object")
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }

    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut obj = serde_json::Map::new();
        for (k, v) in pairs {
            let parsed = serde_json::from_str(v)
                .map_err(|e| Error::Corrupt(format!("config value {k}={v}: {e}")))?;
            obj.insert(k.to_string(), parsed);
        }
        let cfg: ModelConfig = serde_json::from_value(serde_json::Value::Object(obj))
            .map_err(|e| Error::Corrupt(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters in one adapter: `d*b + b + b*d + d`.
pub fn adapter_param_count(hidden_dim: usize, bottleneck: usize) -> usize {
    hidden_dim * bottleneck + bottleneck + bottleneck * hidden_dim + hidden_dim
}

/// Smallest bottleneck whose `2 * iterations` adapters reach `budget`
/// parameters.
pub fn derive_adapter_bottleneck(hidden_dim: usize, iterations: usize, budget: usize) -> usize {
    (1..hidden_dim)
        .find(|&b| 2 * iterations * adapter_param_count(hidden_dim, b) >= budget)
        .unwrap_or(hidden_dim - 1)
}
