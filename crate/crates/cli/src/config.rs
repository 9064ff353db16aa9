//! JSON run configuration shared by the training and tuning commands.

use std::path::{Path, PathBuf};

use recdistill_core::data::{MaskingConfig, TokenizerMode};
use recdistill_core::distill::{LayerMapStrategy, LossWeights};
use recdistill_core::eval::HeadKind;
use recdistill_core::model::{AdapterPlacement, ModelConfig, Nonlinearity};
use recdistill_core::train::{AdamWConfig, ScheduleConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "RD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Record wall-clock time in metrics; off keeps outputs byte-stable.
    pub timing: bool,
    pub model: ModelSection,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub weights: LossWeights,
    pub layer_map: LayerMapStrategy,
    pub regime: RegimeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            timing: false,
            model: ModelSection::default(),
            data: DataSection::default(),
            schedule: ScheduleSection::default(),
            weights: LossWeights::default(),
            layer_map: LayerMapStrategy::default(),
            regime: RegimeSection::default(),
        }
    }
}

/// Architecture of the model a command creates; the vocabulary size comes
/// from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub num_layers: usize,
    pub max_positions: usize,
    /// Defaults to `hidden_dim` (no factorization).
    pub embedding_rank: Option<usize>,
    pub adapter_bottleneck: usize,
    pub adapter_nonlinearity: Nonlinearity,
    pub adapter_placement: AdapterPlacement,
    pub dropout_prob: f64,
    pub token_types: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 32,
            num_heads: 2,
            ffn_dim: 64,
            num_layers: 4,
            max_positions: 64,
            embedding_rank: None,
            adapter_bottleneck: 0,
            adapter_nonlinearity: Nonlinearity::Gelu,
            adapter_placement: AdapterPlacement::Input,
            dropout_prob: 0.1,
            token_types: true,
            layer_norm_eps: 1e-12,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            num_layers: self.num_layers,
            vocab_size,
            max_positions: self.max_positions,
            embedding_rank: self.embedding_rank.unwrap_or(self.hidden_dim),
            adapter_bottleneck: self.adapter_bottleneck,
            adapter_nonlinearity: self.adapter_nonlinearity,
            adapter_placement: self.adapter_placement,
            dropout_prob: self.dropout_prob,
            token_types: self.token_types,
            layer_norm_eps: self.layer_norm_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Plain-text corpus, one document per line.
    pub corpus: Option<PathBuf>,
    pub vocab_size: usize,
    pub tokenizer: TokenizerMode,
    /// Content tokens per window (without `[CLS]`/`[SEP]`).
    pub window: usize,
    pub stride: usize,
    pub max_per_doc: usize,
    pub masking: MaskingConfig,
    pub task: Option<HeadKind>,
    /// Task training file (`text<TAB>label` or CoNLL).
    pub train: Option<PathBuf>,
    /// Task evaluation file; the training file is used when absent.
    pub eval: Option<PathBuf>,
    pub max_len: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus: None,
            vocab_size: 400,
            tokenizer: TokenizerMode::Word,
            window: 30,
            stride: 15,
            max_per_doc: 10,
            masking: MaskingConfig::default(),
            task: None,
            train: None,
            eval: None,
            max_len: 48,
        }
    }
}

/// Schedule settings: an optional named profile, then per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub profile: Option<String>,
    pub peak_lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub total_steps: Option<usize>,
    pub batch_size: Option<usize>,
    /// 0 disables clipping.
    pub clip_norm: Option<f64>,
    pub optimizer: Option<AdamWConfig>,
}

impl ScheduleSection {
    pub fn resolve(&self) -> Result<ScheduleConfig> {
        let mut s = match &self.profile {
            Some(p) => ScheduleConfig::profile(p).map_err(|e| CliError::field("schedule.profile", e.to_string()))?,
            None => ScheduleConfig::default(),
        };
        if let Some(v) = self.peak_lr {
            s.peak_lr = v;
        }
        if let Some(v) = self.warmup_steps {
            s.warmup_steps = v;
        }
        if let Some(v) = self.total_steps {
            s.total_steps = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.clip_norm {
            s.clip_norm = (v > 0.0).then_some(v);
        }
        if let Some(o) = self.optimizer {
            s.optimizer = o;
        }
        // A shortened run keeps its warmup inside the schedule.
        if self.warmup_steps.is_none() && s.warmup_steps > s.total_steps {
            s.warmup_steps = s.total_steps / 10;
        }
        s.validate().map_err(|e| CliError::field("schedule", e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSection {
    /// Teacher checkpoint for `distill`.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Backbone checkpoint for `finetune` and `adapter-tune`.
    pub checkpoint: Option<PathBuf>,
    /// Initialize the student's shared block from this teacher layer (1-based).
    pub init_from_teacher_layer: Option<usize>,
    /// Add fresh adapters before adapter-tuning a model that has none.
    pub inject_adapters: bool,
    /// Width of injected adapters.
    pub inject_bottleneck: usize,
    pub head_dropout: f64,
    pub eval_batch_size: usize,
}

impl Default for RegimeSection {
    fn default() -> Self {
        RegimeSection {
            teacher_checkpoint: None,
            checkpoint: None,
            init_from_teacher_layer: None,
            inject_adapters: false,
            inject_bottleneck: 8,
            head_dropout: 0.1,
            eval_batch_size: 32,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("config {}", path.display()), e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| CliError::ConfigParse { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut self.data.corpus);
        fix(&mut self.data.train);
        fix(&mut self.data.eval);
        fix(&mut self.regime.teacher_checkpoint);
        fix(&mut self.regime.checkpoint);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Applies the `RD_SEED` override if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| CliError::field(SEED_ENV, format!("not an unsigned integer: {v:?}")))?;
        }
        Ok(())
    }

    /// Checks the sections every command relies on.
    pub fn validate_common(&self) -> Result<()> {
        self.model
            .to_model_config(self.data.vocab_size.max(6))
            .validate()
            .map_err(|e| CliError::field("model", e.to_string()))?;
        self.data.masking.validate().map_err(|e| CliError::field("data.masking", e.to_string()))?;
        self.weights.validate().map_err(|e| CliError::field("weights", e.to_string()))?;
        self.schedule.resolve()?;
        if self.data.window == 0 || self.data.stride == 0 || self.data.max_per_doc == 0 {
            return Err(CliError::field("data", "window, stride and max_per_doc must be positive"));
        }
        if self.data.window + 2 > self.model.max_positions {
            return Err(CliError::field(
                "data.window",
                format!("{} content tokens plus [CLS]/[SEP] exceed model.max_positions {}", self.data.window, self.model.max_positions),
            ));
        }
        if self.data.max_len < 3 || self.data.max_len > self.model.max_positions {
            return Err(CliError::field("data.max_len", format!("must lie in 3..={}", self.model.max_positions)));
        }
        if !(0.0..1.0).contains(&self.regime.head_dropout) {
            return Err(CliError::field("regime.head_dropout", "must lie in [0, 1)"));
        }
        if self.regime.eval_batch_size == 0 {
            return Err(CliError::field("regime.eval_batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Returns the path in `value`, checking that it names an existing file.
pub fn require_file<'a>(field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
    let p = value.as_deref().ok_or_else(|| CliError::field(field, "required but not set"))?;
    if !p.is_file() {
        return Err(CliError::field(field, format!("file not found: {}", p.display())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"hidden": 8}}"#).is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "weights": {"lambda_out": 2}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.weights.lambda_out, 2.0);
        assert_eq!(cfg.weights.lambda_align, 3.0);
    }

    #[test]
    fn schedule_profiles_and_overrides() {
        let s = ScheduleSection { profile: Some("long-pretrain".into()), total_steps: Some(20000), ..Default::default() };
        let r = s.resolve().unwrap();
        assert_eq!((r.batch_size, r.warmup_steps, r.total_steps), (192, 5000, 20000));
        let s = ScheduleSection { total_steps: Some(20), ..Default::default() };
        assert_eq!(s.resolve().unwrap().warmup_steps, 2);
        let s = ScheduleSection { profile: Some("fast".into()), ..Default::default() };
        assert!(matches!(s.resolve(), Err(CliError::Field { .. })));
        let s = ScheduleSection { clip_norm: Some(0.0), ..Default::default() };
        assert_eq!(s.resolve().unwrap().clip_norm, None);
    }

    #[test]
    fn window_must_fit_positions() {
        let mut cfg = RunConfig::default();
        cfg.validate_common().unwrap();
        cfg.data.window = 63;
        assert!(matches!(cfg.validate_common(), Err(CliError::Field { field, .. }) if field == "data.window"));
    }
}
