use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use recdistill_core::data::{CLS_ID, SEP_ID};
use recdistill_core::eval::{TaskModel, TASK_KIND_KEY};
use recdistill_core::model::{
    adapter_param_count, is_adapter_param, Backbone, Encoder, Init, ModelConfig, Parameterized,
    TokenBatch,
};

use super::artifacts::*;
use super::Outcome;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InspectOptions {
    pub checkpoint: Option<PathBuf>,
    /// Full model config (JSON) to inspect without a checkpoint.
    pub model_config: Option<PathBuf>,
    /// `teacher` or `student`, for `model_config`.
    pub kind: String,
    pub params: bool,
    pub attn: Option<String>,
    pub output_dir: Option<PathBuf>,
}

/// Parameter count of one module group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleCount {
    pub module: String,
    pub params: usize,
}

fn module_of(name: &str) -> String {
    if is_adapter_param(name) {
        return "adapters".into();
    }
    name.split('.').next().unwrap_or(name).to_string()
}

/// Parameter counts grouped by top-level module, in first-seen order.
pub fn module_breakdown<M: Parameterized + ?Sized>(model: &M) -> Vec<ModuleCount> {
    let mut order = Vec::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    model.visit(&mut |name, t| {
        let m = module_of(name);
        if !counts.contains_key(&m) {
            order.push(m.clone());
        }
        *counts.entry(m).or_default() += t.numel();
    });
    order.into_iter().map(|m| ModuleCount { params: counts[&m], module: m }).collect()
}

fn params_table<M: Parameterized + ?Sized>(kind: &str, cfg: &ModelConfig, model: &M) -> String {
    let rows = module_breakdown(model);
    let mut out = format!("{kind} model: d={} heads={} ffn={} layers={} vocab={} rank={} adapter_bottleneck={}\n",
        cfg.hidden_dim, cfg.num_heads, cfg.ffn_dim, cfg.num_layers, cfg.vocab_size, cfg.embedding_rank, cfg.adapter_bottleneck);
    let _ = writeln!(out, "{:<12} {:>12}", "module", "params");
    let (mut total, mut adapter_tunable) = (0, 0);
    for r in &rows {
        let note = if r.module == "mlm_head" { "  (pre-training only, not counted)" } else { "" };
        let _ = writeln!(out, "{:<12} {:>12}{note}", r.module, r.params);
        if r.module != "mlm_head" {
            total += r.params;
        }
        if r.module == "adapters" || r.module == "task_head" {
            adapter_tunable += r.params;
        }
    }
    let _ = writeln!(out, "{:<12} {:>12}", "total", total);
    let _ = writeln!(out, "{:<12} {:>12}  (adapters + task head)", "adapter-only", adapter_tunable);
    if cfg.has_adapters() {
        let per = adapter_param_count(cfg.hidden_dim, cfg.adapter_bottleneck);
        let _ = writeln!(out, "{:<12} {:>12}  (each of {} adapters)", "per adapter", per, rows.iter().find(|r| r.module == "adapters").map_or(0, |r| r.params / per));
    }
    out
}

pub fn cmd_inspect(opts: &InspectOptions) -> Result<Outcome> {
    let (model, vocab, kind) = match (&opts.checkpoint, &opts.model_config) {
        (Some(path), None) => {
            let ckpt = load_checkpoint("--checkpoint", path)?;
            let vocab = vocab_of(&ckpt).ok();
            let model: Box<dyn Inspectable> = if ckpt.header.contains_key(TASK_KIND_KEY) {
                Box::new(TaskModel::from_checkpoint(&ckpt)?)
            } else {
                Box::new(Backbone::from_checkpoint(&ckpt)?)
            };
            let kind = ckpt.kind().unwrap_or("model").to_string();
            (model, vocab, kind)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("model config {}", path.display()), e))?;
            let cfg: ModelConfig = serde_json::from_str(&text)
                .map_err(|source| CliError::ConfigParse { path: path.clone(), source })?;
            cfg.validate().map_err(|e| CliError::field("--model-config", e.to_string()))?;
            let m = Backbone::new(&opts.kind, cfg, &mut Init::Zeros).map_err(|e| CliError::field("--kind", e.to_string()))?;
            (Box::new(m) as Box<dyn Inspectable>, None, opts.kind.clone())
        }
        _ => return Err(CliError::field("--checkpoint", "give exactly one of --checkpoint and --model-config")),
    };
    if !opts.params && opts.attn.is_none() {
        return Err(CliError::field("inspect", "nothing to do; pass --params and/or --attn"));
    }
    let mut summary = String::new();
    let mut files = Vec::new();
    if opts.params {
        summary.push_str(&params_table(&kind, model.encoder().config(), model.as_params()));
    }
    if let Some(sentence) = &opts.attn {
        let vocab = vocab.ok_or_else(|| CliError::field("--attn", "needs a checkpoint that carries its vocabulary"))?;
        let dir = opts.output_dir.as_deref().ok_or_else(|| CliError::field("--output-dir", "required with --attn"))?;
        let written = dump_attention(model.encoder(), &kind, &vocab.encode(sentence), dir)?;
        let _ = writeln!(summary, "wrote {} attention maps to {}", written.len(), dir.display());
        files = written;
    }
    Ok(Outcome { files, summary })
}

/// One CSV per iteration and head: `n` rows of `n` probabilities.
fn dump_attention(model: &dyn Encoder, kind: &str, ids: &[u32], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut row: Vec<usize> = vec![CLS_ID as usize];
    row.extend(ids.iter().map(|&i| i as usize));
    row.push(SEP_ID as usize);
    let max = model.config().max_positions;
    if row.len() > max {
        return Err(CliError::field("--attn", format!("sentence has {} tokens with specials; the model takes {max}", row.len())));
    }
    let n = row.len();
    let trace = model.forward_trace(&TokenBatch::unpadded(row, 1, n)?)?;
    ensure_dir(dir)?;
    let layer_word = if kind == "student" { "iter" } else { "layer" };
    let mut files = Vec::new();
    for (l, map) in trace.attention_maps.iter().enumerate() {
        let heads = map.shape()[1];
        for h in 0..heads {
            let mut csv = String::new();
            for i in 0..n {
                let start = (h * n + i) * n;
                let vals: Vec<String> = map.data()[start..start + n].iter().map(|v| v.to_string()).collect();
                csv.push_str(&vals.join(","));
                csv.push('\n');
            }
            files.push(write_file(dir, &format!("{kind}_{layer_word}{}_head{}.csv", l + 1, h + 1), csv)?);
        }
    }
    Ok(files)
}

trait Inspectable {
    fn encoder(&self) -> &dyn Encoder;
    fn as_params(&self) -> &dyn Parameterized;
}

impl Inspectable for Backbone {
    fn encoder(&self) -> &dyn Encoder {
        self.as_encoder()
    }
    fn as_params(&self) -> &dyn Parameterized {
        self
    }
}

impl Inspectable for TaskModel {
    fn encoder(&self) -> &dyn Encoder {
        self.backbone.as_encoder()
    }
    fn as_params(&self) -> &dyn Parameterized {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use recdistill_core::model::is_mlm_head_param;

    #[test]
    fn grouping() {
        assert_eq!(module_of("layers.3.adapters.att.down_w"), "adapters");
        assert_eq!(module_of("adapters.0.mlp.up_b"), "adapters");
        assert_eq!(module_of("layers.3.block.q_w"), "layers");
        assert_eq!(module_of("embeddings.word"), "embeddings");
        assert!(is_mlm_head_param("mlm_head.dense_w"));
    }
}
