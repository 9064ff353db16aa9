use std::path::{Path, PathBuf};

use recdistill_core::data::{load_classification, load_tagging, Vocabulary};
use recdistill_core::eval::{
    classification_labels, evaluate, tagging_labels, EvalReport, HeadKind, TaskDataset, TaskHead, TaskModel,
};
use recdistill_core::model::{count_parameters, is_adapter_param, is_task_head_param, param_digest, Backbone, Encoder, Init};
use recdistill_core::seed::{self, Stream};
use recdistill_core::train::{adapter_tune, finetune, RunOptions, TuneLog, TuneRegime, TASK_HEAD_STREAM_INDEX};
use recdistill_core::Error as CoreError;

use super::artifacts::*;
use super::{prepare, Outcome, Overrides};
use crate::config::{require_file, RunConfig};
use crate::error::{CliError, Result};

/// Task kind from the config, or from the training file's extension.
fn task_kind(cfg: &RunConfig, train: &Path) -> Result<HeadKind> {
    if let Some(k) = cfg.data.task {
        return Ok(k);
    }
    match train.extension().and_then(|e| e.to_str()) {
        Some("conll") => Ok(HeadKind::TokenClassification),
        Some("tsv") => Ok(HeadKind::SequenceClassification),
        _ => Err(CliError::field("data.task", "not set and not inferable from the training file extension")),
    }
}

fn load_dataset(kind: HeadKind, path: &Path, vocab: &Vocabulary, labels: Option<&[String]>, max_len: usize) -> Result<TaskDataset> {
    Ok(match kind {
        HeadKind::SequenceClassification => {
            let ex = load_classification(path)?;
            let labels = labels.map_or_else(|| classification_labels(&ex), <[String]>::to_vec);
            TaskDataset::from_classification(&ex, vocab, &labels, max_len)?
        }
        HeadKind::TokenClassification => {
            let ex = load_tagging(path)?;
            let labels = labels.map_or_else(|| tagging_labels(&ex), <[String]>::to_vec);
            TaskDataset::from_tagging(&ex, vocab, &labels, max_len)?
        }
    })
}

fn backbone_digest(m: &TaskModel) -> String {
    param_digest(m, &|n| !is_adapter_param(n) && !is_task_head_param(n))
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(dir, REPORT_JSON, serde_json::to_string_pretty(report).expect("report serializes"))?,
        write_file(dir, REPORT_CSV, report.to_csv())?,
        write_file(dir, REPORT_CLASSES_CSV, report.per_class_csv())?,
        write_file(dir, REPORT_TXT, report.pretty())?,
    ])
}

fn tune(config: &Path, ov: &Overrides, checkpoint: Option<&PathBuf>, adapter: Option<&AdapterTuneOptions>) -> Result<Outcome> {
    let mut cfg = prepare(config, ov)?;
    if let Some(c) = checkpoint {
        cfg.regime.checkpoint = Some(c.clone());
    }
    if let Some(a) = adapter {
        cfg.regime.inject_adapters |= a.inject_adapters;
        if let Some(b) = a.bottleneck {
            cfg.regime.inject_bottleneck = b;
        }
    }
    let ckpt_path = require_file("regime.checkpoint", &cfg.regime.checkpoint)?;
    let train_path = require_file("data.train", &cfg.data.train)?;
    let eval_path = match &cfg.data.eval {
        Some(_) => require_file("data.eval", &cfg.data.eval)?,
        None => train_path,
    };
    let kind = task_kind(&cfg, train_path)?;
    let schedule = cfg.schedule.resolve()?;

    let ckpt = load_checkpoint("regime.checkpoint", ckpt_path)?;
    let vocab = vocab_of(&ckpt)?;
    let backbone = Backbone::from_checkpoint(&ckpt)?;
    let max_len = cfg.data.max_len.min(backbone.config().max_positions);
    if adapter.is_some() && !backbone.config().has_adapters() && !cfg.regime.inject_adapters {
        return Err(CliError::field(
            "regime.inject_adapters",
            "the model has no adapters; pass --inject-adapters to add freshly initialized ones",
        ));
    }
    let train = load_dataset(kind, train_path, &vocab, None, max_len)?;
    let eval = load_dataset(kind, eval_path, &vocab, Some(&train.labels), max_len)?;

    let mut rng = seed::rng(cfg.seed, Stream::Init, TASK_HEAD_STREAM_INDEX);
    let head = TaskHead::new(kind, backbone.config().hidden_dim, train.labels.clone(), cfg.regime.head_dropout, &mut Init::Normal(&mut rng))?;
    let mut model = TaskModel { backbone, head };
    let opts = RunOptions { seed: cfg.seed, timing: cfg.timing };

    let (log, what): (TuneLog, &str) = match adapter {
        None => (finetune(&mut model, &train, &schedule, &opts, TuneRegime::Full)?, "finetune"),
        Some(_) => {
            let before = backbone_digest(&model);
            let inject = cfg.regime.inject_adapters.then_some(cfg.regime.inject_bottleneck);
            let log = adapter_tune(&mut model, &train, &schedule, &opts, inject)?;
            if backbone_digest(&model) != before {
                return Err(CliError::Invariant("frozen backbone parameters changed during adapter-tuning".into()));
            }
            (log, "adapter-tune")
        }
    };

    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let mut task_ckpt = model.to_checkpoint();
    attach_vocab(&mut task_ckpt, &vocab);
    let regime = if adapter.is_some() { "adapter" } else { "full" };
    task_ckpt.header.insert(TUNE_REGIME_KEY.into(), regime.into());
    let ckpt_out = save_checkpoint(dir, TASK_CKPT, &task_ckpt)?;
    let mut files = vec![
        ckpt_out.clone(),
        write_file(dir, METRICS_CSV, log.to_csv())?,
        write_file(dir, EPOCHS_CSV, log.epochs_csv())?,
        write_file(dir, RUN_CONFIG_JSON, serde_json::to_string_pretty(&cfg).expect("config serializes"))?,
    ];
    if let Some(step) = log.diverged_at {
        return Err(CliError::Diverged { step, checkpoint: ckpt_out });
    }
    let report = evaluate(&model, &eval, cfg.regime.eval_batch_size, cfg.timing)?;
    files.extend(write_report(dir, &report)?);
    let mut summary = format!("{what}: {} steps, {} epochs\n", log.rows.len(), log.epochs.len());
    if adapter.is_some() {
        summary.push_str(&format!(
            "tunable parameters: {} of {} (backbone checksum unchanged)\n",
            count_parameters(&model, true),
            count_parameters(&model, false)
        ));
    }
    summary.push_str(&report.pretty());
    Ok(Outcome { files, summary })
}

pub fn cmd_finetune(config: &Path, ov: &Overrides, checkpoint: Option<&PathBuf>) -> Result<Outcome> {
    tune(config, ov, checkpoint, None)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterTuneOptions {
    pub checkpoint: Option<PathBuf>,
    pub inject_adapters: bool,
    pub bottleneck: Option<usize>,
}

pub fn cmd_adapter_tune(config: &Path, ov: &Overrides, opts: &AdapterTuneOptions) -> Result<Outcome> {
    tune(config, ov, opts.checkpoint.as_ref(), Some(opts))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalFormat {
    #[default]
    Pretty,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub batch_size: usize,
    pub max_len: Option<usize>,
    pub format: EvalFormat,
    pub output_dir: Option<PathBuf>,
    pub timing: bool,
}

pub fn cmd_eval(opts: &EvalOptions) -> Result<Outcome> {
    if opts.batch_size == 0 {
        return Err(CliError::field("--batch-size", "must be positive"));
    }
    let ckpt = load_checkpoint("--checkpoint", &opts.checkpoint)?;
    let vocab = vocab_of(&ckpt)?;
    let mut model = TaskModel::from_checkpoint(&ckpt)?;
    match ckpt.header.get(TUNE_REGIME_KEY).map(String::as_str) {
        Some("adapter") => TuneRegime::Adapter.freeze_spec().apply(&mut model),
        Some("full") | None => {}
        Some(other) => return Err(CoreError::Corrupt(format!("unknown tuning regime {other:?}")).into()),
    }
    if !opts.data.is_file() {
        return Err(CliError::field("--data", format!("file not found: {}", opts.data.display())));
    }
    let max_len = opts.max_len.unwrap_or(usize::MAX).min(model.backbone.config().max_positions);
    let data = load_dataset(model.head.kind, &opts.data, &vocab, Some(&model.head.labels), max_len)?;
    let report = evaluate(&model, &data, opts.batch_size, opts.timing)?;
    let mut files = Vec::new();
    if let Some(dir) = &opts.output_dir {
        ensure_dir(dir)?;
        files = write_report(dir, &report)?;
    }
    let summary = match opts.format {
        EvalFormat::Pretty => report.pretty(),
        EvalFormat::Csv => report.to_csv(),
        EvalFormat::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
    };
    Ok(Outcome { files, summary })
}
