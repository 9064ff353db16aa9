use std::path::Path;

use recdistill_core::data::{read_documents, window_corpus, Vocabulary};
use recdistill_core::distill::{build_layer_map, AlignmentMode};
use recdistill_core::model::{apply_freeze, count_parameters, Backbone, Checkpoint, Encoder, Init, RecursiveStudent, TeacherModel};
use recdistill_core::seed::{self, Stream};
use recdistill_core::train::{check_distill_compat, distill_student, pretrain_teacher, RunOptions, TrainLog};

use super::artifacts::*;
use super::{prepare, Outcome, Overrides};
use crate::config::{require_file, RunConfig};
use crate::error::{CliError, Result};

fn windows(cfg: &RunConfig, docs: &[String], vocab: &Vocabulary) -> Result<Vec<Vec<u32>>> {
    let ids: Vec<Vec<u32>> = docs.iter().map(|d| vocab.encode(d)).collect();
    let seqs = window_corpus(&ids, cfg.data.window, cfg.data.stride, cfg.data.max_per_doc)?;
    if seqs.is_empty() {
        return Err(CliError::field("data.corpus", "corpus produced no training windows"));
    }
    Ok(seqs)
}

fn run_options(cfg: &RunConfig) -> RunOptions {
    RunOptions { seed: cfg.seed, timing: cfg.timing }
}

/// Writes checkpoint, metrics and the resolved config, then reports
/// divergence if it happened.
fn finish_run(cfg: &RunConfig, ckpt_name: &str, ckpt: &Checkpoint, log: &TrainLog, what: &str) -> Result<Outcome> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let ckpt_path = save_checkpoint(dir, ckpt_name, ckpt)?;
    let metrics = write_file(dir, METRICS_CSV, log.to_csv())?;
    let config = write_file(dir, RUN_CONFIG_JSON, serde_json::to_string_pretty(cfg).expect("config serializes"))?;
    if let Some(step) = log.diverged_at {
        return Err(CliError::Diverged { step, checkpoint: ckpt_path });
    }
    let last = log.rows.last().map(|r| r.report.clone()).unwrap_or_default();
    let summary = format!(
        "{what}: {} steps, final total loss {:.6}\nwrote {}\nwrote {}",
        log.rows.len(),
        last.total,
        ckpt_path.display(),
        metrics.display()
    );
    Ok(Outcome { files: vec![ckpt_path, metrics, config], summary })
}

pub fn cmd_pretrain_teacher(config: &Path, ov: &Overrides) -> Result<Outcome> {
    let cfg = prepare(config, ov)?;
    let corpus = require_file("data.corpus", &cfg.data.corpus)?;
    let schedule = cfg.schedule.resolve()?;
    let docs = read_documents(corpus)?;
    let vocab = Vocabulary::build(&docs, cfg.data.vocab_size, cfg.data.tokenizer)?;
    let sequences = windows(&cfg, &docs, &vocab)?;
    let model_cfg = cfg.model.to_model_config(vocab.len());
    let mut teacher = TeacherModel::new(model_cfg, &mut Init::Normal(&mut seed::rng(cfg.seed, Stream::Init, 0)))?;
    log::info!(
        "teacher: {} parameters, {} sequences, {} steps",
        count_parameters(&teacher, false),
        sequences.len(),
        schedule.total_steps
    );
    let log = pretrain_teacher(&mut teacher, &sequences, &cfg.data.masking, &schedule, &run_options(&cfg))?;
    let mut ckpt = Backbone::Teacher(teacher).to_checkpoint();
    attach_vocab(&mut ckpt, &vocab);
    let mut out = finish_run(&cfg, TEACHER_CKPT, &ckpt, &log, "pretrain-teacher")?;
    out.files.push(write_file(&cfg.output_dir, VOCAB_TXT, vocab.to_file_string())?);
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillOptions {
    pub alignment: Option<AlignmentMode>,
    pub embed_loss: bool,
    pub teacher: Option<std::path::PathBuf>,
}

pub fn cmd_distill(config: &Path, ov: &Overrides, opts: &DistillOptions) -> Result<Outcome> {
    let mut cfg = prepare(config, ov)?;
    if let Some(a) = opts.alignment {
        cfg.weights.alignment_mode = a;
    }
    cfg.weights.embed_loss |= opts.embed_loss;
    if let Some(t) = &opts.teacher {
        cfg.regime.teacher_checkpoint = Some(t.clone());
    }
    let teacher_path = require_file("regime.teacher_checkpoint", &cfg.regime.teacher_checkpoint)?;
    let corpus = require_file("data.corpus", &cfg.data.corpus)?;
    let schedule = cfg.schedule.resolve()?;

    let ckpt = load_checkpoint("regime.teacher_checkpoint", teacher_path)?;
    let vocab = vocab_of(&ckpt)?;
    let mut teacher = Backbone::from_checkpoint(&ckpt)?;
    apply_freeze(&mut teacher, &|_| false);

    let student_cfg = cfg.model.to_model_config(vocab.len());
    let teacher_layers = teacher.config().num_layers;
    let map = build_layer_map(student_cfg.num_layers, teacher_layers, cfg.layer_map)
        .map_err(|e| CliError::field("layer_map", e.to_string()))?;
    check_distill_compat(&student_cfg, teacher.config(), &map).map_err(|e| CliError::field("model", e.to_string()))?;

    let mut student = RecursiveStudent::new(student_cfg, &mut Init::Normal(&mut seed::rng(cfg.seed, Stream::Init, 0)))?;
    if let Some(layer) = cfg.regime.init_from_teacher_layer {
        let Backbone::Teacher(t) = &teacher else {
            return Err(CliError::field("regime.init_from_teacher_layer", "the teacher checkpoint is not a teacher model"));
        };
        if layer == 0 || layer > teacher_layers {
            return Err(CliError::field("regime.init_from_teacher_layer", format!("must lie in 1..={teacher_layers}")));
        }
        student.init_from_teacher(t, layer - 1).map_err(|e| CliError::field("regime.init_from_teacher_layer", e.to_string()))?;
    }

    let docs = read_documents(corpus)?;
    let sequences = windows(&cfg, &docs, &vocab)?;
    log::info!(
        "student: {} parameters, teacher: {}, layer map {:?}",
        count_parameters(&student, false),
        count_parameters(&teacher, false),
        map.mapping
    );
    let log = distill_student(
        &mut student,
        &teacher,
        &sequences,
        &cfg.data.masking,
        &cfg.weights,
        &map,
        &schedule,
        &run_options(&cfg),
    )?;
    let mut ckpt = Backbone::Student(student).to_checkpoint();
    attach_vocab(&mut ckpt, &vocab);
    finish_run(&cfg, STUDENT_CKPT, &ckpt, &log, "distill")
}
