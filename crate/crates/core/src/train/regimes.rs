use std::time::Instant;

use rand::seq::SliceRandom;

use super::log::{EpochSummary, MetricsRow, TrainLog, TuneLog, TuneRow};
use super::optim::{adamw_step, clip_grad_norm, OptimizerState};
use super::schedule::{lr_at, ScheduleConfig};
use crate::data::{apply_mlm_masking, DistillBatch, MaskingConfig};
use crate::distill::{mlm_loss_var, teacher_trace, total_loss, LayerMap, LossReport, LossWeights};
use crate::error::{Error, Result};
use crate::eval::{TaskDataset, TaskModel};
use crate::model::{
    accumulate_grads, apply_freeze, is_adapter_param, is_task_head_param, zero_grads, Encoder, Init, Mode,
    ModelConfig, Parameterized,
};
use crate::numerics::{Tape, Var};
use crate::seed::{self, Stream};

/// Init-stream index used for adapters injected before adapter-tuning.
pub const ADAPTER_INJECT_STREAM_INDEX: u64 = 1 << 32;

/// Init-stream index used for freshly created task heads.
pub const TASK_HEAD_STREAM_INDEX: u64 = (1 << 32) + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    /// Record wall-clock time per step; off keeps logs reproducible.
    pub timing: bool,
}

/// Which parameters an optimizer may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezeSpec {
    Everything,
    /// Adapters and the task head only.
    AdaptersAndHead,
}

impl FreezeSpec {
    pub fn tunable(self, name: &str) -> bool {
        match self {
            FreezeSpec::Everything => true,
            FreezeSpec::AdaptersAndHead => is_adapter_param(name) || is_task_head_param(name),
        }
    }

    pub fn apply<M: Parameterized + ?Sized>(self, model: &mut M) {
        apply_freeze(model, &|n| self.tunable(n));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneRegime {
    Full,
    Adapter,
}

impl TuneRegime {
    pub fn freeze_spec(self) -> FreezeSpec {
        match self {
            TuneRegime::Full => FreezeSpec::Everything,
            TuneRegime::Adapter => FreezeSpec::AdaptersAndHead,
        }
    }
}

/// Maps positions of the draw stream to example indices, reshuffling at
/// every epoch from the data-order stream.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        EpochSampler { n, seed, cached: None }
    }

    pub fn epoch_of(&self, position: u64) -> u64 {
        position / self.n as u64
    }

    pub fn index(&mut self, position: u64) -> usize {
        let epoch = self.epoch_of(position);
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut seed::rng(self.seed, Stream::DataOrder, epoch));
            self.cached = Some((epoch, perm));
        }
        let (_, perm) = self.cached.as_ref().expect("filled above");
        perm[(position % self.n as u64) as usize]
    }

    /// Example indices of optimizer step `step`.
    pub fn step_indices(&mut self, step: usize, batch: usize) -> Vec<usize> {
        (0..batch).map(|j| self.index((step * batch + j) as u64)).collect()
    }
}

/// Masked batch for `step`; each draw is masked with its stream position as
/// the masking index, so repeated sequences get fresh masks.
fn masked_batch(
    sequences: &[Vec<u32>],
    sampler: &mut EpochSampler,
    step: usize,
    batch: usize,
    vocab_size: usize,
    masking: &MaskingConfig,
    seed: u64,
) -> Result<DistillBatch> {
    let rows = (0..batch)
        .map(|j| {
            let position = (step * batch + j) as u64;
            apply_mlm_masking(&sequences[sampler.index(position)], vocab_size, masking, seed, position)
        })
        .collect::<Result<Vec<_>>>()?;
    DistillBatch::from_masked(&rows)
}

/// Backward pass, clipping and one AdamW update. Returns false if the
/// optimizer skipped the step.
fn optimize<M: Parameterized + ?Sized>(
    model: &mut M,
    tape: &mut Tape,
    loss: Var,
    state: &mut OptimizerState,
    schedule: &ScheduleConfig,
    lr: f64,
) -> Result<bool> {
    tape.backward(loss)?;
    zero_grads(model);
    accumulate_grads(model, tape);
    if let Some(c) = schedule.clip_norm {
        clip_grad_norm(model, c);
    }
    let applied = adamw_step(model, state, lr)?;
    zero_grads(model);
    Ok(applied)
}

fn check_corpus(sequences: &[Vec<u32>]) -> Result<()> {
    if sequences.is_empty() || sequences.iter().any(Vec::is_empty) {
        return Err(Error::input("training corpus is empty or holds an empty sequence"));
    }
    Ok(())
}

fn elapsed_ms(start: Option<Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
}

/// Masked-language-model training of an encoder. Stops early (recording
/// `diverged_at`) if the loss becomes non-finite; the parameters are then
/// those of the last finite step.
pub fn pretrain_teacher<E: Encoder>(
    model: &mut E,
    sequences: &[Vec<u32>],
    masking: &MaskingConfig,
    schedule: &ScheduleConfig,
    opts: &RunOptions,
) -> Result<TrainLog> {
    schedule.validate()?;
    masking.validate()?;
    check_corpus(sequences)?;
    let vocab = model.config().vocab_size;
    let mut sampler = EpochSampler::new(sequences.len(), opts.seed);
    let mut state = OptimizerState::new(schedule.optimizer);
    let mut log = TrainLog::default();
    for step in 0..schedule.total_steps {
        let start = opts.timing.then(Instant::now);
        let lr = lr_at(step, schedule);
        let batch = masked_batch(sequences, &mut sampler, step, schedule.batch_size, vocab, masking, opts.seed)?;
        let mut tape = Tape::new();
        let mut mode = Mode::Train(seed::rng(opts.seed, Stream::Dropout, step as u64));
        let vars = model.encode(&mut tape, &batch.tokens, &mut mode)?;
        let logits = model.mlm_logits(&mut tape, vars.last_hidden())?;
        let loss = mlm_loss_var(&mut tape, logits, &batch.labels, false)?;
        let value = tape.value(loss).item();
        let report = LossReport { mlm: value, total: value, ..LossReport::default() };
        if !value.is_finite() {
            log::error!("MLM loss is {value} at step {step}; stopping");
            log.rows.push(MetricsRow { step, lr, report, wall_ms: elapsed_ms(start) });
            log.diverged_at = Some(step);
            break;
        }
        if !optimize(model, &mut tape, loss, &mut state, schedule, lr)? {
            log.skipped_steps += 1;
        }
        log.rows.push(MetricsRow { step, lr, report, wall_ms: elapsed_ms(start) });
    }
    Ok(log)
}

/// Checks that a student can be distilled from a teacher under `map`.
pub fn check_distill_compat(student: &ModelConfig, teacher: &ModelConfig, map: &LayerMap) -> Result<()> {
    let same = [
        ("hidden_dim", student.hidden_dim, teacher.hidden_dim),
        ("num_heads", student.num_heads, teacher.num_heads),
        ("vocab_size", student.vocab_size, teacher.vocab_size),
    ];
    for (field, s, t) in same {
        if s != t {
            return Err(Error::config(format!("student {field} {s} differs from teacher {field} {t}")));
        }
    }
    if map.student_iterations != student.num_layers || map.teacher_layers != teacher.num_layers {
        return Err(Error::config(format!(
            "layer map covers {}x{} but student has {} iterations and teacher {} layers",
            map.student_iterations, map.teacher_layers, student.num_layers, teacher.num_layers
        )));
    }
    Ok(())
}

/// Trains `student` on the full distillation objective against a teacher
/// evaluated without gradients.
#[allow(clippy::too_many_arguments)]
pub fn distill_student<S: Encoder>(
    student: &mut S,
    teacher: &dyn Encoder,
    sequences: &[Vec<u32>],
    masking: &MaskingConfig,
    weights: &LossWeights,
    map: &LayerMap,
    schedule: &ScheduleConfig,
    opts: &RunOptions,
) -> Result<TrainLog> {
    schedule.validate()?;
    masking.validate()?;
    weights.validate()?;
    check_corpus(sequences)?;
    check_distill_compat(student.config(), teacher.config(), map)?;
    let vocab = student.config().vocab_size;
    let mut sampler = EpochSampler::new(sequences.len(), opts.seed);
    let mut state = OptimizerState::new(schedule.optimizer);
    let mut log = TrainLog::default();
    for step in 0..schedule.total_steps {
        let start = opts.timing.then(Instant::now);
        let lr = lr_at(step, schedule);
        let batch = masked_batch(sequences, &mut sampler, step, schedule.batch_size, vocab, masking, opts.seed)?;
        let trace = teacher_trace(teacher, &batch.tokens)?;
        let mut tape = Tape::new();
        let mut mode = Mode::Train(seed::rng(opts.seed, Stream::Dropout, step as u64));
        let (loss, report) =
            total_loss(&mut tape, &*student, &trace, &batch.tokens, &batch.labels, weights, map, &mut mode)?;
        if !report.total.is_finite() {
            log::error!("distillation loss is {} at step {step}; stopping", report.total);
            log.rows.push(MetricsRow { step, lr, report, wall_ms: elapsed_ms(start) });
            log.diverged_at = Some(step);
            break;
        }
        log::debug!("{}", report.log_line(step));
        if !optimize(student, &mut tape, loss, &mut state, schedule, lr)? {
            log.skipped_steps += 1;
        }
        log.rows.push(MetricsRow { step, lr, report, wall_ms: elapsed_ms(start) });
    }
    Ok(log)
}

/// Supervised training of backbone and head. Under `TuneRegime::Adapter`
/// everything except adapters and the head is frozen first.
pub fn finetune(
    model: &mut TaskModel,
    data: &TaskDataset,
    schedule: &ScheduleConfig,
    opts: &RunOptions,
    regime: TuneRegime,
) -> Result<TuneLog> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::input("training dataset is empty"));
    }
    if model.head.kind != data.kind || model.head.labels != data.labels {
        return Err(Error::input(format!(
            "label space mismatch: head has {:?}, dataset has {:?}",
            model.head.labels, data.labels
        )));
    }
    if regime == TuneRegime::Adapter && !model.backbone.config().has_adapters() {
        return Err(Error::config("adapter-tuning needs a model with adapters"));
    }
    regime.freeze_spec().apply(model);

    let mut sampler = EpochSampler::new(data.len(), opts.seed);
    let mut state = OptimizerState::new(schedule.optimizer);
    let mut log = TuneLog::default();
    let mut epoch_acc = (0usize, 0.0f64, 0usize, 0usize); // (steps, loss sum, correct, total)
    let mut current_epoch = 0u64;
    for step in 0..schedule.total_steps {
        let epoch = sampler.epoch_of((step * schedule.batch_size) as u64);
        if epoch != current_epoch {
            push_epoch(&mut log, current_epoch, epoch_acc);
            epoch_acc = (0, 0.0, 0, 0);
            current_epoch = epoch;
        }
        let start = opts.timing.then(Instant::now);
        let lr = lr_at(step, schedule);
        let indices = sampler.step_indices(step, schedule.batch_size);
        let (tokens, targets) = data.batch(&indices)?;
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::input(format!("step {step}: batch has no labeled positions")));
        }
        let mut tape = Tape::new();
        let mut mode = Mode::Train(seed::rng(opts.seed, Stream::Dropout, step as u64));
        let logits = model.logits(&mut tape, &tokens, &mut mode)?;
        let loss = tape.cross_entropy_rows(logits, &targets, 1.0 / count as f64)?;
        let value = tape.value(loss).item();
        let correct = batch_correct(tape.value(logits).data(), model.head.num_labels(), &targets);
        if !value.is_finite() {
            log::error!("task loss is {value} at step {step}; stopping");
            log.diverged_at = Some(step);
            break;
        }
        if !optimize(model, &mut tape, loss, &mut state, schedule, lr)? {
            log.skipped_steps += 1;
        }
        let accuracy = correct as f64 / count as f64;
        log.rows.push(TuneRow { step, lr, loss: value, accuracy, wall_ms: elapsed_ms(start) });
        epoch_acc.0 += 1;
        epoch_acc.1 += value;
        epoch_acc.2 += correct;
        epoch_acc.3 += count;
    }
    push_epoch(&mut log, current_epoch, epoch_acc);
    Ok(log)
}

fn push_epoch(log: &mut TuneLog, epoch: u64, (steps, loss, correct, total): (usize, f64, usize, usize)) {
    if steps > 0 {
        log.epochs.push(EpochSummary {
            epoch: epoch as usize,
            mean_loss: loss / steps as f64,
            accuracy: correct as f64 / total as f64,
        });
    }
}

fn batch_correct(logits: &[f64], width: usize, targets: &[Option<usize>]) -> usize {
    logits
        .chunks(width)
        .zip(targets)
        .filter(|(row, t)| {
            t.is_some_and(|t| row.iter().enumerate().all(|(i, &v)| i == t || v < row[t]))
        })
        .count()
}

/// Adapter-tuning. A model without adapters is an error unless
/// `inject_bottleneck` is given, in which case freshly initialized adapters
/// of that width are added first.
pub fn adapter_tune(
    model: &mut TaskModel,
    data: &TaskDataset,
    schedule: &ScheduleConfig,
    opts: &RunOptions,
    inject_bottleneck: Option<usize>,
) -> Result<TuneLog> {
    if !model.backbone.config().has_adapters() {
        let Some(b) = inject_bottleneck else {
            return Err(Error::config("model has no adapters; pass an adapter width to inject fresh ones"));
        };
        let mut rng = seed::rng(opts.seed, Stream::Init, ADAPTER_INJECT_STREAM_INDEX);
        model.backbone.inject_adapters(b, &mut Init::Normal(&mut rng))?;
    }
    finetune(model, data, schedule, opts, TuneRegime::Adapter)
}
