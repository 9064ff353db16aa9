use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::TaskDataset;
use super::head::{HeadKind, TaskModel};
use super::metrics::{f1_from_counts, f1_score, F1Scheme};
use crate::error::{Error, Result};
use crate::model::{count_parameters, Mode};
use crate::numerics::Tape;

/// Confusion counts for one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
}

impl ClassCounts {
    pub fn f1(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: HeadKind,
    pub examples: usize,
    /// Sequence accuracy, or accuracy over labeled tokens.
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Equals accuracy for sequence tasks; token-micro F1 for token tasks.
    pub micro_f1: f64,
    /// Entity-span F1, token tasks only.
    pub entity_f1: Option<f64>,
    pub per_class: Vec<ClassCounts>,
    pub params_total: usize,
    pub params_tunable: usize,
    /// Mean forward time per batch; 0 unless timing was requested.
    pub ms_per_step: f64,
}

pub const REPORT_CSV_HEADER: &str =
    "task,examples,accuracy,macro_f1,micro_f1,entity_f1,params_total,params_tunable,ms_per_step";

impl EvalReport {
    /// Header plus one summary row.
    pub fn to_csv(&self) -> String {
        let entity = self.entity_f1.map_or(String::new(), |v| v.to_string());
        format!(
            "{REPORT_CSV_HEADER}\n{},{},{},{},{},{},{},{},{}\n",
            self.task.as_str(),
            self.examples,
            self.accuracy,
            self.macro_f1,
            self.micro_f1,
            entity,
            self.params_total,
            self.params_tunable,
            self.ms_per_step
        )
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("label,tp,fp,fn,support,f1\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{},{},{},{},{}", c.label, c.tp, c.fp, c.fn_, c.support, c.f1());
        }
        out
    }

    pub fn pretty(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task            {}", self.task.as_str());
        let _ = writeln!(out, "examples        {}", self.examples);
        let _ = writeln!(out, "accuracy        {:.4}", self.accuracy);
        let _ = writeln!(out, "macro F1        {:.4}", self.macro_f1);
        let _ = writeln!(out, "micro F1        {:.4}", self.micro_f1);
        if let Some(e) = self.entity_f1 {
            let _ = writeln!(out, "entity F1       {e:.4}");
        }
        let _ = writeln!(out, "params total    {}", self.params_total);
        let _ = writeln!(out, "params tunable  {}", self.params_tunable);
        let _ = writeln!(out, "ms/step         {:.3}", self.ms_per_step);
        let _ = writeln!(out, "{:<12} {:>6} {:>6} {:>6} {:>8} {:>7}", "label", "tp", "fp", "fn", "support", "f1");
        for c in &self.per_class {
            let _ = writeln!(out, "{:<12} {:>6} {:>6} {:>6} {:>8} {:>7.4}", c.label, c.tp, c.fp, c.fn_, c.support, c.f1());
        }
        out
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted label per target slot (`None` where there is no target), in
/// dataset order, from eval-mode passes over batches of `batch_size`.
pub fn predict(model: &TaskModel, dataset: &TaskDataset, batch_size: usize) -> Result<Vec<Vec<Option<usize>>>> {
    Ok(predict_timed(model, dataset, batch_size, false)?.0)
}

fn predict_timed(
    model: &TaskModel,
    dataset: &TaskDataset,
    batch_size: usize,
    timing: bool,
) -> Result<(Vec<Vec<Option<usize>>>, f64)> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut out = Vec::with_capacity(dataset.len());
    let mut elapsed = 0.0;
    let mut batches = 0;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (tokens, _) = dataset.batch(chunk)?;
        let start = timing.then(Instant::now);
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, &tokens, &mut Mode::Eval)?;
        if let Some(s) = start {
            elapsed += s.elapsed().as_secs_f64() * 1e3;
        }
        batches += 1;
        let l = tape.value(logits);
        let width = l.last_dim();
        let rows: Vec<usize> = l.data().chunks(width).map(argmax).collect();
        for (b, &i) in chunk.iter().enumerate() {
            let ex = &dataset.examples[i];
            let preds = match dataset.kind {
                HeadKind::SequenceClassification => vec![Some(rows[b])],
                HeadKind::TokenClassification => ex
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(j, t)| t.map(|_| rows[b * tokens.seq + j]))
                    .collect(),
            };
            out.push(preds);
        }
    }
    let ms = if timing { elapsed / batches as f64 } else { 0.0 };
    Ok((out, ms))
}

/// Single deterministic pass (dropout off) over `dataset`.
pub fn evaluate(model: &TaskModel, dataset: &TaskDataset, batch_size: usize, timing: bool) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    if model.head.kind != dataset.kind || model.head.labels != dataset.labels {
        return Err(Error::input(format!(
            "label space mismatch: head has {:?} {:?}, dataset has {:?} {:?}",
            model.head.kind, model.head.labels, dataset.kind, dataset.labels
        )));
    }
    let (preds, ms_per_step) = predict_timed(model, dataset, batch_size, timing)?;
    let n_labels = dataset.labels.len();
    let mut counts: Vec<ClassCounts> = dataset
        .labels
        .iter()
        .map(|l| ClassCounts { label: l.clone(), tp: 0, fp: 0, fn_: 0, support: 0 })
        .collect();
    let (mut correct, mut total) = (0usize, 0usize);
    let mut pred_tags = Vec::with_capacity(preds.len());
    let mut gold_tags = Vec::with_capacity(preds.len());
    for (ex, p) in dataset.examples.iter().zip(&preds) {
        let mut pt = Vec::new();
        let mut gt = Vec::new();
        for (g, p) in ex.targets.iter().zip(p) {
            let (Some(g), Some(p)) = (*g, *p) else { continue };
            debug_assert!(g < n_labels && p < n_labels);
            total += 1;
            counts[g].support += 1;
            if g == p {
                correct += 1;
                counts[g].tp += 1;
            } else {
                counts[g].fn_ += 1;
                counts[p].fp += 1;
            }
            pt.push(dataset.labels[p].clone());
            gt.push(dataset.labels[g].clone());
        }
        pred_tags.push(pt);
        gold_tags.push(gt);
    }
    let accuracy = correct as f64 / total.max(1) as f64;
    let macro_f1 = counts.iter().map(ClassCounts::f1).sum::<f64>() / n_labels as f64;
    let (micro_f1, entity_f1) = match dataset.kind {
        HeadKind::SequenceClassification => (accuracy, None),
        HeadKind::TokenClassification => (
            f1_score(&pred_tags, &gold_tags, F1Scheme::TokenMicro)?,
            Some(f1_score(&pred_tags, &gold_tags, F1Scheme::EntitySpan)?),
        ),
    };
    Ok(EvalReport {
        task: dataset.kind,
        examples: dataset.len(),
        accuracy,
        macro_f1,
        micro_f1,
        entity_f1,
        per_class: counts,
        params_total: count_parameters(model, false),
        params_tunable: count_parameters(model, true),
        ms_per_step,
    })
}
