use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Backbone, Checkpoint, Encoder, ForwardTrace, Init, Mode, Parameterized, TokenBatch};
use crate::numerics::{Tape, Tensor, Var};

/// Header key recording the task-head kind in a task checkpoint.
pub const TASK_KIND_KEY: &str = "task.kind";
/// Header key recording the label set (JSON array) in a task checkpoint.
pub const TASK_LABELS_KEY: &str = "task.labels";
/// Header key recording the task-head dropout probability.
pub const TASK_DROPOUT_KEY: &str = "task.dropout_prob";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    SequenceClassification,
    TokenClassification,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::SequenceClassification => "sequence_classification",
            HeadKind::TokenClassification => "token_classification",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence_classification" | "sequence" | "seq" => Ok(HeadKind::SequenceClassification),
            "token_classification" | "token" | "tagging" => Ok(HeadKind::TokenClassification),
            other => Err(Error::config(format!("unknown task head kind {other:?}"))),
        }
    }
}

/// Linear classifier over the final hidden state: the `[CLS]` position for
/// sequence tasks, every position for token tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub kind: HeadKind,
    pub labels: Vec<String>,
    /// `[d, num_labels]`
    pub projection: Tensor,
    /// `[num_labels]`
    pub bias: Tensor,
    pub dropout_prob: f64,
}

impl TaskHead {
    pub fn new(kind: HeadKind, hidden_dim: usize, labels: Vec<String>, dropout_prob: f64, init: &mut Init) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::config(format!("a task head needs at least 2 labels, got {}", labels.len())));
        }
        if !(0.0..1.0).contains(&dropout_prob) {
            return Err(Error::config(format!("task head dropout must lie in [0, 1), got {dropout_prob}")));
        }
        let projection = init.weight(&[hidden_dim, labels.len()]);
        let bias = Tensor::zeros(&[labels.len()]);
        Ok(TaskHead { kind, labels, projection, bias, dropout_prob })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Logits on the tape: `[batch, labels]` or `[batch*seq, labels]`.
    pub fn forward(&self, tape: &mut Tape, hidden: Var, batch: &TokenBatch, mode: &mut Mode) -> Result<Var> {
        let d = tape.value(hidden).last_dim();
        if d != self.projection.shape()[0] {
            return Err(Error::shape(format!("task head expects width {}, hidden state has {d}", self.projection.shape()[0])));
        }
        if tape.value(hidden).rows() != batch.positions() {
            return Err(Error::shape("hidden state does not match the batch"));
        }
        let x = match self.kind {
            HeadKind::SequenceClassification => {
                let cls: Vec<usize> = (0..batch.batch).map(|b| b * batch.seq).collect();
                tape.gather_rows(hidden, &cls)?
            }
            HeadKind::TokenClassification => hidden,
        };
        let x = mode.dropout(tape, x, self.dropout_prob);
        let w = tape.param("task_head.projection", &self.projection);
        let b = tape.param("task_head.bias", &self.bias);
        tape.linear(x, w, Some(b))
    }
}

impl Parameterized for TaskHead {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("task_head.projection", &self.projection);
        f("task_head.bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("task_head.projection", &mut self.projection);
        f("task_head.bias", &mut self.bias);
    }
}

/// Head logits from the final hidden state of a recorded trace:
/// `[batch, labels]` for sequence heads, `[batch, seq, labels]` for token heads.
pub fn head_forward(trace: &ForwardTrace, head: &TaskHead) -> Result<Tensor> {
    let last = trace.hidden_states.last().unwrap_or(&trace.embedding_output);
    let shape = last.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("expected a [batch, seq, d] hidden state, got {shape:?}")));
    }
    let (b, s) = (shape[0], shape[1]);
    let batch = TokenBatch::unpadded(vec![0; b * s], b, s)?;
    let mut tape = Tape::new();
    let hidden = tape.constant(last.clone().reshape(vec![b * s, shape[2]])?);
    let out = head.forward(&mut tape, hidden, &batch, &mut Mode::Eval)?;
    let logits = tape.value(out).clone();
    match head.kind {
        HeadKind::SequenceClassification => Ok(logits),
        HeadKind::TokenClassification => logits.reshape(vec![b, s, head.num_labels()]),
    }
}

/// An encoder together with its task head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub backbone: Backbone,
    pub head: TaskHead,
}

impl TaskModel {
    /// Logits for a batch on the tape.
    pub fn logits(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<Var> {
        let vars = self.backbone.encode(tape, batch, mode)?;
        self.head.forward(tape, vars.last_hidden(), batch, mode)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::capture(self.backbone.kind(), self.backbone.config(), self);
        ckpt.header.insert(TASK_KIND_KEY.into(), self.head.kind.as_str().into());
        ckpt.header.insert(TASK_LABELS_KEY.into(), serde_json::to_string(&self.head.labels).expect("strings serialize"));
        ckpt.header.insert(TASK_DROPOUT_KEY.into(), self.head.dropout_prob.to_string());
        ckpt
    }

    /// Rebuilds a task model; fails with `Corrupt` if the checkpoint has no
    /// task head.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let backbone = Backbone::from_checkpoint(ckpt)?;
        let get = |k: &str| ckpt.header.get(k).ok_or_else(|| Error::Corrupt(format!("checkpoint has no {k} entry")));
        let kind: HeadKind = get(TASK_KIND_KEY)?.parse().map_err(|e: Error| Error::Corrupt(e.to_string()))?;
        let labels: Vec<String> =
            serde_json::from_str(get(TASK_LABELS_KEY)?).map_err(|e| Error::Corrupt(format!("task labels: {e}")))?;
        let dropout: f64 = get(TASK_DROPOUT_KEY)?.parse().map_err(|e| Error::Corrupt(format!("task dropout: {e}")))?;
        let mut head = TaskHead::new(kind, backbone.config().hidden_dim, labels, dropout, &mut Init::Zeros)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        ckpt.load_into(&mut head, &|_| true)?;
        Ok(TaskModel { backbone, head })
    }
}

impl Parameterized for TaskModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.backbone.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.backbone.visit_mut(f);
        self.head.visit_mut(f);
    }
}
