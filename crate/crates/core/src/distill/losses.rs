use serde::{Deserialize, Serialize};

use super::layer_map::LayerMap;
use crate::error::{Error, Result};
use crate::model::{Encoder, EncoderVars, ForwardTrace, Mode, TokenBatch};
use crate::numerics::{KlDirection, Tape, Tensor, Var};

/// Which alignment terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    #[default]
    Full,
    HiddenOnly,
    AttentionOnly,
    None,
}

impl AlignmentMode {
    pub fn uses_attention(self) -> bool {
        matches!(self, AlignmentMode::Full | AlignmentMode::AttentionOnly)
    }

    pub fn uses_hidden(self) -> bool {
        matches!(self, AlignmentMode::Full | AlignmentMode::HiddenOnly)
    }
}

impl std::str::FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Self::Full),
            "hidden_only" | "hidden" => Ok(Self::HiddenOnly),
            "attention_only" | "attention" => Ok(Self::AttentionOnly),
            "none" => Ok(Self::None),
            other => Err(Error::config(format!("unknown alignment mode {other:?}"))),
        }
    }
}

/// Loss weights and objective variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_mlm: f64,
    pub lambda_align: f64,
    pub lambda_out: f64,
    pub alignment_mode: AlignmentMode,
    /// Adds the embedding alignment term with weight 1.
    pub embed_loss: bool,
    /// Keep the MLM and output terms as raw sums over masked positions.
    pub raw_sums: bool,
    /// Average the alignment term over iterations instead of summing.
    pub mean_over_layers: bool,
    pub kl_direction: KlDirection,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mlm: 1.0,
            lambda_align: 3.0,
            lambda_out: 5.0,
            alignment_mode: AlignmentMode::Full,
            embed_loss: false,
            raw_sums: false,
            mean_over_layers: false,
            kl_direction: KlDirection::StudentFirst,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_mlm", self.lambda_mlm), ("lambda_align", self.lambda_align), ("lambda_out", self.lambda_out)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a nonnegative finite number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Alignment terms of one student iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    /// 1-based student iteration.
    pub student_layer: usize,
    /// 1-based teacher layer.
    pub teacher_layer: usize,
    pub att: f64,
    pub hidden: f64,
}

/// Every loss term of one step. `att`, `hidden` and `align` are summed over
/// iterations (or averaged, with `mean_over_layers`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mlm: f64,
    pub att: f64,
    pub hidden: f64,
    pub align: f64,
    pub out: f64,
    pub embed: f64,
    pub total: f64,
    pub per_layer: Vec<LayerAlignment>,
}

impl LossReport {
    /// `lambda_mlm*mlm + lambda_align*align + lambda_out*out (+ embed)`.
    pub fn combine(&self, w: &LossWeights) -> f64 {
        let mut t = w.lambda_mlm * self.mlm + w.lambda_out * self.out;
        if w.alignment_mode != AlignmentMode::None {
            t += w.lambda_align * self.align;
        }
        if w.embed_loss {
            t += self.embed;
        }
        t
    }

    /// One `key=value` line per step.
    pub fn log_line(&self, step: usize) -> String {
        format!(
            "step={step} mlm={:.6} att={:.6} hidden={:.6} align={:.6} out={:.6} embed={:.6} total={:.6}",
            self.mlm, self.att, self.hidden, self.align, self.out, self.embed, self.total
        )
    }
}

fn masked_scale(count: usize, raw_sums: bool, what: &str) -> Option<f64> {
    if count == 0 {
        log::warn!("{what}: no masked positions in batch; term is 0");
        return None;
    }
    Some(if raw_sums { 1.0 } else { 1.0 / count as f64 })
}

/// Cross-entropy over labeled rows of `logits` (`[positions, vocab]`),
/// divided by the number of labeled rows unless `raw_sums`.
pub fn mlm_loss_var(tape: &mut Tape, logits: Var, labels: &[Option<usize>], raw_sums: bool) -> Result<Var> {
    let count = labels.iter().filter(|l| l.is_some()).count();
    let scale = masked_scale(count, raw_sums, "mlm loss").unwrap_or(0.0);
    tape.cross_entropy_rows(logits, labels, scale)
}

/// `1/(H N') sum KL(student row || teacher row)` over valid query rows of
/// `[batch, heads, seq, seq]` maps; `N'` counts valid rows over the batch.
pub fn attention_alignment_var(
    tape: &mut Tape,
    student: Var,
    teacher: &Tensor,
    valid: &[bool],
    dir: KlDirection,
) -> Result<Var> {
    let shape = tape.value(student).shape().to_vec();
    if shape.len() != 4 || teacher.ndim() != 4 {
        return Err(Error::shape(format!("attention maps must be 4-d, got {shape:?} and {:?}", teacher.shape())));
    }
    if shape[1] != teacher.shape()[1] {
        return Err(Error::config(format!("student has {} heads, teacher {}", shape[1], teacher.shape()[1])));
    }
    let (b, h, s) = (shape[0], shape[1], shape[2]);
    if valid.len() != b * s {
        return Err(Error::shape(format!("validity mask of {} for {b}x{s} positions", valid.len())));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    let w = if n_valid == 0 { 0.0 } else { 1.0 / (h * n_valid) as f64 };
    let mut row_weight = Vec::with_capacity(b * h * s);
    for bi in 0..b {
        for _ in 0..h {
            row_weight.extend(valid[bi * s..(bi + 1) * s].iter().map(|&v| if v { w } else { 0.0 }));
        }
    }
    tape.attention_kl(student, teacher, &row_weight, dir)
}

/// `1/N' sum (1 - cos)` over valid rows of `[positions, d]` states.
pub fn cosine_alignment_var(tape: &mut Tape, student: Var, teacher: &Tensor, valid: &[bool]) -> Result<Var> {
    let sv = tape.value(student);
    let d = sv.last_dim();
    let rows = sv.rows();
    if teacher.numel() != sv.numel() || teacher.last_dim() != d {
        return Err(Error::shape(format!("student states {:?} vs teacher {:?}", sv.shape(), teacher.shape())));
    }
    if valid.len() != rows {
        return Err(Error::shape(format!("validity mask of {} for {rows} rows", valid.len())));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    let w = if n_valid == 0 { 0.0 } else { 1.0 / n_valid as f64 };
    let row_weight: Vec<f64> = valid.iter().map(|&v| if v { w } else { 0.0 }).collect();
    let t = tape.constant(teacher.clone().reshape(vec![rows, d])?);
    tape.cosine_loss(student, t, &row_weight)
}

/// Masked-position KL between student and teacher output distributions,
/// divided by the number of masked positions unless `raw_sums`.
pub fn output_loss_var(
    tape: &mut Tape,
    logits: Var,
    teacher_logits: &Tensor,
    masked: &[bool],
    raw_sums: bool,
    dir: KlDirection,
) -> Result<Var> {
    let count = masked.iter().filter(|&&m| m).count();
    let scale = masked_scale(count, raw_sums, "output loss").unwrap_or(0.0);
    let row_weight: Vec<f64> = masked.iter().map(|&m| if m { scale } else { 0.0 }).collect();
    let sv = tape.value(logits);
    let teacher = teacher_logits.clone().reshape(sv.shape().to_vec())?;
    tape.output_kl(logits, &teacher, &row_weight, dir)
}

fn run_scalar(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.value(v).item())
}

/// Value-level MLM loss on `[.., vocab]` logits.
pub fn mlm_loss(logits: &Tensor, labels: &[Option<usize>], raw_sums: bool) -> Result<f64> {
    let rows = logits.rows();
    let flat = logits.clone().reshape(vec![rows, logits.last_dim()])?;
    run_scalar(|t| {
        let l = t.constant(flat);
        mlm_loss_var(t, l, labels, raw_sums)
    })
}

/// Value-level attention alignment. `[heads, seq, seq]` maps are treated as
/// a batch of one.
pub fn attention_alignment_loss(student: &Tensor, teacher: &Tensor, valid: &[bool], dir: KlDirection) -> Result<f64> {
    let lift = |t: &Tensor| -> Result<Tensor> {
        if t.ndim() == 3 {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.clone().reshape(s)
        } else {
            Ok(t.clone())
        }
    };
    let (s, t) = (lift(student)?, lift(teacher)?);
    run_scalar(|tape| {
        let v = tape.constant(s);
        attention_alignment_var(tape, v, &t, valid, dir)
    })
}

/// Value-level cosine alignment of `[.., d]` states over valid rows.
pub fn hidden_alignment_loss(student: &Tensor, teacher: &Tensor, valid: &[bool]) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", student.shape(), teacher.shape())));
    }
    let flat = student.clone().reshape(vec![student.rows(), student.last_dim()])?;
    run_scalar(|tape| {
        let v = tape.constant(flat);
        cosine_alignment_var(tape, v, teacher, valid)
    })
}

/// Value-level embedding alignment; every row counts.
pub fn embedding_loss(student: &Tensor, teacher: &Tensor) -> Result<f64> {
    hidden_alignment_loss(student, teacher, &vec![true; student.rows()])
}

/// Value-level output loss.
pub fn output_loss(student: &Tensor, teacher: &Tensor, masked: &[bool], raw_sums: bool, dir: KlDirection) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", student.shape(), teacher.shape())));
    }
    let flat = student.clone().reshape(vec![student.rows(), student.last_dim()])?;
    run_scalar(|tape| {
        let v = tape.constant(flat);
        output_loss_var(tape, v, teacher, masked, raw_sums, dir)
    })
}

/// Tape handles of the alignment term.
pub struct AlignmentVars {
    pub total: Option<Var>,
    pub att: Vec<Option<Var>>,
    pub hidden: Vec<Option<Var>>,
}

/// Sum over iterations of attention and hidden alignment against the
/// mapped teacher layers. Returns no total for [`AlignmentMode::None`].
pub fn alignment_var(
    tape: &mut Tape,
    student: &EncoderVars,
    teacher: &ForwardTrace,
    valid: &[bool],
    map: &LayerMap,
    weights: &LossWeights,
) -> Result<AlignmentVars> {
    let mode = weights.alignment_mode;
    let n = student.hidden.len();
    if map.student_iterations != n || map.teacher_layers != teacher.hidden_states.len() {
        return Err(Error::config(format!(
            "layer map {}->{} does not fit student {n} / teacher {}",
            map.student_iterations,
            map.teacher_layers,
            teacher.hidden_states.len()
        )));
    }
    let mut out = AlignmentVars { total: None, att: vec![None; n], hidden: vec![None; n] };
    if mode == AlignmentMode::None {
        return Ok(out);
    }
    let per_layer = if weights.mean_over_layers { 1.0 / n as f64 } else { 1.0 };
    let mut terms = Vec::new();
    for l in 0..n {
        let tl = map.teacher_index(l);
        if mode.uses_attention() {
            let v = attention_alignment_var(tape, student.attention[l], &teacher.attention_maps[tl], valid, weights.kl_direction)?;
            out.att[l] = Some(v);
            terms.push((v, per_layer));
        }
        if mode.uses_hidden() {
            let v = cosine_alignment_var(tape, student.hidden[l], &teacher.hidden_states[tl], valid)?;
            out.hidden[l] = Some(v);
            terms.push((v, per_layer));
        }
    }
    out.total = Some(tape.weighted_sum(&terms)?);
    Ok(out)
}

/// Builds the full student objective on `tape`.
///
/// `teacher` must come from a gradient-free teacher pass on the same batch.
/// `labels[n]` is the original token at masked position `n`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    student: &dyn Encoder,
    teacher: &ForwardTrace,
    batch: &TokenBatch,
    labels: &[Option<usize>],
    weights: &LossWeights,
    map: &LayerMap,
    mode: &mut Mode,
) -> Result<(Var, LossReport)> {
    weights.validate()?;
    if labels.len() != batch.positions() {
        return Err(Error::shape(format!("{} labels for {} positions", labels.len(), batch.positions())));
    }
    let vars = student.encode(tape, batch, mode)?;
    let logits = student.mlm_logits(tape, vars.last_hidden())?;
    let masked: Vec<bool> = labels.iter().map(Option::is_some).collect();

    let mlm = mlm_loss_var(tape, logits, labels, weights.raw_sums)?;
    let teacher_logits = teacher.logits.as_ref().ok_or_else(|| Error::config("teacher trace has no logits"))?;
    let out = output_loss_var(tape, logits, teacher_logits, &masked, weights.raw_sums, weights.kl_direction)?;
    let align = alignment_var(tape, &vars, teacher, &batch.valid, map, weights)?;

    let mut terms = vec![(mlm, weights.lambda_mlm), (out, weights.lambda_out)];
    if let Some(a) = align.total {
        terms.push((a, weights.lambda_align));
    }
    let embed = if weights.embed_loss {
        let all = vec![true; batch.positions()];
        let e = cosine_alignment_var(tape, vars.embedding, &teacher.embedding_output, &all)?;
        terms.push((e, 1.0));
        Some(e)
    } else {
        None
    };
    let total = tape.weighted_sum(&terms)?;

    let val = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let per_layer_w = if weights.mean_over_layers { 1.0 / vars.hidden.len() as f64 } else { 1.0 };
    let per_layer: Vec<LayerAlignment> = (0..vars.hidden.len())
        .map(|l| LayerAlignment {
            student_layer: l + 1,
            teacher_layer: map.mapping[l],
            att: val(tape, align.att[l]),
            hidden: val(tape, align.hidden[l]),
        })
        .collect();
    let report = LossReport {
        mlm: tape.value(mlm).item(),
        att: per_layer_w * per_layer.iter().map(|p| p.att).sum::<f64>(),
        hidden: per_layer_w * per_layer.iter().map(|p| p.hidden).sum::<f64>(),
        align: val(tape, align.total),
        out: tape.value(out).item(),
        embed: val(tape, embed),
        total: tape.value(total).item(),
        per_layer,
    };
    Ok((total, report))
}

/// Eval-mode teacher pass with every value detached from any tape.
pub fn teacher_trace(teacher: &dyn Encoder, batch: &TokenBatch) -> Result<ForwardTrace> {
    teacher.forward_trace(batch)
}
