//! Reverse-mode differentiation over a linear record of coarse operations.
//!
//! Every op pushes one node holding its output value. `backward` walks the
//! nodes in exact reverse order; gradients reaching the same node from several
//! consumers are summed, which is what makes a parameter reused across
//! recursive iterations receive the sum of its per-iteration contributions.

use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, dot};
use super::ops::KL_EPS;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Direction of a KL term. `StudentFirst` computes `KL(student || teacher)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    #[default]
    StudentFirst,
    TeacherFirst,
}

/// Geometry of a batched multi-head attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnDims {
    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNT { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, din: usize, dout: usize },
    WeightedSum { terms: Vec<(Var, f64)> },
    Gelu { a: Var },
    Relu { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<f64>, rstd: Vec<f64> },
    Dropout { a: Var, mask: Vec<f64> },
    Gather { table: Var, ids: Vec<usize>, width: usize },
    AttnProbs { q: Var, k: Var, dims: AttnDims },
    AttnContext { probs: Var, v: Var, dims: AttnDims },
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, scale: f64, probs: Vec<f64> },
    OutputKl { logits: Var, teacher_logp: Vec<f64>, row_weight: Vec<f64>, dir: KlDirection, logp: Vec<f64>, row_kl: Vec<f64> },
    AttnKl { probs: Var, teacher: Vec<f64>, row_weight: Vec<f64>, dir: KlDirection },
    Cosine { a: Var, b: Var, row_weight: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    #[cfg(debug_assertions)]
    finite: bool,
}

/// Record of executed differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        let finite = {
            let inputs_finite = self.inputs(&op).iter().all(|i| self.nodes[i.0].finite);
            let finite = value.is_finite();
            debug_assert!(
                !inputs_finite || finite || matches!(op, Op::Leaf),
                "non-finite output from finite inputs in {op:?}"
            );
            finite
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            #[cfg(debug_assertions)]
            finite,
        });
        Var(self.nodes.len() - 1)
    }

    #[cfg(debug_assertions)]
    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::MatMulNT { a, b, .. } => vec![*a, *b],
            Op::Linear { x, w, b, .. } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            Op::WeightedSum { terms } => terms.iter().map(|t| t.0).collect(),
            Op::Gelu { a } | Op::Relu { a } | Op::Softmax { a, .. } | Op::Dropout { a, .. } => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Gather { table, .. } => vec![*table],
            Op::AttnProbs { q, k, .. } => vec![*q, *k],
            Op::AttnContext { probs, v, .. } => vec![*probs, *v],
            Op::CrossEntropy { logits, .. } | Op::OutputKl { logits, .. } => vec![*logits],
            Op::AttnKl { probs, .. } => vec![*probs],
            Op::Cosine { a, b, .. } => vec![*a, *b],
        }
    }

    /// Leaf that receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        let mut value = t.clone();
        value.zero_grad();
        self.push(value, Op::Leaf, needs)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Named parameter leaf. Binding the same name twice returns the same
    /// node, so every use contributes to one gradient.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            debug_assert_eq!(self.nodes[v.0].value.shape(), t.shape());
            return v;
        }
        let v = self.leaf(t);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[m,k] @ b[k,n]`, both viewed as matrices over their last axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let k = av.last_dim();
        let m = av.rows();
        if bv.ndim() != 2 || bv.shape()[0] != k {
            return Err(Error::shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let n = bv.shape()[1];
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, ng))
    }

    /// `a[m,k] @ b[n,k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let k = av.last_dim();
        let m = av.rows();
        if bv.ndim() != 2 || bv.shape()[1] != k {
            return Err(Error::shape(format!("matmul_nt {:?} x {:?}^T", av.shape(), bv.shape())));
        }
        let n = bv.shape()[0];
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(&mut out, av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMulNT { a, b, m, k, n }, ng))
    }

    /// `x[rows,din] @ w[din,dout] + b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let din = xv.last_dim();
        let rows = xv.rows();
        if wv.ndim() != 2 || wv.shape()[0] != din {
            return Err(Error::shape(format!("linear {:?} x {:?}", xv.shape(), wv.shape())));
        }
        let dout = wv.shape()[1];
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.numel() != dout {
                return Err(Error::shape(format!("linear bias {:?} for width {dout}", bv.shape())));
            }
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bv.data());
            }
        }
        kernels::matmul_acc(&mut out, xv.data(), wv.data(), rows, din, dout);
        let value = Tensor::new(vec![rows, dout], out)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let ng = self.any_grad(&ins);
        Ok(self.push(value, Op::Linear { x, w, b, rows, din, dout }, ng))
    }

    // ---- elementwise ----------------------------------------------------

    /// `sum_i c_i * x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms.first().ok_or_else(|| Error::shape("weighted_sum of nothing"))?;
        let shape = self.value(first.0).shape().to_vec();
        let mut out = vec![0.0; self.value(first.0).numel()];
        for &(v, c) in terms {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!("weighted_sum {:?} vs {shape:?}", t.shape())));
            }
            for (o, x) in out.iter_mut().zip(t.data()) {
                *o += c * x;
            }
        }
        let value = Tensor::new(shape, out)?;
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let ng = self.any_grad(&vars);
        Ok(self.push(value, Op::WeightedSum { terms: terms.to_vec() }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.weighted_sum(&[(a, 1.0), (b, 1.0)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.weighted_sum(&[(a, c)])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| kernels::gelu(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.needs_grad(a);
        self.push(value, Op::Gelu { a }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.needs_grad(a);
        self.push(value, Op::Relu { a }, ng)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.ndim() {
            return Err(Error::shape(format!("softmax axis {axis} for {:?}", t.shape())));
        }
        let data = kernels::softmax_axis(t.data(), t.shape(), axis);
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::Softmax { a, axis }, ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.last_dim();
        if gv.numel() != d || bv.numel() != d {
            return Err(Error::shape(format!("layer_norm params {:?} for width {d}", gv.shape())));
        }
        let (out, mean, rstd) = kernels::layer_norm_rows(xv.data(), gv.data(), bv.data(), eps);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.any_grad(&[x, gain, bias]);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, mean, rstd }, ng))
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(a);
        let mask: Vec<f64> =
            (0..t.numel()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.needs_grad(a);
        self.push(value, Op::Dropout { a, mask }, ng)
    }

    /// Dropout with a caller-supplied multiplicative mask.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.numel() {
            return Err(Error::shape("dropout mask length"));
        }
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::Dropout { a, mask }, ng))
    }

    /// Rows of a `[n, width]` table selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let width = t.last_dim();
        let n = t.rows();
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= n {
                return Err(Error::input(format!("row {id} out of range for table of {n} rows")));
            }
            out.extend_from_slice(&t.data()[id * width..(id + 1) * width]);
        }
        let value = Tensor::new(vec![ids.len(), width], out)?;
        let ng = self.needs_grad(table);
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec(), width }, ng))
    }

    // ---- attention ------------------------------------------------------

    /// Scaled dot-product attention probabilities `[batch, heads, seq, seq]`
    /// from projected `q`, `k` of shape `[batch*seq, hidden]`. Keys with
    /// `key_valid == false` get exactly zero probability.
    pub fn attention_probs(&mut self, q: Var, k: Var, dims: AttnDims, key_valid: &[bool]) -> Result<Var> {
        let AttnDims { batch, seq, heads, head_dim } = dims;
        let d = dims.hidden();
        let (qv, kv) = (self.value(q), self.value(k));
        if qv.shape() != [batch * seq, d] || kv.shape() != [batch * seq, d] {
            return Err(Error::shape(format!("attention q {:?} k {:?}", qv.shape(), kv.shape())));
        }
        if key_valid.len() != batch * seq {
            return Err(Error::shape(format!(
                "attention mask has {} entries, expected {}",
                key_valid.len(),
                batch * seq
            )));
        }
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd) = (qv.data(), kv.data());
        let mut out = vec![0.0; batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * head_dim;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + off..][..head_dim];
                    let row = &mut out[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq {
                        if key_valid[b * seq + j] {
                            let s = dot(qi, &kd[(b * seq + j) * d + off..][..head_dim]) * scale;
                            row[j] = s;
                            max = max.max(s);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        row.iter_mut().for_each(|r| *r = 0.0);
                        continue;
                    }
                    let mut sum = 0.0;
                    for j in 0..seq {
                        if key_valid[b * seq + j] {
                            row[j] = (row[j] - max).exp();
                            sum += row[j];
                        } else {
                            row[j] = 0.0;
                        }
                    }
                    row.iter_mut().for_each(|r| *r /= sum);
                }
            }
        }
        let value = Tensor::new(vec![batch, heads, seq, seq], out)?;
        let ng = self.any_grad(&[q, k]);
        Ok(self.push(value, Op::AttnProbs { q, k, dims }, ng))
    }

    /// Mixes values: `ctx[b,i,h,:] = sum_j probs[b,h,i,j] * v[b,j,h,:]`.
    pub fn attention_context(&mut self, probs: Var, v: Var, dims: AttnDims) -> Result<Var> {
        let AttnDims { batch, seq, heads, head_dim } = dims;
        let d = dims.hidden();
        let (pv, vv) = (self.value(probs), self.value(v));
        if pv.shape() != [batch, heads, seq, seq] || vv.shape() != [batch * seq, d] {
            return Err(Error::shape(format!("attention context {:?} {:?}", pv.shape(), vv.shape())));
        }
        let (pd, vd) = (pv.data(), vv.data());
        let mut out = vec![0.0; batch * seq * d];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * head_dim;
                for i in 0..seq {
                    let prow = &pd[((b * heads + h) * seq + i) * seq..][..seq];
                    let o = &mut out[(b * seq + i) * d + off..][..head_dim];
                    for (j, &p) in prow.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let vj = &vd[(b * seq + j) * d + off..][..head_dim];
                        for (oe, ve) in o.iter_mut().zip(vj) {
                            *oe += p * ve;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch * seq, d], out)?;
        let ng = self.any_grad(&[probs, v]);
        Ok(self.push(value, Op::AttnContext { probs, v, dims }, ng))
    }

    // ---- losses ---------------------------------------------------------

    /// `scale * sum_n CE(logits[n], labels[n])`; unlabeled rows contribute 0.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[Option<usize>], scale: f64) -> Result<Var> {
        let t = self.value(logits);
        let vocab = t.last_dim();
        if t.rows() != labels.len() {
            return Err(Error::shape(format!("{} label rows for {} logit rows", labels.len(), t.rows())));
        }
        let mut probs = vec![0.0; t.numel()];
        let mut loss = 0.0;
        for (n, label) in labels.iter().enumerate() {
            let Some(y) = *label else { continue };
            if y >= vocab {
                return Err(Error::input(format!("label {y} out of range for {vocab} classes")));
            }
            let row = &t.data()[n * vocab..(n + 1) * vocab];
            let p = &mut probs[n * vocab..(n + 1) * vocab];
            kernels::log_softmax(row, p);
            loss -= p[y];
            p.iter_mut().for_each(|v| *v = v.exp());
        }
        let ng = self.needs_grad(logits);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), scale, probs };
        Ok(self.push(Tensor::scalar(scale * loss), op, ng))
    }

    /// `sum_n row_weight[n] * KL` between the softmaxes of `logits` and a
    /// constant teacher logit matrix of the same shape.
    pub fn output_kl(&mut self, logits: Var, teacher_logits: &Tensor, row_weight: &[f64], dir: KlDirection) -> Result<Var> {
        let t = self.value(logits);
        if t.shape() != teacher_logits.shape() {
            return Err(Error::shape(format!(
                "output_kl student {:?} vs teacher {:?}",
                t.shape(),
                teacher_logits.shape()
            )));
        }
        let vocab = t.last_dim();
        if row_weight.len() != t.rows() {
            return Err(Error::shape("output_kl row weights"));
        }
        let mut logp = vec![0.0; t.numel()];
        let mut teacher_logp = vec![0.0; t.numel()];
        let mut row_kl = vec![0.0; t.rows()];
        let floor = KL_EPS.ln();
        let mut loss = 0.0;
        for n in 0..t.rows() {
            if row_weight[n] == 0.0 {
                continue;
            }
            let r = n * vocab..(n + 1) * vocab;
            kernels::log_softmax(&t.data()[r.clone()], &mut logp[r.clone()]);
            kernels::log_softmax(&teacher_logits.data()[r.clone()], &mut teacher_logp[r.clone()]);
            let (ls, lt) = (&logp[r.clone()], &teacher_logp[r]);
            let kl: f64 = match dir {
                KlDirection::StudentFirst => ls.iter().zip(lt).map(|(&s, &q)| s.exp() * (s - q.max(floor))).sum(),
                KlDirection::TeacherFirst => lt.iter().zip(ls).map(|(&q, &s)| q.exp() * (q - s)).sum(),
            };
            row_kl[n] = kl;
            loss += row_weight[n] * kl;
        }
        let ng = self.needs_grad(logits);
        let op = Op::OutputKl { logits, teacher_logp, row_weight: row_weight.to_vec(), dir, logp, row_kl };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// `sum_rows row_weight[r] * KL` over the last axis of a probability
    /// tensor against a constant teacher probability tensor.
    pub fn attention_kl(&mut self, probs: Var, teacher: &Tensor, row_weight: &[f64], dir: KlDirection) -> Result<Var> {
        let t = self.value(probs);
        if t.shape() != teacher.shape() {
            return Err(Error::shape(format!("attention_kl {:?} vs {:?}", t.shape(), teacher.shape())));
        }
        let len = t.last_dim();
        if row_weight.len() != t.rows() {
            return Err(Error::shape("attention_kl row weights"));
        }
        let mut loss = 0.0;
        for (r, &w) in row_weight.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let p = &t.data()[r * len..(r + 1) * len];
            let q = &teacher.data()[r * len..(r + 1) * len];
            let kl = match dir {
                KlDirection::StudentFirst => crate::numerics::ops::kl_slice(p, q),
                KlDirection::TeacherFirst => crate::numerics::ops::kl_slice(q, p),
            };
            loss += w * kl;
        }
        let ng = self.needs_grad(probs);
        let op = Op::AttnKl { probs, teacher: teacher.data().to_vec(), row_weight: row_weight.to_vec(), dir };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// `sum_n row_weight[n] * (1 - cos(a[n], b[n]))` over rows of the last axis.
    pub fn cosine_loss(&mut self, a: Var, b: Var, row_weight: &[f64]) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!("cosine_loss {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let d = av.last_dim();
        if row_weight.len() != av.rows() {
            return Err(Error::shape("cosine_loss row weights"));
        }
        let mut loss = 0.0;
        for (n, &w) in row_weight.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let r = n * d..(n + 1) * d;
            let (c, _, _) = crate::numerics::ops::cosine_slice(&av.data()[r.clone()], &bv.data()[r]);
            loss += w * (1.0 - c);
        }
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(loss), Op::Cosine { a, b, row_weight: row_weight.to_vec() }, ng))
    }

    // ---- backward -------------------------------------------------------

    /// Differentiates the scalar `loss` with respect to every node that
    /// needs a gradient. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!("backward from non-scalar {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last `backward` with respect to `v`, if it received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref().filter(|_| self.nodes[v.0].needs_grad)
    }

    /// Gradient of a named parameter after `backward`.
    pub fn param_grad(&self, name: &str) -> Option<&[f64]> {
        self.grad(self.param_var(name)?)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        // Returns a zero-initialized accumulator slot for `v`.
        fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let len = |v: Var| self.nodes[v.0].value.numel();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if wants(a) {
                    kernels::matmul_nt_acc(slot(grads, a, m * k), g, val(b), m, n, k);
                }
                if wants(b) {
                    kernels::matmul_tn_acc(slot(grads, b, k * n), val(a), g, m, k, n);
                }
            }
            &Op::MatMulNT { a, b, m, k, n } => {
                if wants(a) {
                    kernels::matmul_acc(slot(grads, a, m * k), g, val(b), m, n, k);
                }
                if wants(b) {
                    kernels::matmul_tn_acc(slot(grads, b, n * k), g, val(a), m, n, k);
                }
            }
            &Op::Linear { x, w, b, rows, din, dout } => {
                if wants(x) {
                    kernels::matmul_nt_acc(slot(grads, x, rows * din), g, val(w), rows, dout, din);
                }
                if wants(w) {
                    kernels::matmul_tn_acc(slot(grads, w, din * dout), val(x), g, rows, din, dout);
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    let gb = slot(grads, b, dout);
                    for r in 0..rows {
                        for (o, v) in gb.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, c) in terms {
                    if wants(v) {
                        let s = slot(grads, v, g.len());
                        for (o, gv) in s.iter_mut().zip(g) {
                            *o += c * gv;
                        }
                    }
                }
            }
            &Op::Gelu { a } => {
                let x = val(a);
                let s = slot(grads, a, g.len());
                for i in 0..g.len() {
                    s[i] += g[i] * kernels::gelu_grad(x[i]);
                }
            }
            &Op::Relu { a } => {
                let x = val(a);
                let s = slot(grads, a, g.len());
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        s[i] += g[i];
                    }
                }
            }
            &Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = kernels::axis_split(node.value.shape(), axis);
                let s = slot(grads, a, g.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dotp: f64 = (0..n).map(|j| y[base + j * inner] * g[base + j * inner]).sum();
                        for j in 0..n {
                            let at = base + j * inner;
                            s[at] += y[at] * (g[at] - dotp);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let xv = val(x);
                let gv = val(gain);
                let d = gv.len();
                let rows = xv.len() / d;
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; xv.len()];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let xs = &xv[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (xs[j] - mean[r]) * rstd[r];
                        dxhat[j] = gs[j] * gv[j];
                        dgain[j] += gs[j] * xhat[j];
                        dbias[j] += gs[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dot(&dxhat, &xhat) / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                for (v, part) in [(x, dx), (gain, dgain), (bias, dbias)] {
                    if wants(v) {
                        let s = slot(grads, v, part.len());
                        s.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
                    }
                }
            }
            Op::Dropout { a, mask } => {
                let s = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    s[i] += g[i] * mask[i];
                }
            }
            Op::Gather { table, ids, width } => {
                let s = slot(grads, *table, len(*table));
                for (n, &id) in ids.iter().enumerate() {
                    for (o, v) in s[id * width..(id + 1) * width].iter_mut().zip(&g[n * width..(n + 1) * width]) {
                        *o += v;
                    }
                }
            }
            &Op::AttnProbs { q, k, dims } => {
                let AttnDims { batch, seq, heads, head_dim } = dims;
                let d = dims.hidden();
                let scale = 1.0 / (head_dim as f64).sqrt();
                let p = node.value.data();
                let (qd, kd) = (val(q), val(k));
                let mut dq = vec![0.0; qd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut ds = vec![0.0; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * head_dim;
                        for i in 0..seq {
                            let base = ((b * heads + h) * seq + i) * seq;
                            let (prow, grow) = (&p[base..base + seq], &g[base..base + seq]);
                            let dotp = dot(prow, grow);
                            for j in 0..seq {
                                ds[j] = prow[j] * (grow[j] - dotp) * scale;
                            }
                            let qi = (b * seq + i) * d + off;
                            for j in 0..seq {
                                if ds[j] == 0.0 {
                                    continue;
                                }
                                let kj = (b * seq + j) * d + off;
                                for e in 0..head_dim {
                                    dq[qi + e] += ds[j] * kd[kj + e];
                                    dk[kj + e] += ds[j] * qd[qi + e];
                                }
                            }
                        }
                    }
                }
                for (v, part) in [(q, dq), (k, dk)] {
                    if wants(v) {
                        let s = slot(grads, v, part.len());
                        s.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
                    }
                }
            }
            &Op::AttnContext { probs, v, dims } => {
                let AttnDims { batch, seq, heads, head_dim } = dims;
                let d = dims.hidden();
                let (pd, vd) = (val(probs), val(v));
                let mut dp = vec![0.0; pd.len()];
                let mut dv = vec![0.0; vd.len()];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * head_dim;
                        for i in 0..seq {
                            let gi = &g[(b * seq + i) * d + off..][..head_dim];
                            let prow = ((b * heads + h) * seq + i) * seq;
                            for j in 0..seq {
                                let vj = (b * seq + j) * d + off;
                                dp[prow + j] = dot(gi, &vd[vj..vj + head_dim]);
                                let pij = pd[prow + j];
                                if pij != 0.0 {
                                    for e in 0..head_dim {
                                        dv[vj + e] += pij * gi[e];
                                    }
                                }
                            }
                        }
                    }
                }
                for (var, part) in [(probs, dp), (v, dv)] {
                    if wants(var) {
                        let s = slot(grads, var, part.len());
                        s.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, scale, probs } => {
                let vocab = self.nodes[logits.0].value.last_dim();
                let c = g[0] * scale;
                let s = slot(grads, *logits, probs.len());
                for (n, label) in labels.iter().enumerate() {
                    let Some(y) = *label else { continue };
                    let r = n * vocab;
                    for j in 0..vocab {
                        s[r + j] += c * probs[r + j];
                    }
                    s[r + y] -= c;
                }
            }
            Op::OutputKl { logits, teacher_logp, row_weight, dir, logp, row_kl } => {
                let vocab = self.nodes[logits.0].value.last_dim();
                let floor = KL_EPS.ln();
                let s = slot(grads, *logits, logp.len());
                for (n, &w) in row_weight.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let c = g[0] * w;
                    for j in n * vocab..(n + 1) * vocab {
                        let p = logp[j].exp();
                        s[j] += c * match dir {
                            KlDirection::StudentFirst => p * (logp[j] - teacher_logp[j].max(floor) - row_kl[n]),
                            KlDirection::TeacherFirst => p - teacher_logp[j].exp(),
                        };
                    }
                }
            }
            Op::AttnKl { probs, teacher, row_weight, dir } => {
                let p = self.nodes[probs.0].value.data();
                let n = self.nodes[probs.0].value.last_dim();
                let s = slot(grads, *probs, p.len());
                for (r, &w) in row_weight.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let c = g[0] * w;
                    for j in r * n..(r + 1) * n {
                        match dir {
                            KlDirection::StudentFirst if p[j] > 0.0 => {
                                s[j] += c * (p[j].ln() - teacher[j].max(KL_EPS).ln() + 1.0);
                            }
                            KlDirection::TeacherFirst if teacher[j] > 0.0 && p[j] > KL_EPS => {
                                s[j] -= c * teacher[j] / p[j];
                            }
                            _ => {}
                        }
                    }
                }
            }
            &Op::Cosine { a, b, ref row_weight } => {
                let (ad, bd) = (val(a), val(b));
                let d = self.nodes[a.0].value.last_dim();
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for (n, &w) in row_weight.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let r = n * d..(n + 1) * d;
                    let (u, v) = (&ad[r.clone()], &bd[r.clone()]);
                    let nu = dot(u, u).sqrt();
                    let nv = dot(v, v).sqrt();
                    if nu == 0.0 || nv == 0.0 {
                        continue;
                    }
                    let cos = dot(u, v) / (nu * nv);
                    let c = -g[0] * w;
                    for j in 0..d {
                        da[r.start + j] += c * (v[j] / (nu * nv) - cos * u[j] / (nu * nu));
                        db[r.start + j] += c * (u[j] / (nu * nv) - cos * v[j] / (nv * nv));
                    }
                }
                for (var, part) in [(a, da), (b, db)] {
                    if wants(var) {
                        let s = slot(grads, var, part.len());
                        s.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
#[path = "tape_tests.rs"]
mod tests;
