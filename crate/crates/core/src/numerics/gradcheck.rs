//! Central-difference verification of backward-pass gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` against `(f(θ+h) - f(θ-h)) / 2h` per coordinate.
///
/// Relative error uses `max(|a|, |b|, 1e-8)` as denominator. The step is
/// divided by the representable difference `(θ+h) - (θ-h)` rather than `2h`.
pub fn finite_difference_check<F>(mut f: F, analytic: &[f64], params: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if analytic.len() != params.numel() {
        return Err(Error::shape(format!(
            "{} analytic gradient entries for {} parameters",
            analytic.len(),
            params.numel()
        )));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    for i in 0..params.numel() {
        let orig = params.data()[i];
        let (hi, lo) = (orig + h, orig - h);
        probe.data_mut()[i] = hi;
        let fp = f(&probe)?;
        probe.data_mut()[i] = lo;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective while perturbing coordinate {i}")));
        }
        let numeric = (fp - fm) / (hi - lo);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Gradient check of a function built on a fresh tape from one input leaf.
pub fn check_tape_fn<F>(build: F, input: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let loss = build(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
    finite_difference_check(
        |p| {
            let mut t = Tape::new();
            let x = t.leaf(p);
            let l = build(&mut t, x)?;
            Ok(t.value(l).item())
        },
        &analytic,
        input,
        h,
    )
}
