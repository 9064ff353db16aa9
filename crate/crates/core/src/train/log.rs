use std::fmt::Write as _;
use std::path::Path;

use crate::distill::LossReport;
use crate::error::Result;

/// Column order of the pre-training and distillation metrics CSV.
pub const METRICS_HEADER: &str = "step,lr,mlm,att,hidden,align,out,embed,total,wall_ms";

/// Column order of the fine-tuning metrics CSV.
pub const TUNE_HEADER: &str = "step,lr,loss,accuracy,wall_ms";

/// One logged optimizer step. Loss terms are measured before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
    /// 0 unless timing was enabled.
    pub wall_ms: f64,
}

/// Per-step metrics of a pre-training or distillation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<MetricsRow>,
    /// Step at which the loss became non-finite; training stopped there
    /// with the parameters of the previous step.
    pub diverged_at: Option<usize>,
    /// Steps skipped by the optimizer because of non-finite gradients.
    pub skipped_steps: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            let l = &r.report;
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:.3}",
                r.step, r.lr, l.mlm, l.att, l.hidden, l.align, l.out, l.embed, l.total, r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean of `f` over rows with `lo <= step < hi`.
    pub fn window_mean(&self, lo: usize, hi: usize, f: impl Fn(&LossReport) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.step >= lo && r.step < hi).map(|r| f(&r.report)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// One fine-tuning step.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Training-batch accuracy of the step's (train-mode) predictions.
    pub accuracy: f64,
    pub wall_ms: f64,
}

/// Aggregate over one pass through the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneLog {
    pub rows: Vec<TuneRow>,
    pub epochs: Vec<EpochSummary>,
    pub diverged_at: Option<usize>,
    pub skipped_steps: usize,
}

impl TuneLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TUNE_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:.3}", r.step, r.lr, r.loss, r.accuracy, r.wall_ms);
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:e},{:e}", e.epoch, e.mean_loss, e.accuracy);
        }
        out
    }

    /// Mean per-step wall time in milliseconds (0 without timing).
    pub fn mean_wall_ms(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.wall_ms).sum::<f64>() / self.rows.len() as f64
    }
}
