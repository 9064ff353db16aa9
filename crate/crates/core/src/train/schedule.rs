use serde::{Deserialize, Serialize};

use super::optim::AdamWConfig;
use crate::error::{Error, Result};

/// Linear warmup then linear decay, plus the batch and optimizer settings
/// of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub optimizer: AdamWConfig,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            peak_lr: 5e-4,
            warmup_steps: 50,
            total_steps: 500,
            batch_size: 16,
            clip_norm: Some(1.0),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl ScheduleConfig {
    /// Large-scale pre-training settings: batch 192, 5000 warmup steps,
    /// peak 5e-4, weight decay 1e-4.
    pub fn long_pretrain(total_steps: usize) -> Self {
        ScheduleConfig {
            peak_lr: 5e-4,
            warmup_steps: 5000,
            total_steps,
            batch_size: 192,
            clip_norm: Some(1.0),
            optimizer: AdamWConfig { weight_decay: 1e-4, ..AdamWConfig::default() },
        }
    }

    /// Named profiles: `desk` (the defaults) and `long-pretrain`.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "long-pretrain" => Ok(Self::long_pretrain(Self::default().total_steps.max(5000) * 2)),
            other => Err(Error::config(format!("unknown schedule profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::config(format!("schedule.peak_lr must be finite and nonnegative, got {}", self.peak_lr)));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::config(format!(
                "schedule.warmup_steps ({}) exceeds schedule.total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("schedule.batch_size must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("schedule.clip_norm must be positive"));
            }
        }
        self.optimizer.validate()
    }
}

/// Learning rate at `step`: `peak * step / warmup` during warmup, then a
/// linear decay reaching 0 at `total_steps`.
pub fn lr_at(step: usize, s: &ScheduleConfig) -> f64 {
    if step < s.warmup_steps {
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    if s.total_steps <= s.warmup_steps {
        return if step > s.total_steps { 0.0 } else { s.peak_lr };
    }
    let left = s.total_steps.saturating_sub(step) as f64;
    s.peak_lr * left / (s.total_steps - s.warmup_steps) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched(w: usize, t: usize) -> ScheduleConfig {
        ScheduleConfig { peak_lr: 1e-3, warmup_steps: w, total_steps: t, ..Default::default() }
    }

    #[test]
    fn examples() {
        let s = sched(10, 100);
        assert_eq!(lr_at(0, &s), 0.0);
        assert_eq!(lr_at(10, &s), 1e-3);
        assert_eq!(lr_at(100, &s), 0.0);
        assert!((lr_at(5, &s) - 5e-4).abs() < 1e-18);
        assert!((lr_at(55, &s) - 5e-4).abs() < 1e-18);
        assert_eq!(lr_at(0, &sched(0, 10)), 1e-3);
        assert!(sched(11, 10).validate().is_err());
        let p = ScheduleConfig::profile("long-pretrain").unwrap();
        assert_eq!((p.batch_size, p.warmup_steps, p.peak_lr, p.optimizer.weight_decay), (192, 5000, 5e-4, 1e-4));
    }

    proptest! {
        #[test]
        fn piecewise_linear_with_peak(w in 0usize..50, extra in 1usize..100) {
            let s = sched(w, w + extra);
            let lrs: Vec<f64> = (0..=s.total_steps).map(|k| lr_at(k, &s)).collect();
            let max = lrs.iter().cloned().fold(0.0, f64::max);
            prop_assert!((max - s.peak_lr).abs() < 1e-15);
            for pair in lrs.windows(2) {
                prop_assert!((pair[1] - pair[0]).abs() <= s.peak_lr / (w.max(1).min(extra) as f64) + 1e-15);
            }
        }
    }
}
