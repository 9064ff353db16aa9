//! One function per subcommand. Each returns the files it wrote and a
//! human-readable summary.

mod artifacts;
mod gen_data;
mod inspect;
mod train;
mod tune;

use std::path::{Path, PathBuf};

pub use artifacts::*;
pub use gen_data::{cmd_gen_data, GenDataOptions};
pub use inspect::{cmd_inspect, module_breakdown, InspectOptions, ModuleCount};
pub use train::{cmd_distill, cmd_pretrain_teacher, DistillOptions};
pub use tune::{cmd_adapter_tune, cmd_eval, cmd_finetune, AdapterTuneOptions, EvalFormat, EvalOptions};

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Command-line values that take precedence over the config file (and
/// over `RD_SEED` for the seed).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub timing: bool,
}

/// Loads, overrides and validates a run config.
pub fn prepare(config: &Path, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply_env()?;
    if let Some(d) = &ov.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(s) = ov.steps {
        cfg.schedule.total_steps = Some(s);
        if cfg.schedule.warmup_steps.is_some_and(|w| w > s) {
            cfg.schedule.warmup_steps = Some(s / 10);
        }
    }
    if let Some(lr) = ov.lr {
        cfg.schedule.peak_lr = Some(lr);
    }
    cfg.timing |= ov.timing;
    cfg.validate_common()?;
    Ok(cfg)
}
