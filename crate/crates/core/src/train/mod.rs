//! AdamW, the learning-rate schedule and the training regimes: MLM
//! pre-training, distillation, full fine-tuning and adapter-tuning.

mod log;
mod optim;
mod regimes;
mod schedule;

pub use log::{EpochSummary, MetricsRow, TrainLog, TuneLog, TuneRow, METRICS_HEADER, TUNE_HEADER};
pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, OptimizerState};
pub use regimes::{
    adapter_tune, check_distill_compat, distill_student, finetune, pretrain_teacher, EpochSampler, FreezeSpec,
    RunOptions, TuneRegime, ADAPTER_INJECT_STREAM_INDEX, TASK_HEAD_STREAM_INDEX,
};
pub use schedule::{lr_at, ScheduleConfig};
