//! Command-line driver: run configs, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use recdistill_core::distill::AlignmentMode;

use commands::*;
pub use error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "recdistill", version, about = "Distil transformer encoders into recursive weight-shared students")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train a teacher encoder with masked language modeling.
    PretrainTeacher(RunArgs),
    /// Distil a recursive student from a teacher checkpoint.
    Distill(DistillArgs),
    /// Fine-tune every parameter of a backbone plus a task head.
    Finetune(TuneArgs),
    /// Tune adapters and a task head with the backbone frozen.
    AdapterTune(AdapterTuneArgs),
    /// Evaluate a task checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print parameter budgets or dump attention maps.
    Inspect(InspectArgs),
    /// Write the synthetic corpus, task files and example configs.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the config seed and RD_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides schedule.total_steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides schedule.peak_lr.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Record wall-clock time per step.
    #[arg(long)]
    pub timing: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            steps: self.steps,
            lr: self.lr,
            timing: self.timing,
        }
    }
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Alignment terms: full, hidden, attention or none.
    #[arg(long)]
    pub alignment: Option<AlignmentMode>,
    /// Add the embedding-output alignment term.
    #[arg(long)]
    pub embed_loss: bool,
    /// Teacher checkpoint; overrides regime.teacher_checkpoint.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Backbone checkpoint; overrides regime.checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdapterTuneArgs {
    #[command(flatten)]
    pub tune: TuneArgs,
    /// Add freshly initialized adapters if the model has none.
    #[arg(long)]
    pub inject_adapters: bool,
    /// Width of injected adapters; overrides regime.inject_bottleneck.
    #[arg(long)]
    pub adapter_bottleneck: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Task checkpoint written by finetune or adapter-tune.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset in the task's file format.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum, default_value_t = EvalFormat::Pretty)]
    pub format: EvalFormat,
    /// Also write report files here.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Full model config (JSON, including vocab_size) instead of a checkpoint.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Model kind for --model-config: teacher or student.
    #[arg(long, default_value = "student")]
    pub kind: String,
    /// Print parameter counts per module.
    #[arg(long)]
    pub params: bool,
    /// Dump per-iteration, per-head attention maps for this sentence.
    #[arg(long)]
    pub attn: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 400)]
    pub train_examples: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_examples: usize,
}

/// Runs a parsed command.
pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::PretrainTeacher(a) => cmd_pretrain_teacher(&a.config, &a.overrides()),
        Command::Distill(a) => cmd_distill(
            &a.run.config,
            &a.run.overrides(),
            &DistillOptions { alignment: a.alignment, embed_loss: a.embed_loss, teacher: a.teacher.clone() },
        ),
        Command::Finetune(a) => cmd_finetune(&a.run.config, &a.run.overrides(), a.checkpoint.as_ref()),
        Command::AdapterTune(a) => cmd_adapter_tune(
            &a.tune.run.config,
            &a.tune.run.overrides(),
            &AdapterTuneOptions {
                checkpoint: a.tune.checkpoint.clone(),
                inject_adapters: a.inject_adapters,
                bottleneck: a.adapter_bottleneck,
            },
        ),
        Command::Eval(a) => cmd_eval(&EvalOptions {
            checkpoint: a.checkpoint.clone(),
            data: a.data.clone(),
            batch_size: a.batch_size,
            max_len: a.max_len,
            format: a.format,
            output_dir: a.output_dir.clone(),
            timing: a.timing,
        }),
        Command::Inspect(a) => cmd_inspect(&InspectOptions {
            checkpoint: a.checkpoint.clone(),
            model_config: a.model_config.clone(),
            kind: a.kind.clone(),
            params: a.params,
            attn: a.attn.clone(),
            output_dir: a.output_dir.clone(),
        }),
        Command::GenData(a) => cmd_gen_data(&GenDataOptions {
            output_dir: a.output_dir.clone(),
            seed: a.seed,
            docs: a.docs,
            train_examples: a.train_examples,
            eval_examples: a.eval_examples,
        }),
    }
}

/// Parses `args`, runs the command, prints its summary or error, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::CONFIG,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.summary.trim_end());
            exit::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
