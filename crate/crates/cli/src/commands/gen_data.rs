use std::path::{Path, PathBuf};

use recdistill_core::data::{
    format_classification, format_tagging, synthetic_classification, synthetic_corpus, synthetic_tagging,
};
use serde_json::json;

use super::artifacts::{ensure_dir, write_file};
use super::Outcome;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataOptions {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub docs: usize,
    pub train_examples: usize,
    pub eval_examples: usize,
}

/// Writes the synthetic corpus and task files plus ready-to-run configs
/// chaining pretrain-teacher, distill, finetune and adapter-tune.
pub fn cmd_gen_data(opts: &GenDataOptions) -> Result<Outcome> {
    let dir: &Path = &opts.output_dir;
    ensure_dir(dir)?;
    let s = opts.seed;
    let mut files = vec![
        write_file(dir, "corpus.txt", synthetic_corpus(s, opts.docs, 2, 6).join("\n") + "\n")?,
        write_file(dir, "cls_train.tsv", format_classification(&synthetic_classification(s, opts.train_examples)))?,
        write_file(dir, "cls_eval.tsv", format_classification(&synthetic_classification(s + 1, opts.eval_examples)))?,
        write_file(dir, "tag_train.conll", format_tagging(&synthetic_tagging(s, opts.train_examples)))?,
        write_file(dir, "tag_eval.conll", format_tagging(&synthetic_tagging(s + 1, opts.eval_examples)))?,
    ];
    let schedule = |steps: usize, lr: f64| json!({ "total_steps": steps, "warmup_steps": steps / 10, "peak_lr": lr, "batch_size": 16 });
    let configs = [
        ("teacher.json", json!({
            "seed": s,
            "output_dir": "runs/teacher",
            "model": { "hidden_dim": 32, "num_heads": 2, "ffn_dim": 64, "num_layers": 4 },
            "data": { "corpus": "corpus.txt" },
            "schedule": schedule(300, 2e-3),
        })),
        ("distill.json", json!({
            "seed": s,
            "output_dir": "runs/student",
            "model": { "hidden_dim": 32, "num_heads": 2, "ffn_dim": 64, "num_layers": 4, "embedding_rank": 16, "adapter_bottleneck": 4 },
            "data": { "corpus": "corpus.txt" },
            "schedule": schedule(500, 2e-3),
            "regime": { "teacher_checkpoint": "runs/teacher/teacher.ckpt" },
        })),
        ("finetune.json", json!({
            "seed": s,
            "output_dir": "runs/finetune",
            "data": { "task": "sequence_classification", "train": "cls_train.tsv", "eval": "cls_eval.tsv" },
            "schedule": schedule(200, 2e-3),
            "regime": { "checkpoint": "runs/student/student.ckpt" },
        })),
        ("adapter_tune.json", json!({
            "seed": s,
            "output_dir": "runs/adapter_tune",
            "data": { "task": "token_classification", "train": "tag_train.conll", "eval": "tag_eval.conll" },
            "schedule": schedule(200, 5e-3),
            "regime": { "checkpoint": "runs/student/student.ckpt" },
        })),
    ];
    for (name, value) in configs {
        files.push(write_file(dir, name, serde_json::to_string_pretty(&value).expect("json serializes") + "\n")?);
    }
    let summary = format!("wrote {} files to {}", files.len(), dir.display());
    Ok(Outcome { files, summary })
}
