//! Checkpoint and file helpers shared by the commands.

use std::path::{Path, PathBuf};

use recdistill_core::data::{TokenizerMode, Vocabulary};
use recdistill_core::model::Checkpoint;
use recdistill_core::Error as CoreError;

use crate::error::{CliError, Result};

/// Header key holding the vocabulary tokens (JSON array, id order).
pub const VOCAB_TOKENS_KEY: &str = "vocab.tokens";
/// Header key holding the tokenizer mode.
pub const VOCAB_MODE_KEY: &str = "vocab.mode";
/// Header key holding the tuning regime of a task checkpoint.
pub const TUNE_REGIME_KEY: &str = "task.regime";

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const TASK_CKPT: &str = "task.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_CLASSES_CSV: &str = "report_per_class.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const RUN_CONFIG_JSON: &str = "run_config.json";
pub const VOCAB_TXT: &str = "vocab.txt";

pub fn attach_vocab(ckpt: &mut Checkpoint, vocab: &Vocabulary) {
    let tokens = serde_json::to_string(vocab.tokens()).expect("strings serialize");
    let mode = serde_json::to_value(vocab.mode()).expect("mode serializes");
    ckpt.header.insert(VOCAB_TOKENS_KEY.into(), tokens);
    ckpt.header.insert(VOCAB_MODE_KEY.into(), mode.as_str().unwrap_or("word").to_string());
}

pub fn vocab_of(ckpt: &Checkpoint) -> Result<Vocabulary> {
    let tokens = ckpt
        .header
        .get(VOCAB_TOKENS_KEY)
        .ok_or_else(|| CoreError::Corrupt("checkpoint carries no vocabulary".into()))?;
    let tokens: Vec<String> =
        serde_json::from_str(tokens).map_err(|e| CoreError::Corrupt(format!("checkpoint vocabulary: {e}")))?;
    let mode: TokenizerMode = ckpt
        .header
        .get(VOCAB_MODE_KEY)
        .map_or(Ok(TokenizerMode::Word), |m| m.parse())
        .map_err(|e| CoreError::Corrupt(format!("checkpoint vocabulary mode: {e}")))?;
    Ok(Vocabulary::from_tokens(tokens, mode).map_err(|e| CoreError::Corrupt(e.to_string()))?)
}

/// Loads a checkpoint named by config field or option `field`. A missing
/// file is a configuration error; an undecodable one is `Corrupt`.
pub fn load_checkpoint(field: &str, path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::field(field, format!("file not found: {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("create {}", dir.display()), e))
}

pub fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(format!("write {}", path.display()), e))?;
    Ok(path)
}

pub fn save_checkpoint(dir: &Path, name: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
    write_file(dir, name, ckpt.to_bytes())
}
