use std::collections::BTreeMap;
use std::path::Path;

use super::masking::MaskedSequence;
use super::vocab::PAD_ID;
use crate::error::{Error, Result};
use crate::model::{FrameDecoder, FrameEncoder, TokenBatch};

/// Model inputs for one masked-language-model step.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillBatch {
    /// Corrupted ids and attention validity (`false` at padding).
    pub tokens: TokenBatch,
    /// Original id at each selected position.
    pub labels: Vec<Option<usize>>,
}

impl DistillBatch {
    /// Stacks equal-or-shorter sequences, padding with `[PAD]`.
    pub fn from_masked(rows: &[MaskedSequence]) -> Result<Self> {
        let seq = rows.iter().map(|r| r.input.len()).max().unwrap_or(0);
        if rows.is_empty() || seq == 0 {
            return Err(Error::input("empty batch"));
        }
        let inputs: Vec<Vec<u32>> = rows.iter().map(|r| r.input.clone()).collect();
        let tokens = TokenBatch::from_rows(&inputs, PAD_ID)?;
        let mut labels = Vec::with_capacity(rows.len() * seq);
        for r in rows {
            labels.extend(r.labels.iter().map(|l| l.map(|v| v as usize)));
            labels.extend(std::iter::repeat_n(None, seq - r.labels.len()));
        }
        Ok(DistillBatch { tokens, labels })
    }

    /// Mask indicator `W`.
    pub fn masked(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Labels with `-1` at unselected positions.
    pub fn labels_with_sentinel(&self) -> Vec<i64> {
        self.labels.iter().map(|l| l.map_or(-1, |v| v as i64)).collect()
    }
}

pub const BATCH_CACHE_MAGIC: &[u8; 8] = b"RDBATCH\0";
pub const BATCH_CACHE_VERSION: u32 = 1;

/// Writes packed id sequences with a string header, framed and checksummed
/// like checkpoints.
pub fn save_sequences(path: impl AsRef<Path>, header: &BTreeMap<String, String>, sequences: &[Vec<u32>]) -> Result<()> {
    let mut e = FrameEncoder::new(BATCH_CACHE_MAGIC, BATCH_CACHE_VERSION);
    e.u32(header.len() as u32);
    for (k, v) in header {
        e.str(k);
        e.str(v);
    }
    e.u64(sequences.len() as u64);
    for s in sequences {
        e.u32(s.len() as u32);
        for &id in s {
            e.u32(id);
        }
    }
    std::fs::write(path, e.finish())?;
    Ok(())
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<(BTreeMap<String, String>, Vec<Vec<u32>>)> {
    let bytes = std::fs::read(path)?;
    let (mut d, version) = FrameDecoder::open(&bytes, BATCH_CACHE_MAGIC)?;
    if version != BATCH_CACHE_VERSION {
        return Err(Error::Corrupt(format!("unsupported batch cache version {version}")));
    }
    let mut header = BTreeMap::new();
    for _ in 0..d.u32()? {
        let k = d.str()?;
        header.insert(k, d.str()?);
    }
    let n = d.u64()?;
    let mut seqs = Vec::new();
    for _ in 0..n {
        let len = d.u32()?;
        seqs.push((0..len).map(|_| d.u32()).collect::<Result<Vec<_>>>()?);
    }
    d.finish()?;
    Ok((header, seqs))
}
