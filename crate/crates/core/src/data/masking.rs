use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, MASK_ID, NUM_SPECIAL};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Selection rate and corruption split of masked-token selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub p_mask: f64,
    /// Share of selected tokens replaced by `[MASK]`.
    pub mask_frac: f64,
    /// Share of selected tokens replaced by a random non-special token; the
    /// rest keep their original token.
    pub random_frac: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig { p_mask: 0.15, mask_frac: 0.8, random_frac: 0.1 }
    }
}

impl MaskingConfig {
    /// Every selected token becomes `[MASK]`.
    pub fn all_mask(p_mask: f64) -> Self {
        MaskingConfig { p_mask, mask_frac: 1.0, random_frac: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.p_mask) || !unit(self.mask_frac) || !unit(self.random_frac) || self.mask_frac + self.random_frac > 1.0 {
            return Err(Error::config(format!("invalid masking configuration {self:?}")));
        }
        Ok(())
    }
}

/// One masked sequence: corrupted input and original ids at selected
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input: Vec<u32>,
    pub labels: Vec<Option<u32>>,
}

impl MaskedSequence {
    /// Unmasked view of a sequence.
    pub fn plain(ids: &[u32]) -> Self {
        MaskedSequence { input: ids.to_vec(), labels: vec![None; ids.len()] }
    }

    pub fn masked_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Selects each non-special token with probability `p_mask`, then applies
/// the corruption split. The random stream depends only on
/// `(seed, sequence_index)`.
pub fn apply_mlm_masking(
    sequence: &[u32],
    vocab_size: usize,
    cfg: &MaskingConfig,
    seed: u64,
    sequence_index: u64,
) -> Result<MaskedSequence> {
    cfg.validate()?;
    if vocab_size <= NUM_SPECIAL {
        return Err(Error::config("vocabulary has no ordinary tokens"));
    }
    let mut rng = seed::rng(seed, Stream::Masking, sequence_index);
    let mut out = MaskedSequence::plain(sequence);
    for (i, &id) in sequence.iter().enumerate() {
        if Vocabulary::is_special(id) || rng.random::<f64>() >= cfg.p_mask {
            continue;
        }
        out.labels[i] = Some(id);
        let r: f64 = rng.random();
        if r < cfg.mask_frac {
            out.input[i] = MASK_ID;
        } else if r < cfg.mask_frac + cfg.random_frac {
            out.input[i] = rng.random_range(NUM_SPECIAL as u32..vocab_size as u32);
        }
    }
    Ok(out)
}
