use std::collections::BTreeSet;

use super::head::HeadKind;
use crate::data::{ClassificationExample, TaggingExample, Vocabulary, CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::model::TokenBatch;

/// One encoded example. Sequence tasks carry a single target; token tasks
/// carry one per position (`None` at `[CLS]`, `[SEP]` and continuation
/// pieces).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub ids: Vec<u32>,
    pub targets: Vec<Option<usize>>,
}

/// Encoded downstream dataset with its label space.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub kind: HeadKind,
    pub labels: Vec<String>,
    pub examples: Vec<TaskExample>,
}

/// Sorted distinct labels of a classification set.
pub fn classification_labels(examples: &[ClassificationExample]) -> Vec<String> {
    examples.iter().map(|e| e.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Sorted distinct tags of a tagging set.
pub fn tagging_labels(examples: &[TaggingExample]) -> Vec<String> {
    examples.iter().flat_map(|e| e.tags.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn label_id(labels: &[String], label: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::input(format!("label {label:?} is not in the label set {labels:?}")))
}

impl TaskDataset {
    /// `[CLS] text [SEP]`, with the text truncated to `max_len - 2` ids.
    pub fn from_classification(
        examples: &[ClassificationExample],
        vocab: &Vocabulary,
        labels: &[String],
        max_len: usize,
    ) -> Result<Self> {
        if max_len < 3 {
            return Err(Error::config("max_len must leave room for [CLS], [SEP] and one token"));
        }
        let examples = examples
            .iter()
            .map(|e| {
                let mut ids = vec![CLS_ID];
                ids.extend(vocab.encode(&e.text).into_iter().take(max_len - 2));
                ids.push(SEP_ID);
                Ok(TaskExample { ids, targets: vec![Some(label_id(labels, &e.label)?)] })
            })
            .collect::<Result<_>>()?;
        Ok(TaskDataset { kind: HeadKind::SequenceClassification, labels: labels.to_vec(), examples })
    }

    /// Each word is encoded on its own; its tag goes on the first piece.
    pub fn from_tagging(examples: &[TaggingExample], vocab: &Vocabulary, labels: &[String], max_len: usize) -> Result<Self> {
        if max_len < 3 {
            return Err(Error::config("max_len must leave room for [CLS], [SEP] and one token"));
        }
        let examples = examples
            .iter()
            .map(|e| {
                let mut ids = vec![CLS_ID];
                let mut targets = vec![None];
                for (tok, tag) in e.tokens.iter().zip(&e.tags) {
                    let tag = label_id(labels, tag)?;
                    let mut pieces = vocab.encode(tok);
                    if pieces.is_empty() {
                        pieces.push(vocab.id(tok));
                    }
                    for (k, p) in pieces.into_iter().enumerate() {
                        ids.push(p);
                        targets.push((k == 0).then_some(tag));
                    }
                }
                ids.truncate(max_len - 1);
                targets.truncate(max_len - 1);
                ids.push(SEP_ID);
                targets.push(None);
                Ok(TaskExample { ids, targets })
            })
            .collect::<Result<_>>()?;
        Ok(TaskDataset { kind: HeadKind::TokenClassification, labels: labels.to_vec(), examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Padded batch of the selected examples plus flattened targets:
    /// one per example for sequence tasks, `batch*seq` for token tasks.
    pub fn batch(&self, indices: &[usize]) -> Result<(TokenBatch, Vec<Option<usize>>)> {
        let rows: Vec<&TaskExample> = indices
            .iter()
            .map(|&i| self.examples.get(i).ok_or_else(|| Error::input(format!("example {i} out of range"))))
            .collect::<Result<_>>()?;
        let ids: Vec<Vec<u32>> = rows.iter().map(|r| r.ids.clone()).collect();
        let tokens = TokenBatch::from_rows(&ids, PAD_ID)?;
        let targets = match self.kind {
            HeadKind::SequenceClassification => rows.iter().map(|r| r.targets[0]).collect(),
            HeadKind::TokenClassification => {
                let mut t = Vec::with_capacity(tokens.positions());
                for r in &rows {
                    t.extend(r.targets.iter().copied());
                    t.extend(std::iter::repeat_n(None, tokens.seq - r.targets.len()));
                }
                t
            }
        };
        Ok((tokens, targets))
    }
}
