#![allow(dead_code)]

use recdistill_core::data::*;
use recdistill_core::eval::*;
use recdistill_core::model::*;
use recdistill_core::seed::{rng, Stream};

pub struct Toy {
    pub vocab: Vocabulary,
    pub sequences: Vec<Vec<u32>>,
}

/// Word-level vocabulary and windowed pre-training sequences over a small
/// synthetic corpus.
pub fn toy_corpus(seed: u64, docs: usize) -> Toy {
    let corpus = synthetic_corpus(seed, docs, 2, 4);
    let mut text = corpus.clone();
    text.extend(synthetic_classification(seed, 40).into_iter().map(|e| e.text));
    text.extend(synthetic_tagging(seed, 40).into_iter().map(|e| e.tokens.join(" ")));
    let vocab = Vocabulary::build(&text, 200, TokenizerMode::Word).unwrap();
    let ids: Vec<Vec<u32>> = corpus.iter().map(|d| vocab.encode(d)).collect();
    let sequences = window_corpus(&ids, 14, 7, 10).unwrap();
    Toy { vocab, sequences }
}

pub fn tiny(vocab: usize, layers: usize) -> ModelConfig {
    ModelConfig { num_layers: layers, ..ModelConfig::tiny(vocab) }
}

pub fn teacher(cfg: ModelConfig, seed: u64) -> TeacherModel {
    TeacherModel::new(cfg, &mut Init::Normal(&mut rng(seed, Stream::Init, 0))).unwrap()
}

pub fn student(cfg: ModelConfig, seed: u64) -> RecursiveStudent {
    RecursiveStudent::new(cfg, &mut Init::Normal(&mut rng(seed, Stream::Init, 0))).unwrap()
}

pub fn classification(toy: &Toy, seed: u64, n: usize) -> TaskDataset {
    let ex = synthetic_classification(seed, n);
    let labels = classification_labels(&ex);
    TaskDataset::from_classification(&ex, &toy.vocab, &labels, 24).unwrap()
}

pub fn tagging(toy: &Toy, seed: u64, n: usize) -> TaskDataset {
    let ex = synthetic_tagging(seed, n);
    let labels = tagging_labels(&ex);
    TaskDataset::from_tagging(&ex, &toy.vocab, &labels, 24).unwrap()
}

pub fn task_model(backbone: Backbone, data: &TaskDataset, seed: u64) -> TaskModel {
    let d = backbone.config().hidden_dim;
    let head =
        TaskHead::new(data.kind, d, data.labels.clone(), 0.1, &mut Init::Normal(&mut rng(seed, Stream::Init, 99)))
            .unwrap();
    TaskModel { backbone, head }
}
