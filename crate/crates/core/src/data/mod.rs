//! Corpus ingestion, vocabulary, sliding windows, MLM masking and the
//! synthetic task suite.

mod batch;
mod corpus;
mod masking;
mod synthetic;
mod vocab;
mod window;

pub use batch::{load_sequences, save_sequences, DistillBatch, BATCH_CACHE_MAGIC, BATCH_CACHE_VERSION};
pub use corpus::{
    format_classification, format_tagging, load_classification, load_tagging, parse_classification, parse_tagging,
    read_documents, ClassificationExample, TaggingExample,
};
pub use masking::{apply_mlm_masking, MaskedSequence, MaskingConfig};
pub use synthetic::{
    synthetic_classification, synthetic_corpus, synthetic_tagging, DISTRACTORS, ENTITY_BEGIN, ENTITY_INSIDE, KEYWORDS,
    NEGATIVE_LABEL, OUTSIDE, POSITIVE_LABEL,
};
pub use vocab::{
    tokenize, TokenizerMode, Vocabulary, CLS_ID, MASK_ID, NUM_SPECIAL, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
};
pub use window::window_corpus;
