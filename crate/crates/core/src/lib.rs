//! Distillation of a transformer encoder into a recursive, weight-shared
//! student with bottleneck adapters and factorized embeddings.

pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
