//! Dense tensors, reverse-mode differentiation, and gradient verification.

pub mod gradcheck;
pub mod kernels;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_tape_fn, finite_difference_check, GradCheckReport};
pub use ops::{cosine_similarity, cross_entropy, gelu, kl_divergence, layer_norm, softmax, KL_EPS, LN_EPS};
pub use tape::{AttnDims, KlDirection, Tape, Var};
pub use tensor::Tensor;
