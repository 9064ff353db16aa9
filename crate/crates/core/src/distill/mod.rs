//! Distillation objective: MLM, attention and hidden alignment, output and
//! embedding terms, and the iteration-to-layer map.

mod layer_map;
mod losses;

pub use layer_map::{build_layer_map, LayerMap, LayerMapStrategy};
pub use losses::{
    alignment_var, attention_alignment_loss, attention_alignment_var, cosine_alignment_var, embedding_loss,
    hidden_alignment_loss, mlm_loss, mlm_loss_var, output_loss, output_loss_var, teacher_trace, total_loss,
    AlignmentMode, AlignmentVars, LayerAlignment, LossReport, LossWeights,
};
