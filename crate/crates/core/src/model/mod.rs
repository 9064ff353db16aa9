//! Teacher and recursive student encoders, adapters, factorized embeddings
//! and checkpoints.

mod adapter;
mod backbone;
mod block;
mod checkpoint;
mod config;
mod embedding;
mod encoder;
mod mlm_head;
mod params;
mod student;
mod teacher;

pub use adapter::{adapter_apply, AdapterPair, AdapterParams};
pub use backbone::Backbone;
pub use block::{block_forward, TransformerBlockParams};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, KIND_KEY};
pub(crate) use checkpoint::{Decoder as FrameDecoder, Encoder as FrameEncoder};
pub use config::{adapter_param_count, derive_adapter_bottleneck, AdapterPlacement, ModelConfig, Nonlinearity};
pub use embedding::EmbeddingParams;
pub use encoder::{Encoder, EncoderVars, ForwardTrace, Mode, TokenBatch};
pub use mlm_head::MlmHead;
pub use params::{
    accumulate_grads, apply_freeze, count_all_parameters, count_parameters, flatten, flatten_grads,
    is_adapter_param, is_mlm_head_param, is_task_head_param, param_digest, unflatten, zero_grads, Init,
    Parameterized, INIT_STD,
};
pub use student::RecursiveStudent;
pub use teacher::{EncoderLayer, TeacherModel};
