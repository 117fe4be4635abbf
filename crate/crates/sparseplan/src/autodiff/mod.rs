//! Minimal reverse-mode differentiation over dense f64 tensors: exactly
//! the op set the world model, the planning objective, and the probing
//! head need.

mod adam;
mod checkpoint;
pub mod finite_diff;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState, GradSet, ParamSet};
pub use checkpoint::{load as load_checkpoint, save as save_checkpoint, CHECKPOINT_VERSION};
pub use graph::{
    gelu_tanh, masked_attention, AttentionMask, Graph, NodeId, LAYERNORM_EPS, MASK_NEG,
};
pub use tensor::{matmul_raw, transpose_raw, Tensor};
