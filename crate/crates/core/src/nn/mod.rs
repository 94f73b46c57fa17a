//! The segmentation network and its serialization.
//!
//! Hand-written forward/backward passes over ndarray tensors: convolutions
//! as im2col + GEMM, per-sample normalization, ELU activations, average
//! pooling, nearest upsampling, and an optional Tanimoto-gated attention
//! unit in every residual block. Generic over f32/f64 so gradient checks
//! run in double precision while training runs in single.

pub mod attention;
pub mod checkpoint;
pub mod float;
pub mod layers;
pub mod resunet;

pub use attention::TanimotoAttention;
pub use checkpoint::{content_id, Checkpoint, Provenance};
pub use float::Scalar;
pub use resunet::{is_gate_param, AttentionResUNet, HeadMaps, NetGrads, NetworkSpec, HEAD_NAMES};
