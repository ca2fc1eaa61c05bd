//! Differentiable computation substrate: tensors, a reverse-mode tape,
//! layers, Adam, gradient checking, and labeled RNG streams.

pub mod adam;
pub mod bind;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, GradSet, OptState};
pub use bind::{bind_params, collect_grads, Binding};
pub use gradcheck::{grad_check, GradCheckOpts, GradReport, LossFn};
pub use layers::{
    add_positional, dropout, positional_encoding, Conv1dLayer, Dense, EmbeddingLayer, FeedForward,
    LayerNormLayer, MultiHeadAttention, TransformerBlock,
};
pub use params::{hash_hex, Dtype, ParamSet};
pub use rng::{seeded_stream, RngStream};
pub use scalar::Scalar;
pub use tape::{Grads, NodeId, Tape};
pub use tensor::Tensor;
