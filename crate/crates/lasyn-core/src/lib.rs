//! Core library for LaSyn-style dual-modality training at desk scale.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`nn`]: tensors, reverse-mode autodiff, layers, Adam, gradient checking,
//!   and seeded RNG streams. Everything trainable in this crate is built on it.
//! - [`corpus`]: deterministic synthetic paired speech/text and SLU data,
//!   the grapheme-to-phoneme frontend, and phoneme masking.
//! - [`frontend`]: log-mel features and spectrogram augmentation.
//! - [`asr`]: the pre-trained speech model, its encoder/guiding-net split,
//!   transducer and attention-decoder losses, greedy decoding.
//! - [`synth`]: the fixed-projection latent synthesizer.
//! - [`diffusion`]: the diffusion latent synthesizer (compressed latent
//!   autoencoder, preconditioned denoiser, Heun sampler, guidance).
//! - [`backbone`]: dual-modality backbone training over mixed real/pseudo
//!   latent batches with a staged curriculum.
//! - [`labels`] and [`metrics`]: canonical annotation serialization and the
//!   WER / intent / slot / exact-match evaluation metrics.
//! - [`pipeline`]: experiment configs, binary checkpoints, staged runs,
//!   and report emission.

pub mod asr;
pub mod backbone;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod frontend;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
