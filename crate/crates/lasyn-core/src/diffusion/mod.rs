//! Diffusion latent synthesizer: a channel-compressing autoencoder, a
//! preconditioned 1-D UNet denoiser with text conditioning, the weighted
//! denoising objective, and guided second-order sampling.

pub mod autoenc;
pub mod denoiser;
pub mod loss;
pub mod normalize;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use autoenc::{train_autoencoder, AutoencConfig, AutoencTrainOpts, LatentAutoencoder};
pub use denoiser::{Denoiser, DenoiserConfig, DiffusionDenoiser};
pub use loss::{diffusion_loss_nodes, diffusion_loss_with, LatentTextPair};
pub use normalize::{global_std, LatentNorm};
pub use sampler::{cfg_combine, heun_sample, sample_latent, DiffusionSynth, LengthPolicy, SampleOpts};
pub use schedule::NoiseSchedule;
pub use train::{train_denoiser, DiffusionTrainOpts};
