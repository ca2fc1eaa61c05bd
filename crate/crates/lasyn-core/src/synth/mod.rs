//! The fixed-projection latent synthesizer: a direct phoneme-to-latent
//! mapping trained through the frozen guiding net.

pub mod fixed;

pub use fixed::{
    align_fixed, fixed_objective_nodes, latent_stats, project, resample_rows, train_fixed,
    FixedProjSynth, FixedSynthConfig, FixedTrainOpts,
};
