use crate::asr::LatentSeq;
use crate::nn::Tensor;
use crate::{Error, Result};

/// Per-dimension affine normalizer for latent sequences, fitted on the real
/// latent corpus. The diffusion model operates on normalized latents; its
/// samples are mapped back through `denormalize`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentNorm {
    pub fn fit(latents: &[LatentSeq]) -> Result<LatentNorm> {
        if latents.is_empty() {
            return Err(Error::EmptyInput("latent normalizer fit".into()));
        }
        let width = latents[0].width();
        let mut mean = vec![0.0f64; width];
        let mut count = 0usize;
        for l in latents {
            for r in 0..l.frames() {
                for (d, &v) in l.data.row(r).iter().enumerate() {
                    mean[d] += v as f64;
                }
            }
            count += l.frames();
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0f64; width];
        for l in latents {
            for r in 0..l.frames() {
                for (d, &v) in l.data.row(r).iter().enumerate() {
                    let x = v as f64 - mean[d];
                    var[d] += x * x;
                }
            }
        }
        Ok(LatentNorm {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|&v| ((v / count as f64).sqrt().max(1e-4)) as f32)
                .collect(),
        })
    }

    pub fn normalize(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut out = x.clone();
        let cols = x.cols();
        for r in 0..x.rows() {
            for c in 0..cols {
                out[(r, c)] = (x[(r, c)] - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn denormalize(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut out = x.clone();
        let cols = x.cols();
        for r in 0..x.rows() {
            for c in 0..cols {
                out[(r, c)] = x[(r, c)] * self.std[c] + self.mean[c];
            }
        }
        out
    }

    /// Round-trip tensors for persistence inside a parameter set.
    pub fn to_tensors(&self) -> (Tensor<f32>, Tensor<f32>) {
        (
            Tensor::from_vec(&[self.mean.len()], self.mean.clone()),
            Tensor::from_vec(&[self.std.len()], self.std.clone()),
        )
    }

    pub fn from_tensors(mean: &Tensor<f32>, std: &Tensor<f32>) -> LatentNorm {
        LatentNorm {
            mean: mean.data().to_vec(),
            std: std.data().to_vec(),
        }
    }
}

/// Global standard deviation of a set of compressed latents (used to scale
/// the diffusion target to `sigma_data`).
pub fn global_std(latents: &[Tensor<f32>]) -> f32 {
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    let mut n = 0usize;
    for l in latents {
        for &v in l.data() {
            sum += v as f64;
            sq += (v as f64) * (v as f64);
            n += 1;
        }
    }
    let mean = sum / n.max(1) as f64;
    ((sq / n.max(1) as f64 - mean * mean).sqrt().max(1e-6)) as f32
}
