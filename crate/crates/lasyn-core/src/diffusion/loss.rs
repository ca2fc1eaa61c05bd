use super::denoiser::{Denoiser, DenoiserConfig};
use super::schedule::NoiseSchedule;
use crate::corpus::PhonemeSeq;
use crate::nn::{Binding, NodeId, RngStream, Scalar, Tape, Tensor};
use crate::Result;

/// A clean compressed latent with its conditioning text.
#[derive(Debug, Clone)]
pub struct LatentTextPair {
    pub latent: Tensor<f32>,
    pub text: PhonemeSeq,
}

/// Denoising score-matching objective for one drawn `(sigma, eps)`:
/// `lambda(sigma) * ||D(h + sigma*eps; e, sigma) - h||^2`.
///
/// Generic over the denoiser so closed-form oracles can be substituted.
pub fn diffusion_loss_with(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    pair: &LatentTextPair,
    cond: Option<&PhonemeSeq>,
    sigma: f64,
    eps: &Tensor<f32>,
) -> Result<f64> {
    assert_eq!(eps.shape(), pair.latent.shape(), "eps must be shaped like h");
    let mut noisy = pair.latent.clone();
    for (n, &e) in noisy.data_mut().iter_mut().zip(eps.data()) {
        *n += sigma as f32 * e;
    }
    let d = denoiser.denoise(&noisy, cond, sigma)?;
    let mut sq = 0.0f64;
    for (a, b) in d.data().iter().zip(pair.latent.data()) {
        let diff = (*a - *b) as f64;
        sq += diff * diff;
    }
    Ok(schedule.lambda(sigma) * sq)
}

/// Tape version used for training and gradient verification. The caller
/// supplies the conditioning choice (already dropped to `None` with
/// probability `p_uncond` at batch construction).
pub fn diffusion_loss_nodes<F: Scalar>(
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    tape: &mut Tape<F>,
    b: &Binding,
    clean: NodeId,
    cond: Option<&PhonemeSeq>,
    sigma: f64,
    eps: &Tensor<F>,
    rng: Option<&mut RngStream>,
) -> NodeId {
    let noise = tape.constant(eps.clone());
    let scaled_noise = tape.scale(noise, sigma);
    let noisy = tape.add(clean, scaled_noise);
    let ctx = cfg.text_context_nodes(tape, b, cond);
    let d = cfg.denoise_nodes(schedule, tape, b, noisy, ctx, sigma, rng);
    let diff = tape.sub(d, clean);
    let sq = tape.mul(diff, diff);
    let sum = tape.sum_all(sq);
    tape.scale(sum, schedule.lambda(sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    /// Oracle returning the clean latent regardless of input.
    struct PerfectDenoiser(Tensor<f32>);
    impl Denoiser for PerfectDenoiser {
        fn denoise(&self, _noisy: &Tensor<f32>, _c: Option<&PhonemeSeq>, _s: f64) -> Result<Tensor<f32>> {
            Ok(self.0.clone())
        }
        fn width(&self) -> usize {
            self.0.cols()
        }
    }

    /// Stub returning its noisy input unchanged.
    struct IdentityDenoiser;
    impl Denoiser for IdentityDenoiser {
        fn denoise(&self, noisy: &Tensor<f32>, _c: Option<&PhonemeSeq>, _s: f64) -> Result<Tensor<f32>> {
            Ok(noisy.clone())
        }
        fn width(&self) -> usize {
            0
        }
    }

    fn pair(seed: u64) -> (LatentTextPair, Tensor<f32>) {
        let mut rng = seeded_stream(seed, "pair");
        let latent = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.normal_f64() as f32 * 0.5).collect());
        let eps = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.normal_f64() as f32).collect());
        (
            LatentTextPair {
                latent,
                text: vec![1, 2],
            },
            eps,
        )
    }

    #[test]
    fn perfect_denoiser_gives_zero_loss() {
        let (p, eps) = pair(0);
        let schedule = NoiseSchedule::default();
        let d = PerfectDenoiser(p.latent.clone());
        let loss = diffusion_loss_with(&d, &schedule, &p, Some(&p.text.clone()), 0.8, &eps).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn identity_stub_matches_algebraic_substitution() {
        // D(h + sigma*eps) = h + sigma*eps, so the loss reduces to
        // lambda(sigma) * sigma^2 * ||eps||^2.
        let (p, eps) = pair(1);
        let schedule = NoiseSchedule::default();
        for &sigma in &[0.05f64, 0.3, 1.7] {
            let loss = diffusion_loss_with(&IdentityDenoiser, &schedule, &p, None, sigma, &eps).unwrap();
            let eps_sq: f64 = eps.data().iter().map(|&e| (e as f64) * (e as f64)).sum();
            let expect = schedule.lambda(sigma) * sigma * sigma * eps_sq;
            assert!(
                (loss - expect).abs() / expect < 1e-5,
                "sigma {sigma}: {loss} vs {expect}"
            );
        }
    }
}
