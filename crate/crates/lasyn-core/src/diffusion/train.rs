use super::denoiser::{DenoiserConfig, DiffusionDenoiser};
use super::loss::{diffusion_loss_nodes, LatentTextPair};
use super::schedule::NoiseSchedule;
use crate::nn::{
    adam_step, bind_params, collect_grads, AdamHyper, GradSet, OptState, RngStream, Tape, Tensor,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DiffusionTrainOpts {
    pub lr: f64,
    /// Total optimizer steps.
    pub steps: usize,
    pub batch: usize,
    pub grad_clip: f32,
}

impl Default for DiffusionTrainOpts {
    fn default() -> Self {
        DiffusionTrainOpts {
            lr: 1e-3,
            steps: 400,
            batch: 8,
            grad_clip: 5.0,
        }
    }
}

/// Train the denoiser on latent-text pairs with the weighted denoising
/// objective. Conditioning is dropped to the null embedding with probability
/// `p_uncond` per example, which is what guidance sampling later relies on.
pub fn train_denoiser(
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    pairs: &[LatentTextPair],
    opts: &DiffusionTrainOpts,
    rng: &RngStream,
) -> Result<(DiffusionDenoiser, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("train_denoiser pairs".into()));
    }
    let mut model = DiffusionDenoiser::init(cfg.clone(), *schedule, &mut rng.derive("dn"));
    let mut data_rng = rng.derive("dn-data");
    let mut sigma_rng = rng.derive("dn-sigma");
    let mut noise_rng = rng.derive("dn-noise");
    let mut drop_rng = rng.derive("dn-uncond");
    let mut dropout_rng = rng.derive("dn-dropout");

    let mut state = OptState::new();
    let hyper = AdamHyper {
        lr: opts.lr,
        ..AdamHyper::default()
    };
    let mut curve = Vec::with_capacity(opts.steps);

    for _step in 0..opts.steps {
        let mut grads = GradSet::new();
        let mut batch_loss = 0.0;
        for _ in 0..opts.batch {
            let pair = &pairs[data_rng.index(pairs.len())];
            let sigma = schedule.sample_sigma(1, &mut sigma_rng)?[0];
            let mut eps = Tensor::zeros(pair.latent.shape());
            for v in eps.data_mut() {
                *v = noise_rng.normal_f64() as f32;
            }
            let cond = if drop_rng.coin(cfg.p_uncond) {
                None
            } else {
                Some(&pair.text)
            };

            let mut tape: Tape<f32> = Tape::new();
            let b = bind_params(&mut tape, &model.params);
            let clean = tape.constant(pair.latent.clone());
            let loss = diffusion_loss_nodes(
                cfg,
                schedule,
                &mut tape,
                &b,
                clean,
                cond.map(|t| t as _),
                sigma,
                &eps,
                Some(&mut dropout_rng),
            );
            let lv = tape.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite("diffusion loss".into()));
            }
            batch_loss += lv;
            let g = tape.backward(loss);
            collect_grads(&b, &g, &mut grads);
        }
        grads.scale(1.0 / opts.batch as f32);
        grads.clip_l2(opts.grad_clip);
        adam_step(&mut model.params, &mut grads.clone(), &mut state, &hyper)?;
        curve.push(batch_loss / opts.batch as f64);
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    fn tiny_pairs(n: usize, width: usize, seed: u64) -> Vec<LatentTextPair> {
        let mut rng = seeded_stream(seed, "pairs");
        (0..n)
            .map(|_| {
                let frames = 3 + rng.index(4);
                let data: Vec<f32> = (0..frames * width)
                    .map(|_| rng.normal_f64() as f32 * 0.5)
                    .collect();
                LatentTextPair {
                    latent: Tensor::from_vec(&[frames, width], data),
                    text: (0..2 + rng.index(4)).map(|_| rng.index(15)).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn loss_decreases_on_tiny_problem() {
        let cfg = DenoiserConfig {
            channels: 10,
            input_width: 4,
            heads: 2,
            dropout: 0.0,
            levels: 2,
            attn_factors: vec![2],
            text_convs: 1,
            text_blocks: 1,
            p_uncond: 0.1,
        };
        let schedule = NoiseSchedule::default();
        let pairs = tiny_pairs(6, 4, 0);
        let opts = DiffusionTrainOpts {
            lr: 2e-3,
            steps: 60,
            batch: 4,
            grad_clip: 5.0,
        };
        let rng = seeded_stream(1, "dn-train");
        let (_model, curve) = train_denoiser(&cfg, &schedule, &pairs, &opts, &rng).unwrap();
        let head = crate::asr::train::median(&curve[..10]);
        let tail = crate::asr::train::median(&curve[curve.len() - 10..]);
        assert!(tail < head, "median loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn training_deterministic() {
        let cfg = DenoiserConfig {
            channels: 8,
            input_width: 4,
            heads: 2,
            dropout: 0.1,
            levels: 2,
            attn_factors: vec![2],
            text_convs: 1,
            text_blocks: 1,
            p_uncond: 0.1,
        };
        let schedule = NoiseSchedule::default();
        let pairs = tiny_pairs(4, 4, 2);
        let opts = DiffusionTrainOpts {
            steps: 5,
            batch: 2,
            ..DiffusionTrainOpts::default()
        };
        let run = || {
            let rng = seeded_stream(5, "dn-train");
            train_denoiser(&cfg, &schedule, &pairs, &opts, &rng)
                .unwrap()
                .0
                .params
                .content_hash()
        };
        assert_eq!(run(), run());
    }
}
