use super::aed::aed_loss_nodes;
use super::model::{AsrConfig, AsrModel};
use super::transducer::transducer_loss_nodes;
use super::{HeadKind, TokenVocab};
use crate::corpus::Utterance;
use crate::frontend::{logmel, spec_augment, FeatureSeq, MelConfig, SpecAugmentConfig};
use crate::nn::{
    adam_step, bind_params, collect_grads, AdamHyper, GradSet, OptState, RngStream, Tape,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub spec_augment: Option<SpecAugmentConfig>,
    pub grad_clip: f32,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            lr: 2e-3,
            epochs: 12,
            batch: 8,
            spec_augment: Some(SpecAugmentConfig::default()),
            grad_clip: 5.0,
        }
    }
}

/// Extract (and cache) features for a paired utterance.
pub fn utterance_features(utt: &Utterance, mel: &MelConfig) -> Result<FeatureSeq> {
    let samples = utt
        .samples
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("utterance {} has no audio", utt.id)))?;
    logmel(samples, mel)
}

/// Supervised pre-training of the full speech model on paired data.
/// Returns the model and the per-batch loss curve.
pub fn pretrain_asr(
    cfg: &AsrConfig,
    vocab: &TokenVocab,
    train: &[Utterance],
    mel: &MelConfig,
    opts: &TrainOpts,
    rng: &RngStream,
) -> Result<(AsrModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::EmptyInput("pretrain_asr training set".into()));
    }
    assert_eq!(cfg.vocab, vocab.len(), "config vocab size mismatch");

    let mut init_rng = rng.derive("init");
    let mut params = cfg.init_params(&mut init_rng);
    let mut order_rng = rng.derive("order");
    let mut aug_rng = rng.derive("specaug");

    let features: Vec<FeatureSeq> = train
        .iter()
        .map(|u| utterance_features(u, mel))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<usize>> = train.iter().map(|u| vocab.encode(&u.words)).collect();

    let mut state = OptState::new();
    let hyper = AdamHyper {
        lr: opts.lr,
        ..AdamHyper::default()
    };
    let mut curve = Vec::new();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..opts.epochs {
        order_rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch) {
            let mut grads = GradSet::new();
            let mut batch_loss = 0.0f64;
            for &i in chunk {
                let feats = match &opts.spec_augment {
                    Some(aug) => spec_augment(&features[i], aug, &mut aug_rng),
                    None => features[i].clone(),
                };
                let mut tape: Tape<f32> = Tape::new();
                let b = bind_params(&mut tape, &params);
                let x = tape.constant(feats.features);
                let enc = cfg.forward_encoder(&mut tape, &b, x);
                let loss = match cfg.head {
                    HeadKind::Transducer => transducer_loss_nodes(cfg, &mut tape, &b, enc, &targets[i])?,
                    HeadKind::Aed => aed_loss_nodes(cfg, &mut tape, &b, enc, &targets[i]),
                };
                let lv = tape.value(loss).item() as f64;
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!("pretrain loss on {}", train[i].id)));
                }
                batch_loss += lv;
                let g = tape.backward(loss);
                collect_grads(&b, &g, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            grads.clip_l2(opts.grad_clip);
            adam_step(&mut params, &grads, &mut state, &hyper)?;
            curve.push(batch_loss / chunk.len() as f64);
        }
    }

    Ok((
        AsrModel {
            cfg: cfg.clone(),
            params,
        },
        curve,
    ))
}

/// Median of a slice (used for progress checks on loss curves).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
