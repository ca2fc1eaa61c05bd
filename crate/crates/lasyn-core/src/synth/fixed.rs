use crate::asr::{aed, transducer, HeadKind, LatentSeq, Provenance, SplitModel, TokenVocab};
use crate::corpus::{PhonemeSeq, Utterance, NUM_PHONEME_SYMBOLS};
use crate::nn::{
    adam_step, bind_params, collect_grads, AdamHyper, Binding, Conv1dLayer, Dense, EmbeddingLayer,
    GradSet, NodeId, OptState, ParamSet, RngStream, Scalar, Tape, Tensor,
};
use crate::{Error, Result};

/// Architecture of the fixed-projection latent synthesizer: an embedding
/// table, a stack of 1-D convolutions, and a projection to the latent width.
#[derive(Debug, Clone)]
pub struct FixedSynthConfig {
    pub filters: usize,
    pub kernel: usize,
    pub layers: usize,
    pub latent_width: usize,
    /// Output frames per input phoneme.
    pub upsample: usize,
}

impl Default for FixedSynthConfig {
    fn default() -> Self {
        FixedSynthConfig {
            filters: 512,
            kernel: 5,
            layers: 4,
            latent_width: 256,
            upsample: 1,
        }
    }
}

impl FixedSynthConfig {
    fn embedding(&self) -> EmbeddingLayer {
        EmbeddingLayer::new("fsyn.emb", NUM_PHONEME_SYMBOLS, self.filters)
    }

    fn conv(&self, i: usize) -> Conv1dLayer {
        Conv1dLayer::new(format!("fsyn.c{i}"), self.filters, self.filters, self.kernel, 1)
    }

    fn out(&self) -> Dense {
        Dense::new("fsyn.out", self.filters, self.latent_width)
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet<f32> {
        let mut params = ParamSet::new();
        self.embedding().init(&mut params, rng);
        for i in 0..self.layers {
            self.conv(i).init(&mut params, rng);
        }
        self.out().init(&mut params, rng);
        params
    }

    /// Tape forward: phonemes to pseudo latents of length `upsample * len`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, seq: &PhonemeSeq) -> NodeId {
        // Per-phoneme upsampling: repeat indices before the convolutions so
        // the length contract holds exactly under same-length convs.
        let mut indices = Vec::with_capacity(seq.len() * self.upsample);
        for &p in seq {
            for _ in 0..self.upsample {
                indices.push(p);
            }
        }
        let mut x = self.embedding().forward(tape, b, &indices);
        for i in 0..self.layers {
            x = self.conv(i).forward(tape, b, x);
            x = tape.silu(x);
        }
        self.out().forward(tape, b, x)
    }
}

/// A (possibly trained) fixed-projection synthesizer.
#[derive(Debug, Clone)]
pub struct FixedProjSynth {
    pub cfg: FixedSynthConfig,
    pub params: ParamSet<f32>,
}

impl FixedProjSynth {
    pub fn init(cfg: FixedSynthConfig, rng: &mut RngStream) -> Self {
        let params = cfg.init_params(&mut rng.derive("fsyn-init"));
        FixedProjSynth { cfg, params }
    }
}

/// Map a phoneme sequence (MASK allowed) to a pseudo latent sequence.
pub fn project(seq: &PhonemeSeq, synth: &FixedProjSynth) -> Result<LatentSeq> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("project phoneme sequence".into()));
    }
    let mut tape: Tape<f32> = Tape::new();
    let b = bind_params(&mut tape, &synth.params);
    let out = synth.cfg.forward(&mut tape, &b, seq);
    Ok(LatentSeq {
        data: tape.value(out).clone(),
        frame_ms: 0,
        provenance: Provenance::Pseudo,
    })
}

#[derive(Debug, Clone)]
pub struct FixedTrainOpts {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub grad_clip: f32,
}

impl Default for FixedTrainOpts {
    fn default() -> Self {
        FixedTrainOpts {
            lr: 2e-3,
            epochs: 10,
            batch: 8,
            grad_clip: 5.0,
        }
    }
}

/// Resample a latent sequence to `target_len` rows by nearest index. The toy
/// corpus has near-uniform phoneme durations, so uniform alignment is a good
/// proxy for per-phoneme correspondence.
pub fn resample_rows(latent: &Tensor<f32>, target_len: usize) -> Tensor<f32> {
    let src = latent.rows();
    let mut out = Tensor::zeros(&[target_len, latent.cols()]);
    for i in 0..target_len {
        let j = (i * src) / target_len;
        let row = latent.row(j.min(src - 1));
        out.data_mut()[i * latent.cols()..(i + 1) * latent.cols()].copy_from_slice(row);
    }
    out
}

/// Geometric pre-alignment on paired data: pull the projection of each
/// paired sentence toward the uniformly-resampled real latents, so pseudo
/// latents start on the real manifold before the recognizability objective.
pub fn align_fixed(
    mut synth: FixedProjSynth,
    paired: &[(PhonemeSeq, Tensor<f32>)],
    opts: &FixedTrainOpts,
    rng: &RngStream,
) -> Result<(FixedProjSynth, Vec<f64>)> {
    if paired.is_empty() {
        return Err(Error::EmptyInput("align_fixed paired corpus".into()));
    }
    let targets: Vec<Tensor<f32>> = paired
        .iter()
        .map(|(ph, latent)| resample_rows(latent, ph.len() * synth.cfg.upsample))
        .collect();

    let mut order_rng = rng.derive("align-order");
    let mut state = OptState::new();
    let hyper = AdamHyper {
        lr: opts.lr,
        ..AdamHyper::default()
    };
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..paired.len()).collect();

    for _epoch in 0..opts.epochs {
        order_rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch) {
            let mut grads = GradSet::new();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape: Tape<f32> = Tape::new();
                let b = bind_params(&mut tape, &synth.params);
                let out = synth.cfg.forward(&mut tape, &b, &paired[i].0);
                let target = tape.constant(targets[i].clone());
                let diff = tape.sub(out, target);
                let sq = tape.mul(diff, diff);
                let loss = tape.mean_all(sq);
                let lv = tape.value(loss).item() as f64;
                if !lv.is_finite() {
                    return Err(Error::NonFinite("alignment loss".into()));
                }
                batch_loss += lv;
                let g = tape.backward(loss);
                collect_grads(&b, &g, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            grads.clip_l2(opts.grad_clip);
            adam_step(&mut synth.params, &grads, &mut state, &hyper)?;
            curve.push(batch_loss / chunk.len() as f64);
        }
    }
    Ok((synth, curve))
}

/// Loss of the recognizability objective for one sentence: the frozen
/// guiding net consumes the projected latents and scores the transcript
/// with the pre-trained model's own loss.
pub fn fixed_objective_nodes<F: Scalar>(
    synth_cfg: &FixedSynthConfig,
    guiding: &SplitModel,
    tape: &mut Tape<F>,
    b: &Binding,
    phonemes: &PhonemeSeq,
    targets: &[usize],
) -> Result<NodeId> {
    let pseudo = synth_cfg.forward(tape, b, phonemes);
    let enc = guiding.cfg.forward_upper(tape, b, pseudo, guiding.tap);
    match guiding.cfg.head {
        HeadKind::Transducer => transducer::transducer_loss_nodes(&guiding.cfg, tape, b, enc, targets),
        HeadKind::Aed => Ok(aed::aed_loss_nodes(&guiding.cfg, tape, b, enc, targets)),
    }
}

/// Train the synthesizer through the frozen guiding net. Only the
/// synthesizer's parameters are updated; passing a guiding net that is not
/// fully frozen is an error.
pub fn train_fixed(
    mut synth: FixedProjSynth,
    guiding: &SplitModel,
    vocab: &TokenVocab,
    text: &[Utterance],
    opts: &FixedTrainOpts,
    rng: &RngStream,
) -> Result<(FixedProjSynth, Vec<f64>)> {
    if text.is_empty() {
        return Err(Error::EmptyInput("train_fixed text corpus".into()));
    }
    for prefix in guiding.cfg.guiding_prefixes(guiding.tap) {
        for (name, entry) in guiding.params.iter() {
            if name.starts_with(prefix) && !entry.frozen {
                return Err(Error::NotFrozen(format!("guiding net ({name})")));
            }
        }
    }

    // One parameter set: trainable synth + frozen guiding net.
    let mut joint = ParamSet::new();
    for (name, entry) in synth.params.iter() {
        joint.insert(name, entry.tensor.clone());
    }
    for (name, entry) in guiding.params.iter() {
        joint.insert(name, entry.tensor.clone());
        joint.set_frozen(name, true);
    }

    let targets: Vec<Vec<usize>> = text.iter().map(|u| vocab.encode(&u.words)).collect();
    let mut order_rng = rng.derive("fixed-order");
    let mut state = OptState::new();
    let hyper = AdamHyper {
        lr: opts.lr,
        ..AdamHyper::default()
    };
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..text.len()).collect();

    for _epoch in 0..opts.epochs {
        order_rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch) {
            let mut grads = GradSet::new();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape: Tape<f32> = Tape::new();
                let b = bind_params(&mut tape, &joint);
                let loss =
                    fixed_objective_nodes(&synth.cfg, guiding, &mut tape, &b, &text[i].phonemes, &targets[i])?;
                let lv = tape.value(loss).item() as f64;
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!("fixed synth loss on {}", text[i].id)));
                }
                batch_loss += lv;
                let g = tape.backward(loss);
                collect_grads(&b, &g, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            grads.clip_l2(opts.grad_clip);
            adam_step(&mut joint, &grads, &mut state, &hyper)?;
            curve.push(batch_loss / chunk.len() as f64);
        }
    }

    for (name, entry) in synth.params.iter_mut() {
        entry.tensor = joint.get(name).clone();
    }
    Ok((synth, curve))
}

/// Per-dimension mean and standard deviation over a set of latent sequences.
pub fn latent_stats(latents: &[LatentSeq]) -> (Vec<f64>, Vec<f64>) {
    assert!(!latents.is_empty());
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
    let std = var.into_iter().map(|v| (v / count as f64).sqrt()).collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    fn tiny_synth(upsample: usize) -> FixedProjSynth {
        let cfg = FixedSynthConfig {
            filters: 12,
            kernel: 5,
            layers: 2,
            latent_width: 16,
            upsample,
        };
        let mut rng = seeded_stream(0, "synth");
        FixedProjSynth::init(cfg, &mut rng)
    }

    #[test]
    fn project_length_contract() {
        let synth = tiny_synth(1);
        let seq: PhonemeSeq = vec![0, 3, 5, 7, 9, 11, 13];
        let out = project(&seq, &synth).unwrap();
        assert_eq!(out.frames(), 7);
        assert_eq!(out.width(), 16);
        assert_eq!(out.provenance, Provenance::Pseudo);
    }

    #[test]
    fn project_upsample_doubles_length() {
        let synth = tiny_synth(2);
        let seq: PhonemeSeq = vec![0, 3, 5, 7, 9, 11, 13];
        let out = project(&seq, &synth).unwrap();
        assert_eq!(out.frames(), 14);
    }

    #[test]
    fn project_is_deterministic() {
        let synth = tiny_synth(1);
        let seq: PhonemeSeq = vec![1, 2, 3, 4];
        let a = project(&seq, &synth).unwrap();
        let b = project(&seq, &synth).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn project_accepts_mask() {
        let synth = tiny_synth(1);
        let seq: PhonemeSeq = vec![1, crate::corpus::MASK_ID, 3];
        assert!(project(&seq, &synth).is_ok());
    }

    #[test]
    fn project_empty_is_error() {
        let synth = tiny_synth(1);
        assert!(project(&vec![], &synth).is_err());
    }

    #[test]
    fn latent_stats_shapes() {
        let synth = tiny_synth(1);
        let a = project(&vec![1, 2, 3], &synth).unwrap();
        let b = project(&vec![4, 5], &synth).unwrap();
        let (mean, std) = latent_stats(&[a, b]);
        assert_eq!(mean.len(), 16);
        assert_eq!(std.len(), 16);
        assert!(std.iter().all(|s| s.is_finite()));
    }
}
