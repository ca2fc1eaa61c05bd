use std::collections::BTreeMap;

use super::{Backbone, Modality, Synthesizer, TaskExample, TaskTag};
use crate::asr::LatentSeq;
use crate::corpus::{mask_phonemes, PhonemeSeq};
use crate::nn::{
    adam_step, bind_params, collect_grads, AdamHyper, GradSet, OptState, RngStream, Tape,
};
use crate::{Error, Result};

/// Staged training budgets: text-only steps, then mixed-modality steps with
/// the configured text share per batch.
#[derive(Debug, Clone, Copy)]
pub struct Curriculum {
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub mix_ratio: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Curriculum {
            phase1_steps: 300,
            phase2_steps: 300,
            mix_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneTrainOpts {
    pub lr: f64,
    pub batch: usize,
    pub grad_clip: f32,
    /// Reuse pseudo latents for unmasked text (keyed by phoneme sequence).
    pub cache_pseudo: bool,
}

impl Default for BackboneTrainOpts {
    fn default() -> Self {
        BackboneTrainOpts {
            lr: 1e-3,
            batch: 8,
            grad_clip: 5.0,
            cache_pseudo: false,
        }
    }
}

/// A text-side training item; pseudo latents are synthesized when drawn
/// (masked items re-mask every draw).
#[derive(Debug, Clone)]
pub struct TextExample {
    pub tag: TaskTag,
    pub phonemes: PhonemeSeq,
    pub targets: Vec<usize>,
    pub mask_ratio: Option<f64>,
}

/// A speech-side training item with precomputed real latents.
#[derive(Debug, Clone)]
pub struct SpeechExample {
    pub tag: TaskTag,
    pub latents: LatentSeq,
    pub targets: Vec<usize>,
}

/// Loss curve and per-batch modality composition of one phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseLog {
    pub curve: Vec<f64>,
    /// `(text, speech)` counts per batch.
    pub composition: Vec<(usize, usize)>,
}

/// Reusable pseudo-latent cache keyed by (synth hash, phoneme sequence).
/// Invalidated automatically when a different synthesizer is used.
#[derive(Debug, Clone, Default)]
pub struct SynthCache {
    key: Option<[u8; 32]>,
    map: BTreeMap<PhonemeSeq, LatentSeq>,
}

impl SynthCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_key(&mut self, synth: &Synthesizer) {
        let key = synth.content_hash();
        if self.key != Some(key) {
            self.key = Some(key);
            self.map.clear();
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

struct Trainer<'a> {
    backbone: &'a mut Backbone,
    state: OptState,
    hyper: AdamHyper,
    grad_clip: f32,
    cache: Option<&'a mut SynthCache>,
}

impl<'a> Trainer<'a> {
    fn new(backbone: &'a mut Backbone, opts: &BackboneTrainOpts, cache: Option<&'a mut SynthCache>) -> Self {
        Trainer {
            backbone,
            state: OptState::new(),
            hyper: AdamHyper {
                lr: opts.lr,
                ..AdamHyper::default()
            },
            grad_clip: opts.grad_clip,
            cache,
        }
    }

    fn text_latents(
        &mut self,
        synth: &Synthesizer,
        item: &TextExample,
        mask_rng: &mut RngStream,
        synth_rng: &mut RngStream,
    ) -> Result<LatentSeq> {
        match item.mask_ratio {
            Some(ratio) => {
                let (masked, _) = mask_phonemes(&item.phonemes, ratio, mask_rng);
                synth.synth(&masked, synth_rng)
            }
            None => {
                if let Some(cache) = self.cache.as_mut() {
                    cache.ensure_key(synth);
                    if let Some(hit) = cache.map.get(&item.phonemes) {
                        return Ok(hit.clone());
                    }
                }
                let latents = synth.synth(&item.phonemes, synth_rng)?;
                if let Some(cache) = self.cache.as_mut() {
                    cache.map.insert(item.phonemes.clone(), latents.clone());
                }
                Ok(latents)
            }
        }
    }

    fn step(&mut self, batch: &[TaskExample]) -> Result<f64> {
        let mut grads = GradSet::new();
        let mut total = 0.0;
        for ex in batch {
            let mut tape: Tape<f32> = Tape::new();
            let b = bind_params(&mut tape, &self.backbone.params);
            let loss = self.backbone.loss_nodes(&mut tape, &b, ex)?;
            let lv = tape.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite("backbone loss".into()));
            }
            total += lv;
            let g = tape.backward(loss);
            collect_grads(&b, &g, &mut grads);
        }
        grads.scale(1.0 / batch.len() as f32);
        grads.clip_l2(self.grad_clip);
        adam_step(&mut self.backbone.params, &grads, &mut self.state, &self.hyper)?;
        Ok(total / batch.len() as f64)
    }
}

/// Phase 1: text-only training through the frozen synthesizer. A zero-step
/// budget leaves the backbone untouched. The synthesizer must be frozen.
pub fn train_text_phase(
    backbone: &mut Backbone,
    synth: &Synthesizer,
    text: &[TextExample],
    steps: usize,
    opts: &BackboneTrainOpts,
    rng: &RngStream,
) -> Result<PhaseLog> {
    train_text_phase_cached(backbone, synth, text, steps, opts, rng, None)
}

pub fn train_text_phase_cached(
    backbone: &mut Backbone,
    synth: &Synthesizer,
    text: &[TextExample],
    steps: usize,
    opts: &BackboneTrainOpts,
    rng: &RngStream,
    cache: Option<&mut SynthCache>,
) -> Result<PhaseLog> {
    synth.require_frozen()?;
    let mut log = PhaseLog::default();
    if steps == 0 {
        return Ok(log);
    }
    if text.is_empty() {
        return Err(Error::EmptyInput("train_text_phase text tasks".into()));
    }
    let mut data_rng = rng.derive("p1-data");
    let mut mask_rng = rng.derive("p1-mask");
    let mut synth_rng = rng.derive("p1-synth");
    let mut trainer = Trainer::new(backbone, opts, cache);

    for _ in 0..steps {
        let mut batch = Vec::with_capacity(opts.batch);
        for _ in 0..opts.batch {
            let item = &text[data_rng.index(text.len())];
            let latents = trainer.text_latents(synth, item, &mut mask_rng, &mut synth_rng)?;
            batch.push(TaskExample::new(item.tag, Modality::Text, latents, item.targets.clone()));
        }
        let loss = trainer.step(&batch)?;
        log.curve.push(loss);
        log.composition.push((opts.batch, 0));
    }
    Ok(log)
}

/// Phase 2: mixed batches with `round(mix_ratio * batch)` text-derived
/// examples; a ratio of 0 is pure speech continuation.
pub fn train_dual_phase(
    backbone: &mut Backbone,
    synth: Option<&Synthesizer>,
    text: &[TextExample],
    speech: &[SpeechExample],
    curriculum: &Curriculum,
    opts: &BackboneTrainOpts,
    rng: &RngStream,
) -> Result<PhaseLog> {
    train_dual_phase_cached(backbone, synth, text, speech, curriculum, opts, rng, None)
}

#[allow(clippy::too_many_arguments)]
pub fn train_dual_phase_cached(
    backbone: &mut Backbone,
    synth: Option<&Synthesizer>,
    text: &[TextExample],
    speech: &[SpeechExample],
    curriculum: &Curriculum,
    opts: &BackboneTrainOpts,
    rng: &RngStream,
    cache: Option<&mut SynthCache>,
) -> Result<PhaseLog> {
    if !(0.0..=1.0).contains(&curriculum.mix_ratio) {
        return Err(Error::Invalid(format!(
            "mix ratio {} outside [0, 1]",
            curriculum.mix_ratio
        )));
    }
    if let Some(s) = synth {
        s.require_frozen()?;
    }
    let mut log = PhaseLog::default();
    if curriculum.phase2_steps == 0 {
        return Ok(log);
    }
    if speech.is_empty() {
        return Err(Error::EmptyInput("train_dual_phase speech examples".into()));
    }
    let n_text = (curriculum.mix_ratio * opts.batch as f64).round() as usize;
    let n_speech = opts.batch - n_text;
    if n_text > 0 && (text.is_empty() || synth.is_none()) {
        return Err(Error::Invalid(
            "mixed batches need text tasks and a synthesizer".into(),
        ));
    }

    let mut data_rng = rng.derive("p2-data");
    let mut mask_rng = rng.derive("p2-mask");
    let mut synth_rng = rng.derive("p2-synth");
    let mut trainer = Trainer::new(backbone, opts, cache);

    for _ in 0..curriculum.phase2_steps {
        let mut batch = Vec::with_capacity(opts.batch);
        for _ in 0..n_text {
            let item = &text[data_rng.index(text.len())];
            let synth = synth.expect("checked above");
            let latents = trainer.text_latents(synth, item, &mut mask_rng, &mut synth_rng)?;
            batch.push(TaskExample::new(item.tag, Modality::Text, latents, item.targets.clone()));
        }
        for _ in 0..n_speech {
            let item = &speech[data_rng.index(speech.len())];
            batch.push(TaskExample::new(
                item.tag,
                Modality::Speech,
                item.latents.clone(),
                item.targets.clone(),
            ));
        }
        let loss = trainer.step(&batch)?;
        log.curve.push(loss);
        log.composition.push((n_text, n_speech));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::{split_pretrained, AsrConfig, AsrModel, HeadKind, Provenance, TokenVocab};
    use crate::nn::{seeded_stream, Tensor};
    use crate::synth::{FixedProjSynth, FixedSynthConfig};

    fn setup() -> (Backbone, Synthesizer) {
        let vocab = TokenVocab::build(["play".to_string(), "cat".to_string(), "the".to_string()]);
        let cfg = AsrConfig {
            mel_bins: 8,
            width: 16,
            heads: 2,
            blocks_low: 1,
            blocks_high: 1,
            ffn_mult: 2,
            head: HeadKind::Transducer,
            dec_blocks: 1,
            joint_dim: 8,
            vocab: vocab.len(),
        };
        let mut rng = seeded_stream(0, "init");
        let params = cfg.init_params(&mut rng);
        let model = AsrModel { cfg, params };
        let split = split_pretrained(&model, "40ms").unwrap();
        let mut brng = seeded_stream(1, "bb");
        let backbone = Backbone::from_guiding(
            &split,
            &vocab,
            &["<mlm>".to_string(), "<slu>".to_string()],
            true,
            &mut brng,
        )
        .unwrap();

        let scfg = FixedSynthConfig {
            filters: 8,
            kernel: 3,
            layers: 1,
            latent_width: 16,
            upsample: 1,
        };
        let mut srng = seeded_stream(2, "synth");
        let mut synth = Synthesizer::Fixed(FixedProjSynth::init(scfg, &mut srng));
        synth.freeze();
        (backbone, synth)
    }

    fn text_items(backbone: &Backbone) -> Vec<TextExample> {
        let w = backbone.vocab.id("cat").unwrap();
        vec![
            TextExample {
                tag: TaskTag::Asr,
                phonemes: vec![1, 2, 3],
                targets: vec![w],
                mask_ratio: None,
            },
            TextExample {
                tag: TaskTag::Mlm,
                phonemes: vec![2, 3, 4, 5],
                targets: vec![backbone.vocab.id("<mlm>").unwrap(), w],
                mask_ratio: Some(0.3),
            },
        ]
    }

    fn speech_items(backbone: &Backbone) -> Vec<SpeechExample> {
        let w = backbone.vocab.id("play").unwrap();
        vec![SpeechExample {
            tag: TaskTag::Asr,
            latents: LatentSeq {
                data: Tensor::from_vec(&[5, 16], (0..80).map(|i| (i as f32 * 0.1).sin()).collect()),
                frame_ms: 40,
                provenance: Provenance::Real,
            },
            targets: vec![w],
        }]
    }

    #[test]
    fn unfrozen_synth_is_rejected() {
        let (mut backbone, _) = setup();
        let scfg = FixedSynthConfig {
            filters: 8,
            kernel: 3,
            layers: 1,
            latent_width: 16,
            upsample: 1,
        };
        let mut srng = seeded_stream(3, "synth");
        let unfrozen = Synthesizer::Fixed(FixedProjSynth::init(scfg, &mut srng));
        let text = text_items(&backbone);
        let rng = seeded_stream(0, "train");
        let err = train_text_phase(&mut backbone, &unfrozen, &text, 2, &BackboneTrainOpts::default(), &rng);
        assert!(matches!(err, Err(Error::NotFrozen(_))));
    }

    #[test]
    fn zero_budget_leaves_backbone_unchanged() {
        let (mut backbone, synth) = setup();
        let before = backbone.content_hash();
        let text = text_items(&backbone);
        let rng = seeded_stream(0, "train");
        let log = train_text_phase(&mut backbone, &synth, &text, 0, &BackboneTrainOpts::default(), &rng).unwrap();
        assert!(log.curve.is_empty());
        assert_eq!(backbone.content_hash(), before);
    }

    #[test]
    fn synth_untouched_and_loss_decreases_in_text_phase() {
        let (mut backbone, synth) = setup();
        let synth_before = synth.content_hash();
        let text = text_items(&backbone);
        let opts = BackboneTrainOpts {
            lr: 2e-3,
            batch: 4,
            ..BackboneTrainOpts::default()
        };
        let rng = seeded_stream(0, "train");
        let log = train_text_phase(&mut backbone, &synth, &text, 60, &opts, &rng).unwrap();
        assert_eq!(synth.content_hash(), synth_before);
        let head = crate::asr::train::median(&log.curve[..10]);
        let tail = crate::asr::train::median(&log.curve[log.curve.len() - 10..]);
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn dual_phase_composition_matches_ratio() {
        let (mut backbone, synth) = setup();
        let text = text_items(&backbone);
        let speech = speech_items(&backbone);
        let curriculum = Curriculum {
            phase1_steps: 0,
            phase2_steps: 5,
            mix_ratio: 0.5,
        };
        let opts = BackboneTrainOpts {
            batch: 8,
            ..BackboneTrainOpts::default()
        };
        let rng = seeded_stream(0, "train");
        let log = train_dual_phase(&mut backbone, Some(&synth), &text, &speech, &curriculum, &opts, &rng).unwrap();
        for &(t, s) in &log.composition {
            assert_eq!((t, s), (4, 4));
        }
    }

    #[test]
    fn ratio_zero_is_pure_speech_and_needs_no_synth() {
        let (mut backbone, _) = setup();
        let speech = speech_items(&backbone);
        let curriculum = Curriculum {
            phase1_steps: 0,
            phase2_steps: 3,
            mix_ratio: 0.0,
        };
        let rng = seeded_stream(0, "train");
        let log = train_dual_phase(
            &mut backbone,
            None,
            &[],
            &speech,
            &curriculum,
            &BackboneTrainOpts::default(),
            &rng,
        )
        .unwrap();
        for &(t, s) in &log.composition {
            assert_eq!(t, 0);
            assert_eq!(s, 8);
        }
    }

    #[test]
    fn invalid_ratio_is_error() {
        let (mut backbone, synth) = setup();
        let text = text_items(&backbone);
        let speech = speech_items(&backbone);
        let curriculum = Curriculum {
            phase1_steps: 0,
            phase2_steps: 1,
            mix_ratio: 1.5,
        };
        let rng = seeded_stream(0, "train");
        assert!(train_dual_phase(
            &mut backbone,
            Some(&synth),
            &text,
            &speech,
            &curriculum,
            &BackboneTrainOpts::default(),
            &rng
        )
        .is_err());
    }
}
