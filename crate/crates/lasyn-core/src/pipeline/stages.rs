use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::{load_verified, save_checkpoint};
use super::config::{ExperimentConfig, Metric, Mode};
use super::report::{Report, ReportRow, SeedReport};
use crate::asr::{
    encode_speech, pretrain_asr, split_pretrained, AsrConfig, AsrModel, LatentSeq, SplitModel,
    TokenVocab, TrainOpts,
};
use crate::backbone::{
    train_dual_phase_cached, train_text_phase_cached, Backbone, BackboneTrainOpts, Curriculum,
    SpeechExample, SynthCache, Synthesizer, TaskTag, TextExample,
};
use crate::corpus::{
    gen_corpus, load_split, toy_grammar, toy_lexicon, write_corpus, CorpusParams, CorpusSet,
    Utterance,
};
use crate::diffusion::{
    global_std, train_autoencoder, train_denoiser, AutoencConfig, AutoencTrainOpts, DenoiserConfig,
    DiffusionSynth, DiffusionTrainOpts, LatentNorm, LatentTextPair, LengthPolicy, NoiseSchedule,
    SampleOpts,
};
use crate::frontend::{logmel, MelConfig, SpecAugmentConfig};
use crate::labels::{parse_frame, serialize_frame, Annotation, SemanticFrame};
use crate::metrics::{corpus_wer, em_metrics, slu_metrics};
use crate::nn::{hash_hex, seeded_stream, ParamSet};
use crate::synth::{align_fixed, train_fixed, FixedProjSynth, FixedSynthConfig, FixedTrainOpts};
use crate::{Error, Result};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Pretrain,
    Synth,
    Phase1,
    Phase2,
    Eval,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Pretrain => "pretrain",
            Stage::Synth => "synth",
            Stage::Phase1 => "phase1",
            Stage::Phase2 => "phase2",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Ok(match s {
            "data" => Stage::Data,
            "pretrain" => Stage::Pretrain,
            "synth" => Stage::Synth,
            "phase1" => Stage::Phase1,
            "phase2" => Stage::Phase2,
            "eval" => Stage::Eval,
            other => return Err(Error::Invalid(format!("unknown stage `{other}`"))),
        })
    }
}

fn mel_config(cfg: &ExperimentConfig) -> MelConfig {
    MelConfig {
        sample_rate: 16_000,
        window_ms: cfg.mel_window_ms,
        hop_ms: cfg.mel_hop_ms,
        mel_bins: cfg.mel_bins,
        log_floor: cfg.mel_log_floor,
    }
}

fn asr_config(cfg: &ExperimentConfig, vocab_len: usize) -> AsrConfig {
    AsrConfig {
        mel_bins: cfg.mel_bins,
        width: cfg.model_width,
        heads: cfg.model_heads,
        blocks_low: cfg.model_blocks_low,
        blocks_high: cfg.model_blocks_high,
        ffn_mult: cfg.model_ffn_mult,
        head: cfg.model_head,
        dec_blocks: cfg.model_dec_blocks,
        joint_dim: cfg.model_joint_dim,
        vocab: vocab_len,
    }
}

/// Base vocabulary used for pre-training: every lexicon word.
pub fn base_vocab() -> TokenVocab {
    TokenVocab::build(toy_lexicon().words().cloned())
}

/// Tokens the backbone adds on top of the pre-training vocabulary: task
/// tags, serialization meta tokens, intent labels, and slot types.
pub fn backbone_extra_tokens() -> Vec<String> {
    let grammar = toy_grammar();
    let mut extra: Vec<String> = TaskTag::all().iter().map(|t| t.token().to_string()).collect();
    extra.push(crate::labels::TOK_INTENT.to_string());
    extra.push(crate::labels::TOK_OPEN.to_string());
    extra.push(crate::labels::TOK_CLOSE.to_string());
    for t in &grammar.templates {
        extra.push(t.intent.clone());
    }
    for name in grammar.slots.keys() {
        extra.push(name.clone());
    }
    extra.sort();
    extra.dedup();
    extra
}

fn multi_prefix_hash(params: &ParamSet<f32>, prefixes: &[&str]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in prefixes {
        h.update(params.prefix_hash(p));
    }
    hash_hex(&h.finalize().into())
}

/// Artifact paths inside one seed directory.
struct SeedPaths {
    dir: PathBuf,
}

impl SeedPaths {
    fn data(&self) -> PathBuf {
        self.dir.join("data")
    }

    fn ckpt(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.ckpt"))
    }

    fn stage_artifact(&self, stage: Stage, cfg: &ExperimentConfig) -> PathBuf {
        match stage {
            Stage::Data => self.data().join("train.jsonl"),
            Stage::Pretrain => self.ckpt("asr"),
            Stage::Synth => match cfg.mode {
                Mode::LasynDiffusion => self.ckpt("denoiser"),
                Mode::Baseline => self.ckpt("asr"),
                _ => self.ckpt("synth"),
            },
            Stage::Phase1 => self.ckpt("backbone_p1"),
            Stage::Phase2 => self.ckpt("backbone_p2"),
            Stage::Eval => self.dir.join("records.jsonl"),
        }
    }
}

/// With `--resume`, a later artifact must not exist without its upstream.
fn check_resume_consistency(paths: &SeedPaths, cfg: &ExperimentConfig) -> Result<()> {
    let order = [Stage::Data, Stage::Pretrain, Stage::Synth, Stage::Phase1, Stage::Phase2];
    for i in (1..order.len()).rev() {
        if paths.stage_artifact(order[i], cfg).exists() {
            for upstream in &order[..i] {
                if !paths.stage_artifact(*upstream, cfg).exists() {
                    return Err(Error::MissingStage(upstream.name().to_string()));
                }
            }
            break;
        }
    }
    Ok(())
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    subset: Option<&'a str>,
    seed: u64,
    paths: SeedPaths,
    resume: bool,
    report: SeedReport,
}

impl<'a> SeedRun<'a> {
    fn record_time(&mut self, stage: Stage, start: Instant) {
        self.report
            .wall_ms
            .insert(stage.name().to_string(), start.elapsed().as_millis() as u64);
    }

    fn hash(&mut self, key: &str, value: String) {
        self.report.component_hashes.insert(key.to_string(), value);
    }

    // ---- data ----

    fn stage_data(&mut self) -> Result<CorpusSet> {
        let start = Instant::now();
        let dir = self.paths.data();
        let manifest = dir.join("train.jsonl");
        if !(self.resume && manifest.exists()) {
            let grammar = toy_grammar();
            let lexicon = toy_lexicon();
            let params = CorpusParams {
                text_pool: self.cfg.corpus_text_pool,
                seen_speakers: self.cfg.corpus_seen_speakers,
                heldout_speakers: self.cfg.corpus_heldout_speakers,
                noise_clean: self.cfg.corpus_noise_clean,
                noise_other: self.cfg.corpus_noise_other,
                reserved_test: self.cfg.corpus_reserved_test,
            };
            let rng = seeded_stream(self.seed, "corpus");
            let corpus = gen_corpus(
                &grammar,
                &lexicon,
                self.cfg.corpus_paired,
                self.cfg.corpus_ratios,
                &params,
                &rng,
            )?;
            std::fs::create_dir_all(&dir)?;
            write_corpus(&corpus, &dir)?;
        }
        // Always read back from disk so fresh and resumed runs see
        // bit-identical (quantized) audio.
        let corpus = CorpusSet {
            train: load_split(&dir, "train")?,
            dev: load_split(&dir, "dev")?,
            test_clean: load_split(&dir, "test_clean")?,
            test_other: load_split(&dir, "test_other")?,
            text_pool: load_split(&dir, "text_pool")?,
            oov_warnings: 0,
        };
        self.record_time(Stage::Data, start);
        Ok(corpus)
    }

    // ---- pretrain ----

    fn stage_pretrain(&mut self, corpus: &CorpusSet, vocab: &TokenVocab) -> Result<SplitModel> {
        let start = Instant::now();
        let acfg = asr_config(self.cfg, vocab.len());
        let path = self.paths.ckpt("asr");
        let params = if self.resume && path.exists() {
            load_verified(&path, "asr", &self.cfg.hash(), false)?.0
        } else {
            let opts = TrainOpts {
                lr: self.cfg.pretrain_lr,
                epochs: self.cfg.pretrain_epochs,
                batch: self.cfg.pretrain_batch,
                spec_augment: self.cfg.pretrain_specaugment.then(|| SpecAugmentConfig {
                    time_masks: self.cfg.pretrain_sa_time_masks,
                    time_width: self.cfg.pretrain_sa_time_width,
                    freq_masks: self.cfg.pretrain_sa_freq_masks,
                    freq_width: self.cfg.pretrain_sa_freq_width,
                }),
                grad_clip: 5.0,
            };
            let rng = seeded_stream(self.seed, "pretrain");
            let (model, curve) =
                pretrain_asr(&acfg, vocab, &corpus.train, &mel_config(self.cfg), &opts, &rng)?;
            save_checkpoint(&path, "asr", &self.cfg.hash(), &model.params)?;
            self.report.curves.insert("pretrain".into(), curve);
            model.params
        };
        let model = AsrModel { cfg: acfg, params };
        let tap_name = match self.cfg.tap() {
            crate::asr::TapPoint::Ms40 => "40ms",
            crate::asr::TapPoint::Ms80 => "80ms",
        };
        let split = split_pretrained(&model, tap_name)?;
        let enc_prefixes = split.cfg.encoder_prefixes(split.tap);
        self.hash("speech_encoder_post_pretrain", multi_prefix_hash(&split.params, &enc_prefixes));
        self.record_time(Stage::Pretrain, start);
        Ok(split)
    }

    // ---- synthesizer ----

    fn synth_text_corpus<'c>(&self, corpus: &'c CorpusSet) -> &'c [Utterance] {
        match self.cfg.mode {
            // Acoustic augmentation draws no extra textual content: the text
            // side is exactly the paired training transcripts.
            Mode::AcousticAug => &corpus.train,
            _ => &corpus.text_pool,
        }
    }

    fn stage_synth(&mut self, corpus: &CorpusSet, split: &SplitModel, vocab: &TokenVocab) -> Result<Option<Synthesizer>> {
        let start = Instant::now();
        let result = match self.cfg.mode {
            Mode::Baseline => None,
            Mode::LasynDiffusion => Some(self.train_diffusion(corpus, split)?),
            _ => Some(self.train_fixed_synth(corpus, split, vocab)?),
        };
        self.record_time(Stage::Synth, start);
        Ok(result)
    }

    fn train_fixed_synth(&mut self, corpus: &CorpusSet, split: &SplitModel, vocab: &TokenVocab) -> Result<Synthesizer> {
        let scfg = FixedSynthConfig {
            filters: self.cfg.synth_filters,
            kernel: self.cfg.synth_kernel,
            layers: self.cfg.synth_layers,
            latent_width: self.cfg.model_width,
            upsample: self.cfg.synth_upsample(),
        };
        let path = self.paths.ckpt("synth");
        let params = if self.resume && path.exists() {
            load_verified(&path, "synth-fixed", &self.cfg.hash(), false)?.0
        } else {
            // Freeze the guiding side for the recognizability objective.
            let mut guiding = split.clone();
            for p in guiding.cfg.guiding_prefixes(guiding.tap) {
                guiding.params.freeze_prefix(p);
            }
            self.hash(
                "guiding_pre_synth",
                multi_prefix_hash(&guiding.params, &guiding.cfg.guiding_prefixes(guiding.tap)),
            );
            let mut rng = seeded_stream(self.seed, "synth");
            let synth = FixedProjSynth::init(scfg.clone(), &mut rng);
            let opts = FixedTrainOpts {
                lr: self.cfg.synth_lr,
                epochs: self.cfg.synth_epochs,
                batch: self.cfg.synth_batch,
                grad_clip: 5.0,
            };
            // Geometric pre-alignment on the paired split, then the
            // recognizability objective on the text corpus.
            let synth = if self.cfg.synth_align_epochs > 0 {
                let mel = mel_config(self.cfg);
                let mut paired = Vec::with_capacity(corpus.train.len());
                for utt in &corpus.train {
                    let feats = logmel(utt.samples.as_ref().expect("paired audio"), &mel)?;
                    paired.push((utt.phonemes.clone(), encode_speech(&feats, split)?.data));
                }
                let align_opts = FixedTrainOpts {
                    epochs: self.cfg.synth_align_epochs,
                    ..opts.clone()
                };
                let (synth, curve) = align_fixed(synth, &paired, &align_opts, &rng)?;
                self.report.curves.insert("synth_align".into(), curve);
                synth
            } else {
                synth
            };
            let text = self.synth_text_corpus(corpus);
            let (synth, curve) = train_fixed(synth, &guiding, vocab, text, &opts, &rng)?;
            self.hash(
                "guiding_post_synth",
                multi_prefix_hash(&guiding.params, &guiding.cfg.guiding_prefixes(guiding.tap)),
            );
            self.report.curves.insert("synth".into(), curve);
            save_checkpoint(&path, "synth-fixed", &self.cfg.hash(), &synth.params)?;
            synth.params
        };
        let mut synth = Synthesizer::Fixed(FixedProjSynth { cfg: scfg, params });
        synth.freeze();
        self.hash("synthesizer_post_synth", hash_hex(&synth.content_hash()));
        Ok(synth)
    }

    fn train_diffusion(&mut self, corpus: &CorpusSet, split: &SplitModel) -> Result<Synthesizer> {
        let mel = mel_config(self.cfg);
        // Latent-text pairs from the frozen speech latent encoder,
        // normalized per dimension before compression.
        let mut latents = Vec::with_capacity(corpus.train.len());
        for utt in &corpus.train {
            let feats = logmel(utt.samples.as_ref().expect("paired audio"), &mel)?;
            latents.push(encode_speech(&feats, split)?);
        }
        let norm = LatentNorm::fit(&latents)?;
        for l in latents.iter_mut() {
            l.data = norm.normalize(&l.data);
        }

        let ae_cfg = AutoencConfig::for_width(self.cfg.model_width);
        let ae_path = self.paths.ckpt("autoenc");
        let ae_params = if self.resume && ae_path.exists() {
            load_verified(&ae_path, "autoencoder", &self.cfg.hash(), false)?.0
        } else {
            let opts = AutoencTrainOpts {
                lr: self.cfg.diffusion_ae_lr,
                epochs: self.cfg.diffusion_ae_epochs,
                batch: self.cfg.diffusion_batch,
            };
            let rng = seeded_stream(self.seed, "autoenc");
            let (ae, curve) = train_autoencoder(&ae_cfg, &latents, &opts, &rng)?;
            self.report.curves.insert("autoenc".into(), curve);
            save_checkpoint(&ae_path, "autoencoder", &self.cfg.hash(), &ae.params)?;
            ae.params
        };
        let mut autoenc = crate::diffusion::LatentAutoencoder { cfg: ae_cfg, params: ae_params };
        autoenc.params.freeze_prefix("");
        self.hash("autoencoder_pre_denoiser", hash_hex(&autoenc.params.content_hash()));

        let schedule = NoiseSchedule::for_sigma_data(self.cfg.diffusion_sigma_data);
        let dn_cfg = DenoiserConfig {
            channels: self.cfg.diffusion_channels,
            input_width: autoenc.cfg.compressed,
            heads: self.cfg.diffusion_heads,
            dropout: self.cfg.diffusion_dropout,
            levels: self.cfg.diffusion_levels,
            attn_factors: self.cfg.diffusion_attn_factors.clone(),
            text_convs: self.cfg.diffusion_text_convs,
            text_blocks: self.cfg.diffusion_text_blocks,
            p_uncond: self.cfg.diffusion_p_uncond,
        };

        // Compressed latents rescaled so their global spread matches the
        // schedule's sigma_data.
        let compressed: Vec<_> = latents.iter().map(|l| autoenc.encode(&l.data)).collect();
        let comp_scale = self.cfg.diffusion_sigma_data as f32 / global_std(&compressed);
        let pairs: Vec<LatentTextPair> = corpus
            .train
            .iter()
            .zip(&compressed)
            .map(|(utt, c)| LatentTextPair {
                latent: c.map(|v| v * comp_scale),
                text: utt.phonemes.clone(),
            })
            .collect();

        let dn_path = self.paths.ckpt("denoiser");
        let dn_params = if self.resume && dn_path.exists() {
            load_verified(&dn_path, "denoiser", &self.cfg.hash(), false)?.0
        } else {
            let enc_prefixes = split.cfg.encoder_prefixes(split.tap);
            self.hash("encoder_pre_denoiser", multi_prefix_hash(&split.params, &enc_prefixes));
            let opts = DiffusionTrainOpts {
                lr: self.cfg.diffusion_lr,
                steps: self.cfg.diffusion_train_steps,
                batch: self.cfg.diffusion_batch,
                grad_clip: 5.0,
            };
            let rng = seeded_stream(self.seed, "diffusion");
            let (dn, curve) = train_denoiser(&dn_cfg, &schedule, &pairs, &opts, &rng)?;
            self.hash("encoder_post_denoiser", multi_prefix_hash(&split.params, &enc_prefixes));
            self.hash("autoencoder_post_denoiser", hash_hex(&autoenc.params.content_hash()));
            self.report.curves.insert("denoiser".into(), curve);
            save_checkpoint(&dn_path, "denoiser", &self.cfg.hash(), &dn.params)?;
            dn.params
        };
        let denoiser = crate::diffusion::DiffusionDenoiser {
            cfg: dn_cfg,
            schedule,
            params: dn_params,
        };

        let length = LengthPolicy::fit(
            &latents
                .iter()
                .zip(&corpus.train)
                .map(|(l, u)| (l.frames(), u.phonemes.len()))
                .collect::<Vec<_>>(),
        )?;

        let mut synth = Synthesizer::Diffusion(
            Box::new(DiffusionSynth {
                autoenc,
                denoiser,
                norm,
                comp_scale,
                length,
                trained: true,
            }),
            SampleOpts {
                steps: self.cfg.diffusion_steps,
                guidance: self.cfg.diffusion_guidance,
            },
        );
        synth.freeze();
        self.hash("synthesizer_post_synth", hash_hex(&synth.content_hash()));
        Ok(synth)
    }

    // ---- backbone ----

    fn slu_targets(&self, frame: &SemanticFrame, vocab: &TokenVocab, tag: TaskTag) -> Result<Vec<usize>> {
        let tokens = serialize_frame(&Annotation::Frame(frame.clone()))?;
        let mut out = vec![vocab
            .id(tag.token())
            .ok_or_else(|| Error::Invalid(format!("vocab lacks {}", tag.token())))?];
        out.extend(vocab.encode(&tokens));
        Ok(out)
    }

    fn ner_targets(&self, frame: &SemanticFrame, vocab: &TokenVocab) -> Result<Vec<usize>> {
        let mut tokens = vec![TaskTag::Ner.token().to_string()];
        for (ty, words) in &frame.slots {
            tokens.push(crate::labels::TOK_OPEN.to_string());
            tokens.push(ty.clone());
            tokens.extend(words.iter().cloned());
            tokens.push(crate::labels::TOK_CLOSE.to_string());
        }
        Ok(vocab.encode(&tokens))
    }

    fn ie_targets(&self, frame: &SemanticFrame, vocab: &TokenVocab) -> Result<Vec<usize>> {
        let tokens = vec![
            TaskTag::Ie.token().to_string(),
            crate::labels::TOK_INTENT.to_string(),
            frame.intent.clone(),
        ];
        Ok(vocab.encode(&tokens))
    }

    fn subset_allows(&self, task: TaskTag) -> bool {
        match (self.cfg.mode, self.subset) {
            (Mode::TaskSubset, Some("nlu")) => task == TaskTag::Nlu,
            (Mode::TaskSubset, Some("ner")) => task == TaskTag::Ner,
            (Mode::TaskSubset, Some("ie")) => task == TaskTag::Ie,
            _ => true,
        }
    }

    fn build_text_examples(&self, corpus: &CorpusSet, vocab: &TokenVocab) -> Result<Vec<TextExample>> {
        let mut out = Vec::new();
        if self.cfg.mode == Mode::Baseline {
            return Ok(out);
        }
        let pool = self.synth_text_corpus(corpus);
        let mlm_tag = vocab
            .id(TaskTag::Mlm.token())
            .ok_or_else(|| Error::Invalid("vocab lacks <mlm>".into()))?;

        for utt in pool {
            if self.cfg.mode == Mode::MlmUnlabeled {
                // Unlabeled: annotations stripped, masked phoneme input,
                // predict the word sequence.
                let mut targets = vec![mlm_tag];
                targets.extend(vocab.encode(&utt.words));
                out.push(TextExample {
                    tag: TaskTag::Mlm,
                    phonemes: utt.phonemes.clone(),
                    targets,
                    mask_ratio: Some(self.cfg.backbone_mask_ratio),
                });
                continue;
            }

            if self.cfg.wants(Metric::Wer) {
                out.push(TextExample {
                    tag: TaskTag::Asr,
                    phonemes: utt.phonemes.clone(),
                    targets: vocab.encode(&utt.words),
                    mask_ratio: None,
                });
            }
            if self.cfg.wants_slu() {
                let frame = utt
                    .frame
                    .as_ref()
                    .and_then(|a| a.as_frame())
                    .ok_or_else(|| Error::Invalid(format!("utterance {} lacks a frame", utt.id)))?;
                if self.subset_allows(TaskTag::Nlu) {
                    // The text-side frame task shares the frame prompt token:
                    // its output format is the SLU serialization, so the
                    // decoder's text knowledge carries over to speech input.
                    out.push(TextExample {
                        tag: TaskTag::Nlu,
                        phonemes: utt.phonemes.clone(),
                        targets: self.slu_targets(frame, vocab, TaskTag::Slu)?,
                        mask_ratio: None,
                    });
                }
                if self.cfg.mode != Mode::AcousticAug {
                    if self.subset_allows(TaskTag::Ner) {
                        out.push(TextExample {
                            tag: TaskTag::Ner,
                            phonemes: utt.phonemes.clone(),
                            targets: self.ner_targets(frame, vocab)?,
                            mask_ratio: None,
                        });
                    }
                    if self.subset_allows(TaskTag::Ie) {
                        out.push(TextExample {
                            tag: TaskTag::Ie,
                            phonemes: utt.phonemes.clone(),
                            targets: self.ie_targets(frame, vocab)?,
                            mask_ratio: None,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    fn build_speech_examples(
        &self,
        corpus: &CorpusSet,
        split: &SplitModel,
        vocab: &TokenVocab,
    ) -> Result<Vec<SpeechExample>> {
        let mel = mel_config(self.cfg);
        let mut out = Vec::new();
        for utt in &corpus.train {
            let feats = logmel(utt.samples.as_ref().expect("paired audio"), &mel)?;
            let latents = encode_speech(&feats, split)?;
            if self.cfg.wants(Metric::Wer) {
                out.push(SpeechExample {
                    tag: TaskTag::Asr,
                    latents: latents.clone(),
                    targets: vocab.encode(&utt.words),
                });
            }
            if self.cfg.wants_slu() {
                let frame = utt
                    .frame
                    .as_ref()
                    .and_then(|a| a.as_frame())
                    .ok_or_else(|| Error::Invalid(format!("utterance {} lacks a frame", utt.id)))?;
                out.push(SpeechExample {
                    tag: TaskTag::Slu,
                    latents,
                    targets: self.slu_targets(frame, vocab, TaskTag::Slu)?,
                });
            }
        }
        Ok(out)
    }

    fn stage_backbone(
        &mut self,
        corpus: &CorpusSet,
        split: &SplitModel,
        synth: Option<&Synthesizer>,
        vocab: &TokenVocab,
    ) -> Result<Backbone> {
        let mut rng = seeded_stream(self.seed, "backbone-init");
        let mut backbone = Backbone::from_guiding(split, vocab, &backbone_extra_tokens(), true, &mut rng)?;

        let text = self.build_text_examples(corpus, &backbone.vocab)?;
        let speech = self.build_speech_examples(corpus, split, &backbone.vocab)?;
        let opts = BackboneTrainOpts {
            lr: self.cfg.backbone_lr,
            batch: self.cfg.backbone_batch,
            grad_clip: 5.0,
            cache_pseudo: self.cfg.diffusion_cache && matches!(self.cfg.mode, Mode::LasynDiffusion),
        };
        // Baseline has no text data: phase 1 is empty and phase 2 is the
        // frozen-encoder continuation on speech alone.
        let (phase1, mix_ratio) = if self.cfg.mode == Mode::Baseline {
            (0, 0.0)
        } else {
            (self.cfg.curriculum_phase1, self.cfg.curriculum_mix_ratio)
        };

        if let Some(s) = synth {
            self.hash("synthesizer_pre_backbone", hash_hex(&s.content_hash()));
        }
        let mut cache = SynthCache::new();
        let cache_on = opts.cache_pseudo;

        // Phase 1 (text only).
        let start = Instant::now();
        let p1_path = self.paths.ckpt("backbone_p1");
        if self.resume && p1_path.exists() {
            backbone.params = load_verified(&p1_path, "backbone", &self.cfg.hash(), false)?.0;
        } else {
            if phase1 > 0 {
                let s = synth.ok_or_else(|| Error::Invalid("text phase needs a synthesizer".into()))?;
                let rng = seeded_stream(self.seed, "phase1");
                let log = train_text_phase_cached(
                    &mut backbone,
                    s,
                    &text,
                    phase1,
                    &opts,
                    &rng,
                    cache_on.then_some(&mut cache),
                )?;
                self.report.curves.insert("phase1".into(), log.curve);
            }
            save_checkpoint(&p1_path, "backbone", &self.cfg.hash(), &backbone.params)?;
        }
        self.record_time(Stage::Phase1, start);

        // Phase 2 (mixed).
        let start = Instant::now();
        let p2_path = self.paths.ckpt("backbone_p2");
        if self.resume && p2_path.exists() {
            backbone.params = load_verified(&p2_path, "backbone", &self.cfg.hash(), false)?.0;
        } else {
            let curriculum = Curriculum {
                phase1_steps: phase1,
                phase2_steps: self.cfg.curriculum_phase2,
                mix_ratio,
            };
            let rng = seeded_stream(self.seed, "phase2");
            let log = train_dual_phase_cached(
                &mut backbone,
                synth,
                &text,
                &speech,
                &curriculum,
                &opts,
                &rng,
                cache_on.then_some(&mut cache),
            )?;
            self.report.curves.insert("phase2".into(), log.curve);
            save_checkpoint(&p2_path, "backbone", &self.cfg.hash(), &backbone.params)?;
        }
        self.record_time(Stage::Phase2, start);

        if let Some(s) = synth {
            self.hash("synthesizer_post_backbone", hash_hex(&s.content_hash()));
        }
        let enc_prefixes = split.cfg.encoder_prefixes(split.tap);
        self.hash("speech_encoder_post_backbone", multi_prefix_hash(&split.params, &enc_prefixes));
        Ok(backbone)
    }

    // ---- eval ----

    fn eval_split(
        &mut self,
        name: &str,
        utts: &[Utterance],
        split: &SplitModel,
        backbone: &Backbone,
        reserved: &[String],
    ) -> Result<()> {
        let mel = mel_config(self.cfg);
        let mut latents: Vec<LatentSeq> = Vec::with_capacity(utts.len());
        for utt in utts {
            let feats = logmel(utt.samples.as_ref().expect("test audio"), &mel)?;
            latents.push(encode_speech(&feats, split)?);
        }

        if self.cfg.wants(Metric::Wer) {
            let mut pairs = Vec::with_capacity(utts.len());
            for (utt, lat) in utts.iter().zip(&latents) {
                let hyp_ids = backbone.decode_asr(lat)?;
                pairs.push((backbone.vocab.decode(&hyp_ids), utt.words.clone()));
            }
            let wer = corpus_wer(&pairs)?;
            self.report.metrics.insert(format!("wer_{name}"), wer);
        }

        if self.cfg.wants_slu() {
            let mut hyp_frames = Vec::with_capacity(utts.len());
            let mut ref_frames = Vec::with_capacity(utts.len());
            for (utt, lat) in utts.iter().zip(&latents) {
                let re = utt
                    .frame
                    .as_ref()
                    .and_then(|a| a.as_frame())
                    .ok_or_else(|| Error::Invalid(format!("utterance {} lacks a frame", utt.id)))?
                    .clone();
                let hyp_ids = backbone.decode_tagged(lat, TaskTag::Slu)?;
                let tokens = backbone.vocab.decode(&hyp_ids);
                let hyp = match parse_frame(&tokens) {
                    Ok(Annotation::Frame(f)) => Some(f),
                    _ => None,
                };
                hyp_frames.push(hyp);
                ref_frames.push(re);
            }

            let flat_hyps: Vec<SemanticFrame> = hyp_frames
                .iter()
                .map(|h| h.clone().unwrap_or_else(|| SemanticFrame::new("<invalid>")))
                .collect();
            if self.cfg.wants(Metric::Ic) || self.cfg.wants(Metric::SluF1) {
                let scores = slu_metrics(&flat_hyps, &ref_frames)?;
                if self.cfg.wants(Metric::Ic) {
                    self.report.metrics.insert(format!("ic_{name}"), scores.ic_accuracy);
                }
                if self.cfg.wants(Metric::SluF1) {
                    self.report.metrics.insert(format!("slu_f1_{name}"), scores.slu_f1);
                }
            }
            if self.cfg.wants(Metric::Em) || self.cfg.wants(Metric::EmTree) {
                let hyp_trees: Vec<_> = hyp_frames.iter().map(|h| h.as_ref().map(|f| f.to_tree())).collect();
                let ref_trees: Vec<_> = ref_frames.iter().map(|f| f.to_tree()).collect();
                let scores = em_metrics(&hyp_trees, &ref_trees)?;
                if self.cfg.wants(Metric::Em) {
                    self.report.metrics.insert(format!("em_{name}"), scores.em);
                }
                if self.cfg.wants(Metric::EmTree) {
                    self.report.metrics.insert(format!("em_tree_{name}"), scores.em_tree);
                }
            }

            // Text-pool-only slot values: how many reserved-value slots in
            // the references were predicted exactly.
            let mut total = 0usize;
            let mut hits = 0usize;
            for (hyp, re) in flat_hyps.iter().zip(&ref_frames) {
                for (ty, words) in &re.slots {
                    if words.iter().any(|w| reserved.contains(w)) {
                        total += 1;
                        if hyp.slots.iter().any(|(hty, hw)| hty == ty && hw == words) {
                            hits += 1;
                        }
                    }
                }
            }
            self.report.metrics.insert(format!("novel_total_{name}"), total as f64);
            self.report.metrics.insert(format!("novel_hits_{name}"), hits as f64);
        }
        Ok(())
    }

    fn stage_eval(&mut self, corpus: &CorpusSet, split: &SplitModel, backbone: &Backbone) -> Result<()> {
        let start = Instant::now();
        let grammar = toy_grammar();
        let reserved: Vec<String> = grammar.reserved_values().into_iter().map(|(_, v)| v).collect();
        let clean = corpus.test_clean.clone();
        let other = corpus.test_other.clone();
        self.eval_split("clean", &clean, split, backbone, &reserved)?;
        self.eval_split("other", &other, split, backbone, &reserved)?;
        self.record_time(Stage::Eval, start);
        Ok(())
    }
}

/// Run every stage for one seed, honoring `--resume` and stopping after
/// `halt_after` when set (used to exercise resumption).
pub fn run_seed(
    cfg: &ExperimentConfig,
    subset: Option<&str>,
    seed: u64,
    dir: &Path,
    resume: bool,
    halt_after: Option<Stage>,
) -> Result<SeedReport> {
    std::fs::create_dir_all(dir)?;
    let paths = SeedPaths { dir: dir.to_path_buf() };
    if resume {
        check_resume_consistency(&paths, cfg)?;
    }
    let mut run = SeedRun {
        cfg,
        subset,
        seed,
        paths,
        resume,
        report: SeedReport {
            seed,
            ..SeedReport::default()
        },
    };
    let vocab = base_vocab();

    let corpus = run.stage_data()?;
    if halt_after == Some(Stage::Data) {
        return Ok(run.report);
    }
    let split = run.stage_pretrain(&corpus, &vocab)?;
    if halt_after == Some(Stage::Pretrain) {
        return Ok(run.report);
    }
    let synth = run.stage_synth(&corpus, &split, &vocab)?;
    if halt_after == Some(Stage::Synth) {
        return Ok(run.report);
    }
    let backbone = run.stage_backbone(&corpus, &split, synth.as_ref(), &vocab)?;
    if halt_after == Some(Stage::Phase1) || halt_after == Some(Stage::Phase2) {
        return Ok(run.report);
    }
    run.stage_eval(&corpus, &split, &backbone)?;
    Ok(run.report)
}

/// Execute the full pipeline: all subsets (for `task-subset` mode), all
/// seeds, sequentially or in parallel threads.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<Report> {
    cfg.validate()?;
    if cfg.mode == Mode::TaskSubset && !cfg.wants_slu() {
        return Err(Error::Config("task-subset mode needs SLU metrics".into()));
    }

    let subsets: Vec<Option<&str>> = match cfg.mode {
        Mode::TaskSubset => vec![Some("nlu"), Some("ner"), Some("ie"), Some("all")],
        _ => vec![None],
    };

    let mut rows = Vec::new();
    for subset in subsets {
        let label = match subset {
            Some(s) => format!("{}[{s}]", cfg.mode.name()),
            None => cfg.mode.name().to_string(),
        };
        let subset_dir = match subset {
            Some(s) => out.join(s),
            None => out.to_path_buf(),
        };

        let seeds = if cfg.run_parallel_seeds {
            std::thread::scope(|scope| {
                let handles: Vec<_> = cfg
                    .seeds
                    .iter()
                    .map(|&seed| {
                        let dir = subset_dir.join(format!("seed{seed}"));
                        scope.spawn(move || run_seed(cfg, subset, seed, &dir, resume, None))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("seed thread panicked"))
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            let mut seeds = Vec::new();
            for &seed in &cfg.seeds {
                let dir = subset_dir.join(format!("seed{seed}"));
                seeds.push(run_seed(cfg, subset, seed, &dir, resume, None)?);
            }
            seeds
        };
        rows.push(ReportRow { label, seeds });
    }

    let report = Report {
        config_echo: cfg.render(),
        rows,
    };
    super::report::emit_report(&report, &out.join("report"))?;
    Ok(report)
}

/// Collect metric medians keyed by name (convenience for assertions).
pub fn medians(row: &ReportRow) -> BTreeMap<String, f64> {
    row.metric_names()
        .into_iter()
        .filter_map(|m| row.median(&m).map(|v| (m, v)))
        .collect()
}
