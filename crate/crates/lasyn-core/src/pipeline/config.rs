use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::asr::{HeadKind, TapPoint};
use crate::{Error, Result};

/// Experiment mode; mirrors the system variants and ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    LasynFixed,
    LasynFixedLfr,
    LasynDiffusion,
    AcousticAug,
    MlmUnlabeled,
    TaskSubset,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        Ok(match s {
            "baseline" => Mode::Baseline,
            "lasyn-fixed" => Mode::LasynFixed,
            "lasyn-fixed-lfr" => Mode::LasynFixedLfr,
            "lasyn-diffusion" => Mode::LasynDiffusion,
            "acoustic-aug" => Mode::AcousticAug,
            "mlm-unlabeled" => Mode::MlmUnlabeled,
            "task-subset" => Mode::TaskSubset,
            other => return Err(Error::Config(format!("unknown mode `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::LasynFixed => "lasyn-fixed",
            Mode::LasynFixedLfr => "lasyn-fixed-lfr",
            Mode::LasynDiffusion => "lasyn-diffusion",
            Mode::AcousticAug => "acoustic-aug",
            Mode::MlmUnlabeled => "mlm-unlabeled",
            Mode::TaskSubset => "task-subset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Wer,
    Ic,
    SluF1,
    Em,
    EmTree,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Metric> {
        Ok(match s {
            "wer" => Metric::Wer,
            "ic" => Metric::Ic,
            "slu-f1" => Metric::SluF1,
            "em" => Metric::Em,
            "em-tree" => Metric::EmTree,
            other => return Err(Error::Config(format!("unknown metric `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Wer => "wer",
            Metric::Ic => "ic",
            Metric::SluF1 => "slu-f1",
            Metric::Em => "em",
            Metric::EmTree => "em-tree",
        }
    }
}

/// Full experiment configuration. Every field has a default; unknown keys
/// are rejected at parse time.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,

    pub corpus_paired: usize,
    pub corpus_ratios: (f64, f64, f64),
    pub corpus_text_pool: usize,
    pub corpus_seen_speakers: usize,
    pub corpus_heldout_speakers: usize,
    pub corpus_noise_clean: f64,
    pub corpus_noise_other: f64,
    pub corpus_reserved_test: usize,

    pub mel_bins: usize,
    pub mel_window_ms: usize,
    pub mel_hop_ms: usize,
    pub mel_log_floor: f64,

    pub model_width: usize,
    pub model_heads: usize,
    pub model_blocks_low: usize,
    pub model_blocks_high: usize,
    pub model_ffn_mult: usize,
    pub model_head: HeadKind,
    pub model_dec_blocks: usize,
    pub model_joint_dim: usize,
    pub model_tap: TapPoint,

    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_specaugment: bool,
    pub pretrain_sa_time_masks: usize,
    pub pretrain_sa_time_width: usize,
    pub pretrain_sa_freq_masks: usize,
    pub pretrain_sa_freq_width: usize,

    pub synth_filters: usize,
    pub synth_kernel: usize,
    pub synth_layers: usize,
    /// 0 selects automatically: 2 at the 40 ms tap, 1 at 80 ms.
    pub synth_upsample: usize,
    pub synth_align_epochs: usize,
    pub synth_lr: f64,
    pub synth_epochs: usize,
    pub synth_batch: usize,

    pub diffusion_channels: usize,
    pub diffusion_levels: usize,
    pub diffusion_heads: usize,
    pub diffusion_dropout: f64,
    pub diffusion_attn_factors: Vec<usize>,
    pub diffusion_text_convs: usize,
    pub diffusion_text_blocks: usize,
    pub diffusion_p_uncond: f64,
    pub diffusion_sigma_data: f64,
    pub diffusion_steps: usize,
    pub diffusion_guidance: f64,
    pub diffusion_train_steps: usize,
    pub diffusion_lr: f64,
    pub diffusion_batch: usize,
    pub diffusion_ae_epochs: usize,
    pub diffusion_ae_lr: f64,
    pub diffusion_cache: bool,

    pub backbone_lr: f64,
    pub backbone_batch: usize,
    pub backbone_mask_ratio: f64,

    pub curriculum_phase1: usize,
    pub curriculum_phase2: usize,
    pub curriculum_mix_ratio: f64,

    pub run_parallel_seeds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Baseline,
            seeds: vec![0, 1, 2],
            metrics: vec![Metric::Wer],

            corpus_paired: 200,
            corpus_ratios: (0.8, 0.1, 0.1),
            corpus_text_pool: 800,
            corpus_seen_speakers: 4,
            corpus_heldout_speakers: 2,
            corpus_noise_clean: 0.015,
            corpus_noise_other: 0.06,
            corpus_reserved_test: 4,

            mel_bins: 128,
            mel_window_ms: 20,
            mel_hop_ms: 10,
            mel_log_floor: -10.0,

            model_width: 256,
            model_heads: 4,
            model_blocks_low: 2,
            model_blocks_high: 2,
            model_ffn_mult: 4,
            model_head: HeadKind::Transducer,
            model_dec_blocks: 2,
            model_joint_dim: 128,
            model_tap: TapPoint::Ms40,

            pretrain_lr: 2e-3,
            pretrain_epochs: 12,
            pretrain_batch: 8,
            pretrain_specaugment: true,
            pretrain_sa_time_masks: 2,
            pretrain_sa_time_width: 16,
            pretrain_sa_freq_masks: 2,
            pretrain_sa_freq_width: 12,

            synth_filters: 512,
            synth_kernel: 5,
            synth_layers: 4,
            synth_upsample: 0,
            synth_align_epochs: 10,
            synth_lr: 2e-3,
            synth_epochs: 10,
            synth_batch: 8,

            diffusion_channels: 256,
            diffusion_levels: 4,
            diffusion_heads: 4,
            diffusion_dropout: 0.1,
            diffusion_attn_factors: vec![4, 2],
            diffusion_text_convs: 2,
            diffusion_text_blocks: 2,
            diffusion_p_uncond: 0.1,
            diffusion_sigma_data: 0.5,
            diffusion_steps: 18,
            diffusion_guidance: 2.0,
            diffusion_train_steps: 400,
            diffusion_lr: 1e-3,
            diffusion_batch: 8,
            diffusion_ae_epochs: 40,
            diffusion_ae_lr: 2e-3,
            diffusion_cache: false,

            backbone_lr: 1e-3,
            backbone_batch: 8,
            backbone_mask_ratio: 0.3,

            curriculum_phase1: 300,
            curriculum_phase2: 300,
            curriculum_mix_ratio: 0.5,

            run_parallel_seeds: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: expected true/false, got `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| parse_num(key, p))
        .collect()
}

impl ExperimentConfig {
    /// Parse the flat `section.key = value` format. Lines starting with `#`
    /// are comments. Unknown keys are errors (typo protection in sweeps).
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => self.mode = Mode::parse(v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "metrics" => {
                self.metrics = v
                    .split(',')
                    .map(|m| Metric::parse(m.trim()))
                    .collect::<Result<_>>()?;
            }
            "corpus.paired" => self.corpus_paired = parse_num(key, v)?,
            "corpus.ratios" => {
                let parts: Vec<f64> = parse_list(key, v)?;
                if parts.len() != 3 {
                    return Err(Error::Config("corpus.ratios needs three values".into()));
                }
                self.corpus_ratios = (parts[0], parts[1], parts[2]);
            }
            "corpus.text_pool" => self.corpus_text_pool = parse_num(key, v)?,
            "corpus.seen_speakers" => self.corpus_seen_speakers = parse_num(key, v)?,
            "corpus.heldout_speakers" => self.corpus_heldout_speakers = parse_num(key, v)?,
            "corpus.noise_clean" => self.corpus_noise_clean = parse_num(key, v)?,
            "corpus.noise_other" => self.corpus_noise_other = parse_num(key, v)?,
            "corpus.reserved_test" => self.corpus_reserved_test = parse_num(key, v)?,
            "mel.bins" => self.mel_bins = parse_num(key, v)?,
            "mel.window_ms" => self.mel_window_ms = parse_num(key, v)?,
            "mel.hop_ms" => self.mel_hop_ms = parse_num(key, v)?,
            "mel.log_floor" => self.mel_log_floor = parse_num(key, v)?,
            "model.width" => self.model_width = parse_num(key, v)?,
            "model.heads" => self.model_heads = parse_num(key, v)?,
            "model.blocks_low" => self.model_blocks_low = parse_num(key, v)?,
            "model.blocks_high" => self.model_blocks_high = parse_num(key, v)?,
            "model.ffn_mult" => self.model_ffn_mult = parse_num(key, v)?,
            "model.head" => {
                self.model_head = match v {
                    "transducer" => HeadKind::Transducer,
                    "aed" => HeadKind::Aed,
                    _ => return Err(Error::Config(format!("model.head: unknown `{v}`"))),
                }
            }
            "model.dec_blocks" => self.model_dec_blocks = parse_num(key, v)?,
            "model.joint_dim" => self.model_joint_dim = parse_num(key, v)?,
            "model.tap" => {
                self.model_tap = match v {
                    "40ms" => TapPoint::Ms40,
                    "80ms" => TapPoint::Ms80,
                    _ => return Err(Error::Config(format!("model.tap: unknown `{v}`"))),
                }
            }
            "pretrain.lr" => self.pretrain_lr = parse_num(key, v)?,
            "pretrain.epochs" => self.pretrain_epochs = parse_num(key, v)?,
            "pretrain.batch" => self.pretrain_batch = parse_num(key, v)?,
            "pretrain.specaugment" => self.pretrain_specaugment = parse_bool(key, v)?,
            "pretrain.sa_time_masks" => self.pretrain_sa_time_masks = parse_num(key, v)?,
            "pretrain.sa_time_width" => self.pretrain_sa_time_width = parse_num(key, v)?,
            "pretrain.sa_freq_masks" => self.pretrain_sa_freq_masks = parse_num(key, v)?,
            "pretrain.sa_freq_width" => self.pretrain_sa_freq_width = parse_num(key, v)?,
            "synth.filters" => self.synth_filters = parse_num(key, v)?,
            "synth.kernel" => self.synth_kernel = parse_num(key, v)?,
            "synth.layers" => self.synth_layers = parse_num(key, v)?,
            "synth.upsample" => self.synth_upsample = parse_num(key, v)?,
            "synth.align_epochs" => self.synth_align_epochs = parse_num(key, v)?,
            "synth.lr" => self.synth_lr = parse_num(key, v)?,
            "synth.epochs" => self.synth_epochs = parse_num(key, v)?,
            "synth.batch" => self.synth_batch = parse_num(key, v)?,
            "diffusion.channels" => self.diffusion_channels = parse_num(key, v)?,
            "diffusion.levels" => self.diffusion_levels = parse_num(key, v)?,
            "diffusion.heads" => self.diffusion_heads = parse_num(key, v)?,
            "diffusion.dropout" => self.diffusion_dropout = parse_num(key, v)?,
            "diffusion.attn_factors" => self.diffusion_attn_factors = parse_list(key, v)?,
            "diffusion.text_convs" => self.diffusion_text_convs = parse_num(key, v)?,
            "diffusion.text_blocks" => self.diffusion_text_blocks = parse_num(key, v)?,
            "diffusion.p_uncond" => self.diffusion_p_uncond = parse_num(key, v)?,
            "diffusion.sigma_data" => self.diffusion_sigma_data = parse_num(key, v)?,
            "diffusion.steps" => self.diffusion_steps = parse_num(key, v)?,
            "diffusion.guidance" => self.diffusion_guidance = parse_num(key, v)?,
            "diffusion.train_steps" => self.diffusion_train_steps = parse_num(key, v)?,
            "diffusion.lr" => self.diffusion_lr = parse_num(key, v)?,
            "diffusion.batch" => self.diffusion_batch = parse_num(key, v)?,
            "diffusion.ae_epochs" => self.diffusion_ae_epochs = parse_num(key, v)?,
            "diffusion.ae_lr" => self.diffusion_ae_lr = parse_num(key, v)?,
            "diffusion.cache" => self.diffusion_cache = parse_bool(key, v)?,
            "backbone.lr" => self.backbone_lr = parse_num(key, v)?,
            "backbone.batch" => self.backbone_batch = parse_num(key, v)?,
            "backbone.mask_ratio" => self.backbone_mask_ratio = parse_num(key, v)?,
            "curriculum.phase1_steps" => self.curriculum_phase1 = parse_num(key, v)?,
            "curriculum.phase2_steps" => self.curriculum_phase2 = parse_num(key, v)?,
            "curriculum.mix_ratio" => self.curriculum_mix_ratio = parse_num(key, v)?,
            "run.parallel_seeds" => self.run_parallel_seeds = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("metrics must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.curriculum_mix_ratio) {
            return Err(Error::Config("curriculum.mix_ratio outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Effective tap point: the LFR variant forces the 80 ms tap.
    pub fn tap(&self) -> TapPoint {
        if self.mode == Mode::LasynFixedLfr {
            TapPoint::Ms80
        } else {
            self.model_tap
        }
    }

    /// Effective synthesizer upsampling: one latent frame per phoneme at
    /// 80 ms, two at 40 ms, unless overridden.
    pub fn synth_upsample(&self) -> usize {
        if self.synth_upsample > 0 {
            self.synth_upsample
        } else {
            match self.tap() {
                TapPoint::Ms40 => 2,
                TapPoint::Ms80 => 1,
            }
        }
    }

    pub fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    /// Any SLU-style metric requested (drives SLU training and eval).
    pub fn wants_slu(&self) -> bool {
        self.wants(Metric::Ic) || self.wants(Metric::SluF1) || self.wants(Metric::Em) || self.wants(Metric::EmTree)
    }

    /// Canonical rendering: every field, fixed order. Also the hash input.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "metrics = {}",
            self.metrics.iter().map(|m| m.name().to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "corpus.paired = {}", self.corpus_paired);
        let _ = writeln!(
            s,
            "corpus.ratios = {},{},{}",
            self.corpus_ratios.0, self.corpus_ratios.1, self.corpus_ratios.2
        );
        let _ = writeln!(s, "corpus.text_pool = {}", self.corpus_text_pool);
        let _ = writeln!(s, "corpus.seen_speakers = {}", self.corpus_seen_speakers);
        let _ = writeln!(s, "corpus.heldout_speakers = {}", self.corpus_heldout_speakers);
        let _ = writeln!(s, "corpus.noise_clean = {}", self.corpus_noise_clean);
        let _ = writeln!(s, "corpus.noise_other = {}", self.corpus_noise_other);
        let _ = writeln!(s, "corpus.reserved_test = {}", self.corpus_reserved_test);
        let _ = writeln!(s, "mel.bins = {}", self.mel_bins);
        let _ = writeln!(s, "mel.window_ms = {}", self.mel_window_ms);
        let _ = writeln!(s, "mel.hop_ms = {}", self.mel_hop_ms);
        let _ = writeln!(s, "mel.log_floor = {}", self.mel_log_floor);
        let _ = writeln!(s, "model.width = {}", self.model_width);
        let _ = writeln!(s, "model.heads = {}", self.model_heads);
        let _ = writeln!(s, "model.blocks_low = {}", self.model_blocks_low);
        let _ = writeln!(s, "model.blocks_high = {}", self.model_blocks_high);
        let _ = writeln!(s, "model.ffn_mult = {}", self.model_ffn_mult);
        let _ = writeln!(
            s,
            "model.head = {}",
            match self.model_head {
                HeadKind::Transducer => "transducer",
                HeadKind::Aed => "aed",
            }
        );
        let _ = writeln!(s, "model.dec_blocks = {}", self.model_dec_blocks);
        let _ = writeln!(s, "model.joint_dim = {}", self.model_joint_dim);
        let _ = writeln!(
            s,
            "model.tap = {}",
            match self.model_tap {
                TapPoint::Ms40 => "40ms",
                TapPoint::Ms80 => "80ms",
            }
        );
        let _ = writeln!(s, "pretrain.lr = {}", self.pretrain_lr);
        let _ = writeln!(s, "pretrain.epochs = {}", self.pretrain_epochs);
        let _ = writeln!(s, "pretrain.batch = {}", self.pretrain_batch);
        let _ = writeln!(s, "pretrain.specaugment = {}", self.pretrain_specaugment);
        let _ = writeln!(s, "pretrain.sa_time_masks = {}", self.pretrain_sa_time_masks);
        let _ = writeln!(s, "pretrain.sa_time_width = {}", self.pretrain_sa_time_width);
        let _ = writeln!(s, "pretrain.sa_freq_masks = {}", self.pretrain_sa_freq_masks);
        let _ = writeln!(s, "pretrain.sa_freq_width = {}", self.pretrain_sa_freq_width);
        let _ = writeln!(s, "synth.filters = {}", self.synth_filters);
        let _ = writeln!(s, "synth.kernel = {}", self.synth_kernel);
        let _ = writeln!(s, "synth.layers = {}", self.synth_layers);
        let _ = writeln!(s, "synth.upsample = {}", self.synth_upsample);
        let _ = writeln!(s, "synth.align_epochs = {}", self.synth_align_epochs);
        let _ = writeln!(s, "synth.lr = {}", self.synth_lr);
        let _ = writeln!(s, "synth.epochs = {}", self.synth_epochs);
        let _ = writeln!(s, "synth.batch = {}", self.synth_batch);
        let _ = writeln!(s, "diffusion.channels = {}", self.diffusion_channels);
        let _ = writeln!(s, "diffusion.levels = {}", self.diffusion_levels);
        let _ = writeln!(s, "diffusion.heads = {}", self.diffusion_heads);
        let _ = writeln!(s, "diffusion.dropout = {}", self.diffusion_dropout);
        let _ = writeln!(
            s,
            "diffusion.attn_factors = {}",
            self.diffusion_attn_factors
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "diffusion.text_convs = {}", self.diffusion_text_convs);
        let _ = writeln!(s, "diffusion.text_blocks = {}", self.diffusion_text_blocks);
        let _ = writeln!(s, "diffusion.p_uncond = {}", self.diffusion_p_uncond);
        let _ = writeln!(s, "diffusion.sigma_data = {}", self.diffusion_sigma_data);
        let _ = writeln!(s, "diffusion.steps = {}", self.diffusion_steps);
        let _ = writeln!(s, "diffusion.guidance = {}", self.diffusion_guidance);
        let _ = writeln!(s, "diffusion.train_steps = {}", self.diffusion_train_steps);
        let _ = writeln!(s, "diffusion.lr = {}", self.diffusion_lr);
        let _ = writeln!(s, "diffusion.batch = {}", self.diffusion_batch);
        let _ = writeln!(s, "diffusion.ae_epochs = {}", self.diffusion_ae_epochs);
        let _ = writeln!(s, "diffusion.ae_lr = {}", self.diffusion_ae_lr);
        let _ = writeln!(s, "diffusion.cache = {}", self.diffusion_cache);
        let _ = writeln!(s, "backbone.lr = {}", self.backbone_lr);
        let _ = writeln!(s, "backbone.batch = {}", self.backbone_batch);
        let _ = writeln!(s, "backbone.mask_ratio = {}", self.backbone_mask_ratio);
        let _ = writeln!(s, "curriculum.phase1_steps = {}", self.curriculum_phase1);
        let _ = writeln!(s, "curriculum.phase2_steps = {}", self.curriculum_phase2);
        let _ = writeln!(s, "curriculum.mix_ratio = {}", self.curriculum_mix_ratio);
        let _ = writeln!(s, "run.parallel_seeds = {}", self.run_parallel_seeds);
        s
    }

    /// Hash of the canonical rendering (stored in checkpoints).
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.render().as_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_render_and_parse() {
        let cfg = ExperimentConfig::default();
        let text = cfg.render();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back.render(), text);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::parse("modee = baseline").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn unknown_mode_rejected() {
        assert!(ExperimentConfig::parse("mode = lasyn-gan").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = ExperimentConfig::parse("# comment\n\nmode = lasyn-fixed # trailing\n").unwrap();
        assert_eq!(cfg.mode, Mode::LasynFixed);
    }

    #[test]
    fn lfr_mode_forces_80ms_tap() {
        let cfg = ExperimentConfig::parse("mode = lasyn-fixed-lfr").unwrap();
        assert_eq!(cfg.tap(), TapPoint::Ms80);
        assert_eq!(cfg.synth_upsample(), 1);
        let cfg40 = ExperimentConfig::parse("mode = lasyn-fixed").unwrap();
        assert_eq!(cfg40.synth_upsample(), 2);
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.backbone_lr = 2e-3;
        assert_ne!(a.hash(), b.hash());
    }
}
