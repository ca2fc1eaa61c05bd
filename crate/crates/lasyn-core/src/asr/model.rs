use super::{LatentSeq, Provenance};
use crate::frontend::FeatureSeq;
use crate::nn::{
    add_positional, bind_params, Binding, Conv1dLayer, LayerNormLayer, NodeId, ParamSet,
    RngStream, Scalar, Tape, TransformerBlock,
};
use crate::{Error, Result};

/// Latent tap point: after the 40 ms stage or after the 80 ms stage (the
/// low-frame-rate variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapPoint {
    Ms40,
    Ms80,
}

impl TapPoint {
    pub fn frame_ms(&self) -> usize {
        match self {
            TapPoint::Ms40 => 40,
            TapPoint::Ms80 => 80,
        }
    }

    /// Total time downsampling from 10 ms features.
    pub fn subsampling(&self) -> usize {
        match self {
            TapPoint::Ms40 => 4,
            TapPoint::Ms80 => 8,
        }
    }
}

/// Loss head the model was pre-trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Transducer,
    Aed,
}

/// Architecture hyper-parameters of the speech model.
#[derive(Debug, Clone)]
pub struct AsrConfig {
    pub mel_bins: usize,
    /// Model width.
    pub width: usize,
    pub heads: usize,
    /// Transformer blocks at the 40 ms stage.
    pub blocks_low: usize,
    /// Transformer blocks at the 80 ms stage.
    pub blocks_high: usize,
    pub ffn_mult: usize,
    pub head: HeadKind,
    /// AED decoder depth (present when `head` is `Aed` or a decoder is added
    /// for text-side tasks).
    pub dec_blocks: usize,
    /// Transducer joint hidden width.
    pub joint_dim: usize,
    pub vocab: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        AsrConfig {
            mel_bins: 128,
            width: 256,
            heads: 4,
            blocks_low: 2,
            blocks_high: 2,
            ffn_mult: 4,
            head: HeadKind::Transducer,
            dec_blocks: 2,
            joint_dim: 128,
            vocab: 0,
        }
    }
}

impl AsrConfig {
    fn sub0(&self) -> Conv1dLayer {
        Conv1dLayer::new("enc.sub.c0", self.mel_bins, self.width, 5, 2)
    }

    fn sub1(&self) -> Conv1dLayer {
        Conv1dLayer::new("enc.sub.c1", self.width, self.width, 5, 2)
    }

    fn low_block(&self, i: usize) -> TransformerBlock {
        TransformerBlock::new(format!("enc.low.b{i}"), self.width, self.heads, self.ffn_mult * self.width)
    }

    fn mid_conv(&self) -> Conv1dLayer {
        Conv1dLayer::new("enc.mid.conv", self.width, self.width, 3, 2)
    }

    /// Normalizes the latent interface: real and pseudo latents meet the
    /// remaining stages through the same per-frame normalization.
    fn mid_entry_norm(&self) -> LayerNormLayer {
        LayerNormLayer::new("enc.mid.ln", self.width)
    }

    fn high_block(&self, i: usize) -> TransformerBlock {
        TransformerBlock::new(format!("enc.high.b{i}"), self.width, self.heads, self.ffn_mult * self.width)
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet<f32> {
        assert!(self.vocab > 2, "vocab must be set before init");
        let mut params = ParamSet::new();
        self.sub0().init(&mut params, rng);
        self.sub1().init(&mut params, rng);
        for i in 0..self.blocks_low {
            self.low_block(i).init(&mut params, rng);
        }
        self.mid_entry_norm().init(&mut params);
        self.mid_conv().init(&mut params, rng);
        for i in 0..self.blocks_high {
            self.high_block(i).init(&mut params, rng);
        }
        match self.head {
            HeadKind::Transducer => super::transducer::init_head(self, &mut params, rng),
            HeadKind::Aed => super::aed::init_decoder(self, &mut params, rng),
        }
        params
    }

    /// Lower stages up to the tap: features (10 ms) to latents (40 or 80 ms).
    pub fn forward_lower<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        features: NodeId,
        tap: TapPoint,
    ) -> NodeId {
        let x = self.sub0().forward(tape, b, features);
        let x = tape.silu(x);
        let x = self.sub1().forward(tape, b, x);
        let x = tape.silu(x);
        let mut x = add_positional(tape, x);
        for i in 0..self.blocks_low {
            x = self.low_block(i).forward(tape, b, x, None);
        }
        if tap == TapPoint::Ms40 {
            return x;
        }
        self.forward_mid_high(tape, b, x)
    }

    fn forward_mid_high<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: NodeId) -> NodeId {
        let x = self.mid_entry_norm().forward(tape, b, x);
        let x = self.mid_conv().forward(tape, b, x);
        let x = tape.silu(x);
        let mut x = add_positional(tape, x);
        for i in 0..self.blocks_high {
            x = self.high_block(i).forward(tape, b, x, None);
        }
        x
    }

    /// Remaining encoder stages from the tap to the encoder output.
    pub fn forward_upper<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        latent: NodeId,
        tap: TapPoint,
    ) -> NodeId {
        match tap {
            TapPoint::Ms40 => self.forward_mid_high(tape, b, latent),
            TapPoint::Ms80 => latent,
        }
    }

    /// Full encoder: identical to `forward_upper(forward_lower(x))` at any tap.
    pub fn forward_encoder<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, features: NodeId) -> NodeId {
        let latent = self.forward_lower(tape, b, features, TapPoint::Ms40);
        self.forward_upper(tape, b, latent, TapPoint::Ms40)
    }

    /// Names owned by the speech latent encoder for a given tap.
    pub fn encoder_prefixes(&self, tap: TapPoint) -> Vec<&'static str> {
        match tap {
            TapPoint::Ms40 => vec!["enc.sub.", "enc.low."],
            TapPoint::Ms80 => vec!["enc.sub.", "enc.low.", "enc.mid.", "enc.high."],
        }
    }

    /// Names owned by the guiding net (everything after the tap plus heads).
    pub fn guiding_prefixes(&self, tap: TapPoint) -> Vec<&'static str> {
        match tap {
            TapPoint::Ms40 => vec!["enc.mid.", "enc.high.", "pred.", "joint.", "dec."],
            TapPoint::Ms80 => vec!["pred.", "joint.", "dec."],
        }
    }
}

/// A pre-trained speech model (encoder stack plus loss head).
#[derive(Debug, Clone)]
pub struct AsrModel {
    pub cfg: AsrConfig,
    pub params: ParamSet<f32>,
}

/// The pre-trained model split at a stage boundary: the speech latent
/// encoder (frozen) and the guiding net (remaining stages + loss head).
#[derive(Debug, Clone)]
pub struct SplitModel {
    pub cfg: AsrConfig,
    pub params: ParamSet<f32>,
    pub tap: TapPoint,
}

/// Split a pre-trained model at the tap point. The composition of the two
/// sides equals the original forward pass bit-exactly (same code path); the
/// encoder side is marked frozen.
pub fn split_pretrained(model: &AsrModel, tap_stage: &str) -> Result<SplitModel> {
    let tap = match tap_stage {
        "40ms" => TapPoint::Ms40,
        "80ms" => TapPoint::Ms80,
        other => {
            return Err(Error::Invalid(format!(
                "tap point `{other}` is not a stage boundary (use `40ms` or `80ms`)"
            )))
        }
    };
    let mut params = model.params.clone();
    for prefix in model.cfg.encoder_prefixes(tap) {
        params.freeze_prefix(prefix);
    }
    Ok(SplitModel {
        cfg: model.cfg.clone(),
        params,
        tap,
    })
}

impl SplitModel {
    /// Hash of the frozen speech-latent-encoder parameters.
    pub fn encoder_hash(&self) -> [u8; 32] {
        self.params.prefix_hash("enc.")
    }

    pub fn guiding_params(&self) -> ParamSet<f32> {
        let mut out = ParamSet::new();
        for (name, entry) in self.params.iter() {
            if self.cfg.guiding_prefixes(self.tap).iter().any(|p| name.starts_with(p)) {
                out.insert(name, entry.tensor.clone());
            }
        }
        out
    }
}

/// Map a waveform's features into the latent space of the frozen encoder.
pub fn encode_speech(features: &FeatureSeq, model: &SplitModel) -> Result<LatentSeq> {
    if features.frames() == 0 {
        return Err(Error::EmptyInput("encode_speech features".into()));
    }
    if features.frame_ms != 10 {
        return Err(Error::Invalid(format!(
            "encode_speech expects 10 ms features, got {} ms",
            features.frame_ms
        )));
    }
    let mut tape: Tape<f32> = Tape::new();
    let b = bind_params(&mut tape, &model.params);
    let x = tape.constant(features.features.clone());
    let latent = model.cfg.forward_lower(&mut tape, &b, x, model.tap);
    Ok(LatentSeq {
        data: tape.value(latent).clone(),
        frame_ms: model.tap.frame_ms(),
        provenance: Provenance::Real,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_stream, Tensor};

    fn tiny_cfg() -> AsrConfig {
        AsrConfig {
            mel_bins: 8,
            width: 16,
            heads: 2,
            blocks_low: 1,
            blocks_high: 1,
            ffn_mult: 2,
            head: HeadKind::Transducer,
            dec_blocks: 1,
            joint_dim: 8,
            vocab: 6,
        }
    }

    fn tiny_model(seed: u64) -> AsrModel {
        let cfg = tiny_cfg();
        let mut rng = seeded_stream(seed, "init");
        let params = cfg.init_params(&mut rng);
        AsrModel { cfg, params }
    }

    fn features(frames: usize) -> FeatureSeq {
        let data: Vec<f32> = (0..frames * 8).map(|i| ((i % 17) as f32) * 0.1 - 0.8).collect();
        FeatureSeq {
            features: Tensor::from_vec(&[frames, 8], data),
            frame_ms: 10,
        }
    }

    #[test]
    fn latent_lengths_follow_tap_downsampling() {
        let model = tiny_model(0);
        let split40 = split_pretrained(&model, "40ms").unwrap();
        let split80 = split_pretrained(&model, "80ms").unwrap();

        let f = features(320);
        assert_eq!(encode_speech(&f, &split40).unwrap().frames(), 80);
        assert_eq!(encode_speech(&f, &split80).unwrap().frames(), 40);

        let f1 = features(1);
        assert_eq!(encode_speech(&f1, &split40).unwrap().frames(), 1);
        assert_eq!(encode_speech(&f1, &split80).unwrap().frames(), 1);
    }

    #[test]
    fn frame_rates_match_tap() {
        let model = tiny_model(1);
        let f = features(64);
        let l40 = encode_speech(&f, &split_pretrained(&model, "40ms").unwrap()).unwrap();
        let l80 = encode_speech(&f, &split_pretrained(&model, "80ms").unwrap()).unwrap();
        assert_eq!(l40.frame_ms, 40);
        assert_eq!(l80.frame_ms, 80);
        assert_eq!(l40.provenance, Provenance::Real);
    }

    #[test]
    fn split_composition_is_bit_exact() {
        let model = tiny_model(2);
        let f = features(40);
        for tap_name in ["40ms", "80ms"] {
            let split = split_pretrained(&model, tap_name).unwrap();

            let mut tape: Tape<f32> = Tape::new();
            let b = bind_params(&mut tape, &model.params);
            let x = tape.constant(f.features.clone());
            let full = model.cfg.forward_encoder(&mut tape, &b, x);
            let full_out = tape.value(full).clone();

            let latent = encode_speech(&f, &split).unwrap();
            let mut tape2: Tape<f32> = Tape::new();
            let b2 = bind_params(&mut tape2, &split.params);
            let l = tape2.constant(latent.data.clone());
            let upper = split.cfg.forward_upper(&mut tape2, &b2, l, split.tap);
            let split_out = tape2.value(upper).clone();

            assert_eq!(full_out, split_out, "tap {tap_name}");
        }
    }

    #[test]
    fn invalid_tap_is_error() {
        let model = tiny_model(3);
        assert!(split_pretrained(&model, "60ms").is_err());
    }

    #[test]
    fn encoder_side_is_frozen() {
        let model = tiny_model(4);
        let split = split_pretrained(&model, "40ms").unwrap();
        assert!(split.params.prefix_is_frozen("enc.sub."));
        assert!(split.params.prefix_is_frozen("enc.low."));
        assert!(!split.params.prefix_is_frozen("enc.mid."));
    }

    #[test]
    fn empty_features_error() {
        let model = tiny_model(5);
        let split = split_pretrained(&model, "40ms").unwrap();
        let f = FeatureSeq {
            features: Tensor::zeros(&[0, 8]),
            frame_ms: 10,
        };
        assert!(encode_speech(&f, &split).is_err());
    }
}
