use super::schedule::NoiseSchedule;
use crate::corpus::{PhonemeSeq, NUM_PHONEME_SYMBOLS};
use crate::nn::{
    add_positional, bind_params, dropout, Binding, Conv1dLayer, Dense, EmbeddingLayer,
    LayerNormLayer, NodeId, ParamSet, RngStream, Scalar, Tape, Tensor, TransformerBlock,
};
use crate::{Error, Result};

const FOURIER_DIMS: usize = 32;

/// Denoising model hyper-parameters: a 1-D UNet (uniform channel multiplier,
/// one residual block per level, self/cross attention at the configured
/// time-downsampling factors) plus a small convolutional text encoder.
#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    /// UNet (and text encoder) channel count.
    pub channels: usize,
    /// Width of the compressed latent the UNet operates on.
    pub input_width: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Downsampling levels; factors are 1, 2, 4, ... 2^(levels-1).
    pub levels: usize,
    /// Time-downsampling factors (relative to the UNet input) that get
    /// self+cross attention blocks.
    pub attn_factors: Vec<usize>,
    pub text_convs: usize,
    pub text_blocks: usize,
    /// Probability of dropping the text condition during training.
    pub p_uncond: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 256,
            input_width: 64,
            heads: 4,
            dropout: 0.1,
            levels: 4,
            attn_factors: vec![4, 2],
            text_convs: 2,
            text_blocks: 2,
            p_uncond: 0.1,
        }
    }
}

struct ResBlock {
    name: String,
    c_in: usize,
    c_out: usize,
    emb_dim: usize,
}

impl ResBlock {
    fn new(name: impl Into<String>, c_in: usize, c_out: usize, emb_dim: usize) -> Self {
        ResBlock {
            name: name.into(),
            c_in,
            c_out,
            emb_dim,
        }
    }

    fn ln1(&self) -> LayerNormLayer {
        LayerNormLayer::new(format!("{}.ln1", self.name), self.c_in)
    }

    fn conv1(&self) -> Conv1dLayer {
        Conv1dLayer::new(format!("{}.conv1", self.name), self.c_in, self.c_out, 3, 1)
    }

    fn emb(&self) -> Dense {
        Dense::new(format!("{}.emb", self.name), self.emb_dim, self.c_out)
    }

    fn ln2(&self) -> LayerNormLayer {
        LayerNormLayer::new(format!("{}.ln2", self.name), self.c_out)
    }

    fn conv2(&self) -> Conv1dLayer {
        Conv1dLayer::new(format!("{}.conv2", self.name), self.c_out, self.c_out, 3, 1)
    }

    fn skip(&self) -> Option<Conv1dLayer> {
        (self.c_in != self.c_out)
            .then(|| Conv1dLayer::new(format!("{}.skip", self.name), self.c_in, self.c_out, 1, 1))
    }

    fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        self.ln1().init(params);
        self.conv1().init(params, rng);
        self.emb().init(params, rng);
        self.ln2().init(params);
        self.conv2().init(params, rng);
        if let Some(s) = self.skip() {
            s.init(params, rng);
        }
    }

    fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        x: NodeId,
        emb: NodeId,
        p_drop: f64,
        rng: &mut Option<&mut RngStream>,
    ) -> NodeId {
        let h = self.ln1().forward(tape, b, x);
        let h = tape.silu(h);
        let h = self.conv1().forward(tape, b, h);
        let e = tape.silu(emb);
        let e = self.emb().forward(tape, b, e);
        let h = tape.add_bias(h, e);
        let h = self.ln2().forward(tape, b, h);
        let h = tape.silu(h);
        let h = dropout(tape, h, p_drop, rng.as_deref_mut());
        let h = self.conv2().forward(tape, b, h);
        let skip = match self.skip() {
            Some(s) => s.forward(tape, b, x),
            None => x,
        };
        tape.add(skip, h)
    }
}

impl DenoiserConfig {
    fn stem(&self) -> Conv1dLayer {
        Conv1dLayer::new("dn.stem", self.input_width, self.channels, 3, 1)
    }

    fn down(&self, l: usize) -> Conv1dLayer {
        Conv1dLayer::new(format!("dn.down{l}"), self.channels, self.channels, 3, 2)
    }

    fn up(&self, l: usize) -> Conv1dLayer {
        Conv1dLayer::new(format!("dn.up{l}"), self.channels, self.channels, 3, 1)
    }

    fn res_down(&self, l: usize) -> ResBlock {
        ResBlock::new(format!("dn.res_d{l}"), self.channels, self.channels, self.channels)
    }

    fn res_up(&self, l: usize) -> ResBlock {
        ResBlock::new(format!("dn.res_u{l}"), 2 * self.channels, self.channels, self.channels)
    }

    fn attn(&self, name: &str) -> TransformerBlock {
        TransformerBlock::new(name, self.channels, self.heads, 2 * self.channels).with_cross()
    }

    fn level_has_attention(&self, l: usize) -> bool {
        self.attn_factors.contains(&(1 << l))
    }

    fn emb_l1(&self) -> Dense {
        Dense::new("dn.emb.l1", FOURIER_DIMS, self.channels)
    }

    fn emb_l2(&self) -> Dense {
        Dense::new("dn.emb.l2", self.channels, self.channels)
    }

    fn head_ln(&self) -> LayerNormLayer {
        LayerNormLayer::new("dn.headln", self.channels)
    }

    fn head(&self) -> Conv1dLayer {
        Conv1dLayer::new("dn.head", self.channels, self.input_width, 3, 1)
    }

    fn text_emb(&self) -> EmbeddingLayer {
        EmbeddingLayer::new("dn.txt.emb", NUM_PHONEME_SYMBOLS, self.channels)
    }

    fn text_conv(&self, i: usize) -> Conv1dLayer {
        Conv1dLayer::new(format!("dn.txt.c{i}"), self.channels, self.channels, 3, 1)
    }

    fn text_block(&self, i: usize) -> TransformerBlock {
        TransformerBlock::new(format!("dn.txt.b{i}"), self.channels, self.heads, 2 * self.channels)
    }

    fn null_ctx(&self) -> EmbeddingLayer {
        EmbeddingLayer::new("dn.null", 1, self.channels)
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet<f32> {
        assert!(self.levels >= 1);
        let mut params = ParamSet::new();
        self.stem().init(&mut params, rng);
        self.emb_l1().init(&mut params, rng);
        self.emb_l2().init(&mut params, rng);
        for l in 0..self.levels {
            self.res_down(l).init(&mut params, rng);
            if self.level_has_attention(l) {
                self.attn(&format!("dn.attn_d{l}")).init(&mut params, rng);
            }
            if l + 1 < self.levels {
                self.down(l).init(&mut params, rng);
            }
        }
        ResBlock::new("dn.mid.r1", self.channels, self.channels, self.channels).init(&mut params, rng);
        self.attn("dn.mid.attn").init(&mut params, rng);
        ResBlock::new("dn.mid.r2", self.channels, self.channels, self.channels).init(&mut params, rng);
        for l in 0..self.levels {
            self.res_up(l).init(&mut params, rng);
            if self.level_has_attention(l) {
                self.attn(&format!("dn.attn_u{l}")).init(&mut params, rng);
            }
            if l > 0 {
                self.up(l).init(&mut params, rng);
            }
        }
        self.head_ln().init(&mut params);
        self.head().init(&mut params, rng);

        self.text_emb().init(&mut params, rng);
        for i in 0..self.text_convs {
            self.text_conv(i).init(&mut params, rng);
        }
        for i in 0..self.text_blocks {
            self.text_block(i).init(&mut params, rng);
        }
        self.null_ctx().init(&mut params, rng);
        params
    }

    /// Conditioning context: the text encoder output, or the learned null
    /// embedding when no text is given.
    pub fn text_context_nodes<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        cond: Option<&PhonemeSeq>,
    ) -> NodeId {
        match cond {
            Some(seq) => {
                assert!(!seq.is_empty(), "empty conditioning sequence");
                let mut x = self.text_emb().forward(tape, b, seq);
                x = add_positional(tape, x);
                for i in 0..self.text_convs {
                    x = self.text_conv(i).forward(tape, b, x);
                    x = tape.silu(x);
                }
                for i in 0..self.text_blocks {
                    x = self.text_block(i).forward(tape, b, x, None);
                }
                x
            }
            None => self.null_ctx().forward(tape, b, &[0]),
        }
    }

    /// Raw UNet forward `F(x; e, c_noise)`; input and output are
    /// `[T, input_width]`.
    pub fn forward_unet<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        x: NodeId,
        context: NodeId,
        c_noise: f64,
        mut rng: Option<&mut RngStream>,
    ) -> NodeId {
        let t_in = tape.shape(x)[0];
        let chunk = 1 << (self.levels - 1);
        let pad = (chunk - t_in % chunk) % chunk;
        let mut h = if pad > 0 { tape.pad_rows(x, 0, pad) } else { x };

        // Noise-level embedding from Fourier features of c_noise.
        let mut feats = Tensor::zeros(&[1, FOURIER_DIMS]);
        for k in 0..FOURIER_DIMS / 2 {
            let angle = c_noise * (2.0f64).powi(k as i32);
            feats[(0, 2 * k)] = F::from_f64(angle.sin());
            feats[(0, 2 * k + 1)] = F::from_f64(angle.cos());
        }
        let f = tape.constant(feats);
        let e = self.emb_l1().forward(tape, b, f);
        let e = tape.silu(e);
        let emb = self.emb_l2().forward(tape, b, e);

        h = self.stem().forward(tape, b, h);
        let mut skips = Vec::with_capacity(self.levels);
        for l in 0..self.levels {
            h = self.res_down(l).forward(tape, b, h, emb, self.dropout, &mut rng);
            if self.level_has_attention(l) {
                h = self.attn(&format!("dn.attn_d{l}")).forward(tape, b, h, Some(context));
            }
            skips.push(h);
            if l + 1 < self.levels {
                h = self.down(l).forward(tape, b, h);
            }
        }

        h = ResBlock::new("dn.mid.r1", self.channels, self.channels, self.channels)
            .forward(tape, b, h, emb, self.dropout, &mut rng);
        h = self.attn("dn.mid.attn").forward(tape, b, h, Some(context));
        h = ResBlock::new("dn.mid.r2", self.channels, self.channels, self.channels)
            .forward(tape, b, h, emb, self.dropout, &mut rng);

        for l in (0..self.levels).rev() {
            let skip = skips.pop().expect("skip per level");
            let cat = tape.concat_cols(&[h, skip]);
            h = self.res_up(l).forward(tape, b, cat, emb, self.dropout, &mut rng);
            if self.level_has_attention(l) {
                h = self.attn(&format!("dn.attn_u{l}")).forward(tape, b, h, Some(context));
            }
            if l > 0 {
                h = tape.upsample2(h);
                h = self.up(l).forward(tape, b, h);
            }
        }

        let out = self.head_ln().forward(tape, b, h);
        let out = tape.silu(out);
        let out = self.head().forward(tape, b, out);
        if pad > 0 {
            tape.slice_rows(out, 0, t_in)
        } else {
            out
        }
    }

    /// Preconditioned denoiser on the tape:
    /// `D(x; e, sigma) = c_skip * x + c_out * F(c_in * x; e, c_noise)`.
    pub fn denoise_nodes<F: Scalar>(
        &self,
        schedule: &NoiseSchedule,
        tape: &mut Tape<F>,
        b: &Binding,
        noisy: NodeId,
        context: NodeId,
        sigma: f64,
        rng: Option<&mut RngStream>,
    ) -> NodeId {
        let scaled = tape.scale(noisy, schedule.c_in(sigma));
        let f = self.forward_unet(tape, b, scaled, context, schedule.c_noise(sigma), rng);
        let out = tape.scale(f, schedule.c_out(sigma));
        let skip = tape.scale(noisy, schedule.c_skip(sigma));
        tape.add(skip, out)
    }
}

/// A denoising model: estimates the clean latent from a noisy one.
/// Implemented by the trained network and, in tests, by closed-form oracles.
pub trait Denoiser {
    fn denoise(&self, noisy: &Tensor<f32>, cond: Option<&PhonemeSeq>, sigma: f64) -> Result<Tensor<f32>>;

    /// Width of the (compressed) latents this denoiser operates on.
    fn width(&self) -> usize;
}

/// The trained UNet + text-encoder denoiser with its schedule.
#[derive(Debug, Clone)]
pub struct DiffusionDenoiser {
    pub cfg: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub params: ParamSet<f32>,
}

impl DiffusionDenoiser {
    pub fn init(cfg: DenoiserConfig, schedule: NoiseSchedule, rng: &mut RngStream) -> Self {
        let params = cfg.init_params(&mut rng.derive("dn-init"));
        DiffusionDenoiser {
            cfg,
            schedule,
            params,
        }
    }
}

impl Denoiser for DiffusionDenoiser {
    fn denoise(&self, noisy: &Tensor<f32>, cond: Option<&PhonemeSeq>, sigma: f64) -> Result<Tensor<f32>> {
        if sigma <= 0.0 {
            return Err(Error::Invalid(format!("denoise needs sigma > 0, got {sigma}")));
        }
        let mut tape: Tape<f32> = Tape::new();
        let b = bind_params(&mut tape, &self.params);
        let x = tape.constant(noisy.clone());
        let ctx = self.cfg.text_context_nodes(&mut tape, &b, cond);
        let d = self
            .cfg
            .denoise_nodes(&self.schedule, &mut tape, &b, x, ctx, sigma, None);
        Ok(tape.value(d).clone())
    }

    fn width(&self) -> usize {
        self.cfg.input_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            channels: 12,
            input_width: 6,
            heads: 2,
            dropout: 0.1,
            levels: 3,
            attn_factors: vec![4, 2],
            text_convs: 1,
            text_blocks: 1,
            p_uncond: 0.1,
        }
    }

    fn tiny_denoiser(seed: u64) -> DiffusionDenoiser {
        let mut rng = seeded_stream(seed, "dn");
        DiffusionDenoiser::init(tiny_cfg(), NoiseSchedule::default(), &mut rng)
    }

    #[test]
    fn output_shape_matches_input_for_odd_lengths() {
        let dn = tiny_denoiser(0);
        for frames in [1usize, 2, 3, 5, 8, 11] {
            let x = Tensor::filled(&[frames, 6], 0.2f32);
            let out = dn.denoise(&x, Some(&vec![1, 2, 3]), 0.7).unwrap();
            assert_eq!(out.shape(), x.shape(), "frames {frames}");
        }
    }

    #[test]
    fn sigma_to_zero_limit_returns_input() {
        // c_skip -> 1 and c_out -> 0, so D(x) -> x.
        let dn = tiny_denoiser(1);
        let x = Tensor::from_vec(&[4, 6], (0..24).map(|i| (i as f32 * 0.17).sin()).collect());
        let out = dn.denoise(&x, None, 1e-6).unwrap();
        for (a, b) in x.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn sigma_to_infinity_output_stays_bounded() {
        // c_skip -> 0: even a huge noisy input yields a bounded estimate.
        let dn = tiny_denoiser(2);
        let sigma = 1e4;
        let mut rng = seeded_stream(3, "noise");
        let x = Tensor::from_vec(
            &[4, 6],
            (0..24).map(|_| (sigma * rng.normal_f64()) as f32).collect(),
        );
        let out = dn.denoise(&x, None, sigma).unwrap();
        let out_max = out.data().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        let in_max = x.data().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        assert!(out.all_finite());
        assert!(out_max < 0.01 * in_max, "out {out_max} vs in {in_max}");
    }

    #[test]
    fn nonpositive_sigma_is_error() {
        let dn = tiny_denoiser(4);
        let x = Tensor::filled(&[2, 6], 0.1f32);
        assert!(dn.denoise(&x, None, 0.0).is_err());
        assert!(dn.denoise(&x, None, -1.0).is_err());
    }

    #[test]
    fn null_and_text_conditioning_differ() {
        let dn = tiny_denoiser(5);
        let x = Tensor::filled(&[4, 6], 0.4f32);
        let a = dn.denoise(&x, None, 0.5).unwrap();
        let b = dn.denoise(&x, Some(&vec![1, 2, 3, 4]), 0.5).unwrap();
        assert_ne!(a.data(), b.data());
    }
}
