use super::bind::Binding;
use super::params::ParamSet;
use super::rng::RngStream;
use super::scalar::Scalar;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Variance-scaled uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
fn glorot(rng: &mut RngStream, fan_in: usize, fan_out: usize, n: usize) -> Vec<f32> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.uniform_in(-a, a) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Dense { name: name.into(), din, dout }
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        params.insert(
            &format!("{}.w", self.name),
            Tensor::from_vec(&[self.din, self.dout], glorot(rng, self.din, self.dout, self.din * self.dout)),
        );
        params.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.dout]));
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: NodeId) -> NodeId {
        let h = tape.matmul(x, b.id(&format!("{}.w", self.name)));
        tape.add_bias(h, b.id(&format!("{}.b", self.name)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1dLayer {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        Conv1dLayer { name: name.into(), c_in, c_out, kernel, stride }
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        let rows = self.kernel * self.c_in;
        params.insert(
            &format!("{}.w", self.name),
            Tensor::from_vec(
                &[rows, self.c_out],
                glorot(rng, rows, self.c_out, rows * self.c_out),
            ),
        );
        params.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.c_out]));
    }

    /// Same-ceil convolution: output length is `ceil(t_in / stride)`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: NodeId) -> NodeId {
        let t_in = tape.shape(x)[0];
        let t_out = t_in.div_ceil(self.stride);
        let needed = (t_out - 1) * self.stride + self.kernel;
        let pad_total = needed.saturating_sub(t_in);
        let pad_left = pad_total / 2;
        tape.conv1d(
            x,
            b.id(&format!("{}.w", self.name)),
            b.id(&format!("{}.b", self.name)),
            self.kernel,
            self.stride,
            pad_left,
            pad_total - pad_left,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub name: String,
    pub dim: usize,
}

impl LayerNormLayer {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNormLayer { name: name.into(), dim }
    }

    pub fn init(&self, params: &mut ParamSet<f32>) {
        params.insert(&format!("{}.g", self.name), Tensor::filled(&[self.dim], 1.0));
        params.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.dim]));
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: NodeId) -> NodeId {
        tape.layer_norm(
            x,
            b.id(&format!("{}.g", self.name)),
            b.id(&format!("{}.b", self.name)),
            LN_EPS,
        )
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingLayer {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl EmbeddingLayer {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        EmbeddingLayer { name: name.into(), vocab, dim }
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        let a = (3.0 / self.dim as f64).sqrt();
        let data = (0..self.vocab * self.dim)
            .map(|_| rng.uniform_in(-a, a) as f32)
            .collect();
        params.insert(&format!("{}.t", self.name), Tensor::from_vec(&[self.vocab, self.dim], data));
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, indices: &[usize]) -> NodeId {
        tape.embed(b.id(&format!("{}.t", self.name)), indices)
    }
}

/// Sinusoidal positional encoding, added as a constant.
pub fn positional_encoding<F: Scalar>(len: usize, dim: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(&[len, dim]);
    for pos in 0..len {
        for i in 0..dim {
            let rate = (10_000.0f64).powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t[(pos, i)] = F::from_f64(v);
        }
    }
    t
}

pub fn add_positional<F: Scalar>(tape: &mut Tape<F>, x: NodeId) -> NodeId {
    let shape = tape.shape(x).to_vec();
    let pe = tape.constant(positional_encoding(shape[0], shape[1]));
    tape.add(x, pe)
}

const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Self {
        assert_eq!(dim % heads, 0, "attention dim not divisible by heads");
        MultiHeadAttention { name: name.into(), dim, heads }
    }

    fn proj(&self, which: &str) -> Dense {
        Dense::new(format!("{}.{which}", self.name), self.dim, self.dim)
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        for which in ["q", "k", "v", "o"] {
            self.proj(which).init(params, rng);
        }
    }

    /// Attention with queries from `xq` and keys/values from `xkv`.
    /// `causal` masks out keys later than the query position (self-attention
    /// only; requires equal lengths).
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        xq: NodeId,
        xkv: NodeId,
        causal: bool,
    ) -> NodeId {
        let q = self.proj("q").forward(tape, b, xq);
        let k = self.proj("k").forward(tape, b, xkv);
        let v = self.proj("v").forward(tape, b, xkv);
        let dh = self.dim / self.heads;
        let tq = tape.shape(q)[0];
        let tk = tape.shape(k)[0];
        let scale = 1.0 / (dh as f64).sqrt();

        let mask = if causal {
            assert_eq!(tq, tk, "causal attention requires equal lengths");
            let mut m = Tensor::zeros(&[tq, tk]);
            for i in 0..tq {
                for j in (i + 1)..tk {
                    m[(i, j)] = F::from_f64(MASK_NEG);
                }
            }
            Some(tape.constant(m))
        } else {
            None
        };

        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = tape.add(scores, m);
            }
            let attn = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(&head_outs);
        self.proj("o").forward(tape, b, cat)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub name: String,
    pub dim: usize,
    pub hidden: usize,
}

impl FeedForward {
    pub fn new(name: impl Into<String>, dim: usize, hidden: usize) -> Self {
        FeedForward { name: name.into(), dim, hidden }
    }

    fn lin1(&self) -> Dense {
        Dense::new(format!("{}.l1", self.name), self.dim, self.hidden)
    }

    fn lin2(&self) -> Dense {
        Dense::new(format!("{}.l2", self.name), self.hidden, self.dim)
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        self.lin1().init(params, rng);
        self.lin2().init(params, rng);
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: NodeId) -> NodeId {
        let h = self.lin1().forward(tape, b, x);
        let h = tape.silu(h);
        self.lin2().forward(tape, b, h)
    }
}

/// Pre-norm transformer block, optionally with a cross-attention sublayer
/// between self-attention and the feed-forward.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub causal: bool,
    pub cross: bool,
}

impl TransformerBlock {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize, ffn_hidden: usize) -> Self {
        TransformerBlock {
            name: name.into(),
            dim,
            heads,
            ffn_hidden,
            causal: false,
            cross: false,
        }
    }

    pub fn causal(mut self) -> Self {
        self.causal = true;
        self
    }

    pub fn with_cross(mut self) -> Self {
        self.cross = true;
        self
    }

    fn self_attn(&self) -> MultiHeadAttention {
        MultiHeadAttention::new(format!("{}.attn", self.name), self.dim, self.heads)
    }

    fn cross_attn(&self) -> MultiHeadAttention {
        MultiHeadAttention::new(format!("{}.xattn", self.name), self.dim, self.heads)
    }

    fn ffn(&self) -> FeedForward {
        FeedForward::new(format!("{}.ffn", self.name), self.dim, self.ffn_hidden)
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut RngStream) {
        LayerNormLayer::new(format!("{}.ln1", self.name), self.dim).init(params);
        self.self_attn().init(params, rng);
        if self.cross {
            LayerNormLayer::new(format!("{}.lnx", self.name), self.dim).init(params);
            self.cross_attn().init(params, rng);
        }
        LayerNormLayer::new(format!("{}.ln2", self.name), self.dim).init(params);
        self.ffn().init(params, rng);
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Binding,
        x: NodeId,
        context: Option<NodeId>,
    ) -> NodeId {
        let ln1 = LayerNormLayer::new(format!("{}.ln1", self.name), self.dim);
        let normed = ln1.forward(tape, b, x);
        let attn = self.self_attn().forward(tape, b, normed, normed, self.causal);
        let mut x = tape.add(x, attn);

        if self.cross {
            let ctx = context.expect("cross-attention block needs context");
            let lnx = LayerNormLayer::new(format!("{}.lnx", self.name), self.dim);
            let normed = lnx.forward(tape, b, x);
            let cross = self.cross_attn().forward(tape, b, normed, ctx, false);
            x = tape.add(x, cross);
        }

        let ln2 = LayerNormLayer::new(format!("{}.ln2", self.name), self.dim);
        let normed = ln2.forward(tape, b, x);
        let ff = self.ffn().forward(tape, b, normed);
        tape.add(x, ff)
    }
}

/// Inverted dropout via a constant mask; identity when `rng` is `None`.
pub fn dropout<F: Scalar>(tape: &mut Tape<F>, x: NodeId, p: f64, rng: Option<&mut RngStream>) -> NodeId {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = F::from_f64(1.0 / (1.0 - p));
    let data = (0..n)
        .map(|_| if rng.coin(p) { F::ZERO } else { keep })
        .collect();
    let mask = tape.constant(Tensor::from_vec(&shape, data));
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind::bind_params;
    use crate::nn::gradcheck::{grad_check, GradCheckOpts, LossFn};
    use crate::nn::rng::seeded_stream;

    struct BlockLoss {
        block: TransformerBlock,
    }

    impl LossFn for BlockLoss {
        fn build<F: Scalar>(&self, tape: &mut Tape<F>, binding: &Binding) -> NodeId {
            let x = tape.constant(Tensor::from_vec(
                &[3, 8],
                (0..24).map(|i| F::from_f64((i as f64 * 0.37).sin())).collect(),
            ));
            let y = self.block.forward(tape, binding, x, None);
            let sq = tape.mul(y, y);
            tape.mean_all(sq)
        }
    }

    #[test]
    fn transformer_block_gradients_pass_fd() {
        let block = TransformerBlock::new("blk", 8, 2, 16).causal();
        let mut params = ParamSet::new();
        let mut rng = seeded_stream(5, "init");
        block.init(&mut params, &mut rng);
        let report = grad_check(
            &BlockLoss { block },
            &params,
            &GradCheckOpts { eps: 1e-5, max_per_tensor: Some(8) },
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "{:?}", report.max_rel_error());
    }

    struct ConvLoss {
        conv: Conv1dLayer,
    }

    impl LossFn for ConvLoss {
        fn build<F: Scalar>(&self, tape: &mut Tape<F>, binding: &Binding) -> NodeId {
            let x = tape.constant(Tensor::from_vec(
                &[7, 3],
                (0..21).map(|i| F::from_f64((i as f64 * 0.31).cos())).collect(),
            ));
            let y = self.conv.forward(tape, binding, x);
            let sq = tape.mul(y, y);
            tape.mean_all(sq)
        }
    }

    #[test]
    fn strided_conv_gradients_pass_fd() {
        let conv = Conv1dLayer::new("c", 3, 4, 5, 2);
        let mut params = ParamSet::new();
        let mut rng = seeded_stream(6, "init");
        conv.init(&mut params, &mut rng);
        let report = grad_check(&ConvLoss { conv }, &params, &GradCheckOpts::default()).unwrap();
        assert!(report.max_rel_error() < 1e-4);
    }

    #[test]
    fn causal_attention_ignores_future() {
        let block = TransformerBlock::new("blk", 4, 1, 8).causal();
        let mut params = ParamSet::new();
        let mut rng = seeded_stream(5, "init");
        block.init(&mut params, &mut rng);

        let run = |first_rows: &[f32]| {
            let mut tape: Tape<f32> = Tape::new();
            let b = bind_params(&mut tape, &params);
            let mut data = first_rows.to_vec();
            data.resize(12, 9.0);
            let x = tape.constant(Tensor::from_vec(&[3, 4], data));
            let y = block.forward(&mut tape, &b, x, None);
            tape.value(y).row(0).to_vec()
        };
        // Changing later rows must not change the first output row.
        let base = run(&[0.1, 0.2, 0.3, 0.4]);
        let mut tape: Tape<f32> = Tape::new();
        let b = bind_params(&mut tape, &params);
        let mut data = vec![0.1, 0.2, 0.3, 0.4];
        data.resize(12, -3.0);
        let x = tape.constant(Tensor::from_vec(&[3, 4], data));
        let y = block.forward(&mut tape, &b, x, None);
        let changed = tape.value(y).row(0).to_vec();
        for (a, c) in base.iter().zip(&changed) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = dropout(&mut tape, x, 0.5, None);
        assert_eq!(x, y);
    }
}
