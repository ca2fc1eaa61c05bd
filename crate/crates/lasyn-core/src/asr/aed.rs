use super::model::AsrConfig;
use super::{BOS, EOS};
use crate::nn::{
    add_positional, bind_params, Binding, Dense, EmbeddingLayer, LayerNormLayer, NodeId, ParamSet,
    RngStream, Scalar, Tape, Tensor, TransformerBlock,
};
use crate::{Error, Result};

fn embedding(cfg: &AsrConfig) -> EmbeddingLayer {
    EmbeddingLayer::new("dec.emb", cfg.vocab, cfg.width)
}

fn block(cfg: &AsrConfig, i: usize) -> TransformerBlock {
    TransformerBlock::new(format!("dec.b{i}"), cfg.width, cfg.heads, cfg.ffn_mult * cfg.width)
        .causal()
        .with_cross()
}

fn final_norm(cfg: &AsrConfig) -> LayerNormLayer {
    LayerNormLayer::new("dec.ln", cfg.width)
}

fn context_norm(cfg: &AsrConfig) -> LayerNormLayer {
    LayerNormLayer::new("dec.encln", cfg.width)
}

fn out_proj(cfg: &AsrConfig) -> Dense {
    Dense::new("dec.out", cfg.width, cfg.vocab)
}

pub(crate) fn init_decoder(cfg: &AsrConfig, params: &mut ParamSet<f32>, rng: &mut RngStream) {
    embedding(cfg).init(params, rng);
    context_norm(cfg).init(params);
    for i in 0..cfg.dec_blocks {
        block(cfg, i).init(params, rng);
    }
    final_norm(cfg).init(params);
    out_proj(cfg).init(params, rng);
}

/// Teacher-forced decoder logits for `input_tokens` (starting with BOS).
pub fn forward_decoder<F: Scalar>(
    cfg: &AsrConfig,
    tape: &mut Tape<F>,
    b: &Binding,
    enc_out: NodeId,
    input_tokens: &[usize],
) -> NodeId {
    let ctx = context_norm(cfg).forward(tape, b, enc_out);
    let emb = embedding(cfg).forward(tape, b, input_tokens);
    let mut x = add_positional(tape, emb);
    for i in 0..cfg.dec_blocks {
        x = block(cfg, i).forward(tape, b, x, Some(ctx));
    }
    let x = final_norm(cfg).forward(tape, b, x);
    out_proj(cfg).forward(tape, b, x)
}

/// Cross-entropy objective: the decoder consumes `[BOS] + targets` and
/// predicts `targets + [EOS]`, mean negative log-likelihood per token.
pub fn aed_loss_nodes<F: Scalar>(
    cfg: &AsrConfig,
    tape: &mut Tape<F>,
    b: &Binding,
    enc_out: NodeId,
    targets: &[usize],
) -> NodeId {
    let mut inputs = Vec::with_capacity(targets.len() + 1);
    inputs.push(BOS);
    inputs.extend_from_slice(targets);
    let mut labels = targets.to_vec();
    labels.push(EOS);
    let logits = forward_decoder(cfg, tape, b, enc_out, &inputs);
    tape.cross_entropy_mean(logits, &labels)
}

/// Standalone teacher-forced cross-entropy from pre-computed logits: mean
/// per-token negative log-likelihood.
pub fn aed_loss(logits: &Tensor<f64>, targets: &[usize]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::shape(
            "aed_loss",
            format!("{} logit rows", targets.len()),
            format!("{} logit rows", logits.rows()),
        ));
    }
    let mut tape: Tape<f64> = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy_mean(l, targets);
    Ok(tape.value(loss).item())
}

/// Greedy autoregressive decoding until EOS or the length cap `2 * frames`.
pub fn aed_greedy_decode(cfg: &AsrConfig, params: &ParamSet<f32>, enc_out: &Tensor<f32>) -> Vec<usize> {
    aed_greedy_decode_prefixed(cfg, params, enc_out, &[BOS])
}

/// Greedy decoding primed with a token prefix (BOS plus, e.g., a task tag).
/// Emitted tokens after the prefix are returned.
pub fn aed_greedy_decode_prefixed(
    cfg: &AsrConfig,
    params: &ParamSet<f32>,
    enc_out: &Tensor<f32>,
    prefix: &[usize],
) -> Vec<usize> {
    let cap = 2 * enc_out.rows();
    let mut tokens = prefix.to_vec();
    let mut out = Vec::new();
    while out.len() < cap {
        let mut tape: Tape<f32> = Tape::new();
        let b = bind_params(&mut tape, params);
        let enc = tape.constant(enc_out.clone());
        let logits = forward_decoder(cfg, &mut tape, &b, enc, &tokens);
        let last = tape.value(logits).rows() - 1;
        let row = tape.value(logits).row(last);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == EOS {
            break;
        }
        out.push(argmax);
        tokens.push(argmax);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::HeadKind;
    use crate::nn::seeded_stream;

    #[test]
    fn uniform_logits_loss_is_ln_v() {
        let logits = Tensor::zeros(&[4, 10]);
        let loss = aed_loss(&logits, &[1, 2, 3, 4]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn near_one_hot_logits_drive_loss_to_zero() {
        let mut logits = Tensor::zeros(&[3, 6]);
        for (r, &t) in [1usize, 4, 2].iter().enumerate() {
            logits[(r, t)] = 50.0;
        }
        let loss = aed_loss(&logits, &[1, 4, 2]).unwrap();
        assert!(loss < 1e-9, "{loss}");
    }

    #[test]
    fn per_position_symmetry_under_permutation() {
        let mut rng = seeded_stream(9, "aed");
        let data: Vec<f64> = (0..5 * 7).map(|_| rng.normal_f64()).collect();
        let logits = Tensor::from_vec(&[5, 7], data);
        let targets = [3usize, 1, 6, 0, 2];
        let base = aed_loss(&logits, &targets).unwrap();

        // Permute rows and targets together: identical mean loss.
        let perm = [4usize, 2, 0, 1, 3];
        let mut pdata = Vec::new();
        for &p in &perm {
            pdata.extend_from_slice(logits.row(p));
        }
        let plogits = Tensor::from_vec(&[5, 7], pdata);
        let ptargets: Vec<usize> = perm.iter().map(|&p| targets[p]).collect();
        let permuted = aed_loss(&plogits, &ptargets).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_error() {
        let logits = Tensor::zeros(&[3, 5]);
        assert!(aed_loss(&logits, &[1, 2]).is_err());
    }

    #[test]
    fn greedy_decode_respects_cap_and_determinism() {
        let cfg = AsrConfig {
            mel_bins: 4,
            width: 8,
            heads: 2,
            blocks_low: 1,
            blocks_high: 1,
            ffn_mult: 2,
            head: HeadKind::Aed,
            dec_blocks: 1,
            joint_dim: 8,
            vocab: 9,
        };
        let mut rng = seeded_stream(1, "init");
        let params = cfg.init_params(&mut rng);
        let enc = Tensor::from_vec(&[5, 8], (0..40).map(|i| (i as f32 * 0.21).cos()).collect());
        let a = aed_greedy_decode(&cfg, &params, &enc);
        let b = aed_greedy_decode(&cfg, &params, &enc);
        assert_eq!(a, b);
        assert!(a.len() <= 10);
    }
}
