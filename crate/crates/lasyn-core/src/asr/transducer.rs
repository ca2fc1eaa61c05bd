use super::model::AsrConfig;
use super::{BLANK, BOS};
use crate::nn::tape::transducer_forward;
use crate::nn::{
    add_positional, Binding, Dense, EmbeddingLayer, LayerNormLayer, NodeId, ParamSet, RngStream,
    Scalar, Tape, Tensor, TransformerBlock,
};
use crate::{Error, Result};

fn embedding(cfg: &AsrConfig) -> EmbeddingLayer {
    EmbeddingLayer::new("pred.emb", cfg.vocab, cfg.width)
}

fn pred_block(cfg: &AsrConfig) -> TransformerBlock {
    TransformerBlock::new("pred.blk", cfg.width, cfg.heads, cfg.ffn_mult * cfg.width).causal()
}

fn enc_norm(cfg: &AsrConfig) -> LayerNormLayer {
    LayerNormLayer::new("joint.encln", cfg.width)
}

fn joint_enc(cfg: &AsrConfig) -> Dense {
    Dense::new("joint.enc", cfg.width, cfg.joint_dim)
}

fn joint_pred(cfg: &AsrConfig) -> Dense {
    Dense::new("joint.pred", cfg.width, cfg.joint_dim)
}

fn joint_out(cfg: &AsrConfig) -> Dense {
    Dense::new("joint.out", cfg.joint_dim, cfg.vocab)
}

pub(crate) fn init_head(cfg: &AsrConfig, params: &mut ParamSet<f32>, rng: &mut RngStream) {
    embedding(cfg).init(params, rng);
    pred_block(cfg).init(params, rng);
    enc_norm(cfg).init(params);
    joint_enc(cfg).init(params, rng);
    joint_pred(cfg).init(params, rng);
    joint_out(cfg).init(params, rng);
}

/// Predictor network over the label prefix: a single causal block at toy
/// scale. Input row `u` sees targets `< u`.
fn forward_predictor<F: Scalar>(
    cfg: &AsrConfig,
    tape: &mut Tape<F>,
    b: &Binding,
    targets: &[usize],
) -> NodeId {
    let mut tokens = Vec::with_capacity(targets.len() + 1);
    tokens.push(BOS);
    tokens.extend_from_slice(targets);
    let emb = embedding(cfg).forward(tape, b, &tokens);
    let emb = add_positional(tape, emb);
    pred_block(cfg).forward(tape, b, emb, None)
}

/// Joint-network logits over the `T x (U+1)` lattice, flattened to rows.
pub fn forward_joint<F: Scalar>(
    cfg: &AsrConfig,
    tape: &mut Tape<F>,
    b: &Binding,
    enc_out: NodeId,
    targets: &[usize],
) -> NodeId {
    let pred = forward_predictor(cfg, tape, b, targets);
    let enc_normed = enc_norm(cfg).forward(tape, b, enc_out);
    let enc_proj = joint_enc(cfg).forward(tape, b, enc_normed);
    let pred_proj = joint_pred(cfg).forward(tape, b, pred);
    let grid = tape.pairwise_add(enc_proj, pred_proj);
    let grid = tape.tanh(grid);
    joint_out(cfg).forward(tape, b, grid)
}

/// Transducer loss from encoder outputs and target tokens. `T >= 1`.
pub fn transducer_loss_nodes<F: Scalar>(
    cfg: &AsrConfig,
    tape: &mut Tape<F>,
    b: &Binding,
    enc_out: NodeId,
    targets: &[usize],
) -> Result<NodeId> {
    let time_len = tape.shape(enc_out)[0];
    if time_len == 0 {
        return Err(Error::EmptyInput("transducer encoder output".into()));
    }
    let logits = forward_joint(cfg, tape, b, enc_out, targets);
    Ok(tape.transducer_nll(logits, time_len, targets, BLANK))
}

/// Transducer NLL from a pre-normalized lattice of log-probabilities,
/// checked: every row must sum to one (within `1e-6`) or the call fails.
///
/// `log_probs` has `T*(U+1)` rows in `(t, u)` row-major order.
pub fn transducer_nll_checked(
    log_probs: &Tensor<f64>,
    time_len: usize,
    targets: &[usize],
    blank: usize,
) -> Result<f64> {
    if time_len == 0 {
        return Err(Error::EmptyInput("transducer lattice (T = 0)".into()));
    }
    if log_probs.rows() != time_len * (targets.len() + 1) {
        return Err(Error::shape(
            "transducer lattice",
            format!("{} rows", time_len * (targets.len() + 1)),
            format!("{} rows", log_probs.rows()),
        ));
    }
    for r in 0..log_probs.rows() {
        let sum: f64 = log_probs.row(r).iter().map(|&v| v.exp()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "lattice row {r} is not a normalized distribution (sum {sum})"
            )));
        }
    }
    Ok(transducer_forward(log_probs, time_len, targets, blank))
}

/// Greedy transducer decoding: argmax over the joint at the current lattice
/// cell, suppressing blanks from the output. A blank advances time; a label
/// is emitted and the predictor advances. Total emissions are capped at
/// `2 * frames` so an untrained model cannot loop.
pub fn transducer_greedy_decode(
    cfg: &AsrConfig,
    params: &ParamSet<f32>,
    enc_out: &Tensor<f32>,
) -> Vec<usize> {
    let time_len = enc_out.rows();
    let cap = 2 * time_len;
    let mut emitted: Vec<usize> = Vec::new();
    let mut tape: Tape<f32> = Tape::new();
    let b = crate::nn::bind_params(&mut tape, params);
    let enc = tape.constant(enc_out.clone());
    let enc_normed = enc_norm(cfg).forward(&mut tape, &b, enc);
    let enc_proj = joint_enc(cfg).forward(&mut tape, &b, enc_normed);

    let mut t = 0;
    let mut pred_proj = None;
    while t < time_len && emitted.len() < cap {
        // Predictor state for the current prefix; recomputed after each
        // emission.
        let pp = *pred_proj.get_or_insert_with(|| {
            let pred = forward_predictor(cfg, &mut tape, &b, &emitted);
            let last = tape.shape(pred)[0] - 1;
            let pred_last = tape.slice_rows(pred, last, 1);
            joint_pred(cfg).forward(&mut tape, &b, pred_last)
        });
        let enc_t = tape.slice_rows(enc_proj, t, 1);
        let grid = tape.pairwise_add(enc_t, pp);
        let grid = tape.tanh(grid);
        let logits = joint_out(cfg).forward(&mut tape, &b, grid);
        let row = tape.value(logits).row(0);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == BLANK {
            t += 1;
        } else {
            emitted.push(argmax);
            pred_proj = None;
        }
    }
    emitted
}

/// Brute-force oracle: enumerate every monotone alignment of the lattice and
/// sum path probabilities directly. Exponential; for tiny `(T, U)` only.
pub fn transducer_nll_bruteforce(
    log_probs: &Tensor<f64>,
    time_len: usize,
    targets: &[usize],
    blank: usize,
) -> f64 {
    fn walk(
        log_probs: &Tensor<f64>,
        time_len: usize,
        targets: &[usize],
        blank: usize,
        t: usize,
        u: usize,
        acc: f64,
        total: &mut Vec<f64>,
    ) {
        let width = targets.len() + 1;
        let row = t * width + u;
        if t == time_len - 1 && u == targets.len() {
            total.push(acc + log_probs[(row, blank)]);
        }
        // blank: advance time
        if t + 1 < time_len {
            walk(
                log_probs,
                time_len,
                targets,
                blank,
                t + 1,
                u,
                acc + log_probs[(row, blank)],
                total,
            );
        }
        // label: advance target
        if u < targets.len() {
            walk(
                log_probs,
                time_len,
                targets,
                blank,
                t,
                u + 1,
                acc + log_probs[(row, targets[u])],
                total,
            );
        }
    }
    let mut terms = Vec::new();
    walk(log_probs, time_len, targets, blank, 0, 0, 0.0, &mut terms);
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    -(mx + terms.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    /// Random normalized lattice in log domain.
    fn random_lattice(time_len: usize, u_len: usize, vocab: usize, rng: &mut crate::nn::RngStream) -> Tensor<f64> {
        let rows = time_len * (u_len + 1);
        let mut t = Tensor::zeros(&[rows, vocab]);
        for r in 0..rows {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.uniform_f64() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            for (c, &v) in raw.iter().enumerate() {
                t[(r, c)] = (v / sum).ln();
            }
        }
        t
    }

    #[test]
    fn uniform_single_frame_empty_target() {
        let vocab = 5;
        let lp = Tensor::filled(&[1, vocab], (1.0f64 / vocab as f64).ln());
        let loss = transducer_nll_checked(&lp, 1, &[], 0).unwrap();
        assert!((loss - (vocab as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn t2_u1_matches_three_path_enumeration() {
        let mut rng = seeded_stream(3, "lattice");
        let lp = random_lattice(2, 1, 4, &mut rng);
        let dp = transducer_nll_checked(&lp, 2, &[2], 0).unwrap();
        // Paths: (blank,label,blank exit), (label,blank,blank exit) — on the
        // 2x2 lattice: b(0,0)y(1,0)b(1,1) ; y(0,0)b(0,1)b(1,1).
        let p1 = lp[(0, 0)] + lp[(2, 2)] + lp[(3, 0)];
        let p2 = lp[(0, 2)] + lp[(1, 0)] + lp[(3, 0)];
        let expect = -((p1.exp() + p2.exp()).ln());
        assert!((dp - expect).abs() < 1e-9, "{dp} vs {expect}");
        let brute = transducer_nll_bruteforce(&lp, 2, &[2], 0);
        assert!((dp - brute).abs() < 1e-9);
    }

    #[test]
    fn empty_target_is_blank_only_path() {
        let mut rng = seeded_stream(4, "lattice");
        let time_len = 3;
        let lp = random_lattice(time_len, 0, 4, &mut rng);
        let dp = transducer_nll_checked(&lp, time_len, &[], 0).unwrap();
        let expect: f64 = -(0..time_len).map(|t| lp[(t, 0)]).sum::<f64>();
        assert!((dp - expect).abs() < 1e-9);
    }

    #[test]
    fn dp_equals_bruteforce_for_all_small_lattices() {
        let mut rng = seeded_stream(5, "lattice");
        let mut cases = 0;
        for time_len in 1..=3usize {
            for u_len in 0..=2usize {
                for _ in 0..100 {
                    let vocab = 4;
                    let lp = random_lattice(time_len, u_len, vocab, &mut rng);
                    let targets: Vec<usize> = (0..u_len).map(|_| 1 + rng.index(vocab - 1)).collect();
                    let dp = transducer_nll_checked(&lp, time_len, &targets, 0).unwrap();
                    let brute = transducer_nll_bruteforce(&lp, time_len, &targets, 0);
                    assert!((dp - brute).abs() < 1e-6, "T={time_len} U={u_len}: {dp} vs {brute}");
                    cases += 1;
                }
            }
        }
        assert_eq!(cases, 900);
    }

    #[test]
    fn zero_time_is_error() {
        let lp = Tensor::zeros(&[0, 4]);
        assert!(transducer_nll_checked(&lp, 0, &[], 0).is_err());
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let lp = Tensor::filled(&[1, 4], -0.5f64);
        assert!(transducer_nll_checked(&lp, 1, &[], 0).is_err());
    }

    #[test]
    fn greedy_decode_is_deterministic_and_capped() {
        let cfg = AsrConfig {
            mel_bins: 4,
            width: 8,
            heads: 2,
            blocks_low: 1,
            blocks_high: 1,
            ffn_mult: 2,
            head: super::super::HeadKind::Transducer,
            dec_blocks: 1,
            joint_dim: 8,
            vocab: 7,
        };
        let mut rng = seeded_stream(0, "init");
        let params = cfg.init_params(&mut rng);
        let enc = Tensor::from_vec(&[6, 8], (0..48).map(|i| (i as f32 * 0.13).sin()).collect());
        let a = transducer_greedy_decode(&cfg, &params, &enc);
        let b = transducer_greedy_decode(&cfg, &params, &enc);
        assert_eq!(a, b);
        assert!(a.len() <= 12, "cap is 2x frames");
    }
}
