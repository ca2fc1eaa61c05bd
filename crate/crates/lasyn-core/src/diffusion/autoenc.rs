use crate::asr::LatentSeq;
use crate::nn::{
    adam_step, bind_params, collect_grads, AdamHyper, Binding, Conv1dLayer, GradSet, NodeId,
    OptState, ParamSet, RngStream, Scalar, Tape, Tensor,
};
use crate::{Error, Result};

/// Channel-compressing autoencoder over latent sequences. Time length is
/// always preserved; only the channel dimension shrinks.
#[derive(Debug, Clone)]
pub struct AutoencConfig {
    pub width: usize,
    pub compressed: usize,
    pub hidden: usize,
}

impl AutoencConfig {
    /// Factor-4 channel compression of a `width`-dimensional latent space.
    pub fn for_width(width: usize) -> Self {
        AutoencConfig {
            width,
            compressed: (width / 4).max(1),
            hidden: width,
        }
    }

    fn enc0(&self) -> Conv1dLayer {
        Conv1dLayer::new("ae.enc.c0", self.width, self.hidden, 3, 1)
    }

    fn enc1(&self) -> Conv1dLayer {
        Conv1dLayer::new("ae.enc.c1", self.hidden, self.compressed, 3, 1)
    }

    fn dec0(&self) -> Conv1dLayer {
        Conv1dLayer::new("ae.dec.c0", self.compressed, self.hidden, 3, 1)
    }

    fn dec1(&self) -> Conv1dLayer {
        Conv1dLayer::new("ae.dec.c1", self.hidden, self.width, 3, 1)
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet<f32> {
        let mut params = ParamSet::new();
        self.enc0().init(&mut params, rng);
        self.enc1().init(&mut params, rng);
        self.dec0().init(&mut params, rng);
        self.dec1().init(&mut params, rng);
        params
    }

    pub fn encode_nodes<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, x: NodeId) -> NodeId {
        let h = self.enc0().forward(tape, b, x);
        let h = tape.silu(h);
        self.enc1().forward(tape, b, h)
    }

    pub fn decode_nodes<F: Scalar>(&self, tape: &mut Tape<F>, b: &Binding, z: NodeId) -> NodeId {
        let h = self.dec0().forward(tape, b, z);
        let h = tape.silu(h);
        self.dec1().forward(tape, b, h)
    }
}

/// A trained channel autoencoder.
#[derive(Debug, Clone)]
pub struct LatentAutoencoder {
    pub cfg: AutoencConfig,
    pub params: ParamSet<f32>,
}

impl LatentAutoencoder {
    pub fn encode(&self, latent: &Tensor<f32>) -> Tensor<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let b = bind_params(&mut tape, &self.params);
        let x = tape.constant(latent.clone());
        let z = self.cfg.encode_nodes(&mut tape, &b, x);
        tape.value(z).clone()
    }

    pub fn decode(&self, compressed: &Tensor<f32>) -> Tensor<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let b = bind_params(&mut tape, &self.params);
        let z = tape.constant(compressed.clone());
        let x = self.cfg.decode_nodes(&mut tape, &b, z);
        tape.value(x).clone()
    }

    /// Mean squared reconstruction error over a held-out set.
    pub fn reconstruction_mse(&self, latents: &[LatentSeq]) -> f64 {
        let mut total = 0.0f64;
        let mut count = 0usize;
        for l in latents {
            let rec = self.decode(&self.encode(&l.data));
            for (a, b) in l.data.data().iter().zip(rec.data()) {
                let d = (*a - *b) as f64;
                total += d * d;
            }
            count += l.data.len();
        }
        total / count.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct AutoencTrainOpts {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for AutoencTrainOpts {
    fn default() -> Self {
        AutoencTrainOpts {
            lr: 2e-3,
            epochs: 40,
            batch: 8,
        }
    }
}

/// Train the autoencoder on real latent sequences with mean-squared
/// reconstruction loss. Fewer than 10 sequences is an error.
pub fn train_autoencoder(
    cfg: &AutoencConfig,
    corpus: &[LatentSeq],
    opts: &AutoencTrainOpts,
    rng: &RngStream,
) -> Result<(LatentAutoencoder, Vec<f64>)> {
    if corpus.len() < 10 {
        return Err(Error::Invalid(format!(
            "autoencoder corpus has {} sequences, need >= 10",
            corpus.len()
        )));
    }
    let mut params = cfg.init_params(&mut rng.derive("ae-init"));
    let mut order_rng = rng.derive("ae-order");
    let mut state = OptState::new();
    let hyper = AdamHyper {
        lr: opts.lr,
        ..AdamHyper::default()
    };
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for _epoch in 0..opts.epochs {
        order_rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch) {
            let mut grads = GradSet::new();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape: Tape<f32> = Tape::new();
                let b = bind_params(&mut tape, &params);
                let x = tape.constant(corpus[i].data.clone());
                let z = cfg.encode_nodes(&mut tape, &b, x);
                let rec = cfg.decode_nodes(&mut tape, &b, z);
                let diff = tape.sub(rec, x);
                let sq = tape.mul(diff, diff);
                let loss = tape.mean_all(sq);
                let lv = tape.value(loss).item() as f64;
                if !lv.is_finite() {
                    return Err(Error::NonFinite("autoencoder loss".into()));
                }
                batch_loss += lv;
                let g = tape.backward(loss);
                collect_grads(&b, &g, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            adam_step(&mut params, &grads, &mut state, &hyper)?;
            curve.push(batch_loss / chunk.len() as f64);
        }
    }

    Ok((LatentAutoencoder { cfg: cfg.clone(), params }, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::Provenance;
    use crate::nn::seeded_stream;

    fn random_latents(n: usize, width: usize, seed: u64) -> Vec<LatentSeq> {
        let mut rng = seeded_stream(seed, "latents");
        (0..n)
            .map(|_| {
                let frames = 4 + rng.index(8);
                let data: Vec<f32> = (0..frames * width)
                    .map(|_| rng.normal_f64() as f32 * 0.5)
                    .collect();
                LatentSeq {
                    data: Tensor::from_vec(&[frames, width], data),
                    frame_ms: 40,
                    provenance: Provenance::Real,
                }
            })
            .collect()
    }

    #[test]
    fn factor_four_contract() {
        let cfg = AutoencConfig::for_width(256);
        assert_eq!(cfg.compressed, 64);
    }

    #[test]
    fn encode_preserves_time_length() {
        let cfg = AutoencConfig::for_width(16);
        let mut rng = seeded_stream(0, "ae");
        let params = cfg.init_params(&mut rng);
        let ae = LatentAutoencoder { cfg, params };
        for frames in [1usize, 3, 9] {
            let x = Tensor::filled(&[frames, 16], 0.3f32);
            let z = ae.encode(&x);
            assert_eq!(z.rows(), frames);
            assert_eq!(z.cols(), 4);
            assert_eq!(ae.decode(&z).rows(), frames);
        }
    }

    #[test]
    fn identity_capable_at_compression_factor_one() {
        // compressed == width: reconstruction error can approach zero.
        let cfg = AutoencConfig {
            width: 8,
            compressed: 8,
            hidden: 16,
        };
        let corpus = random_latents(16, 8, 1);
        let opts = AutoencTrainOpts {
            lr: 2e-3,
            epochs: 800,
            batch: 8,
        };
        let rng = seeded_stream(2, "ae-train");
        let (ae, curve) = train_autoencoder(&cfg, &corpus, &opts, &rng).unwrap();
        let train_err = ae.reconstruction_mse(&corpus);
        assert!(train_err < 1e-3, "train error {train_err}, last loss {:?}", curve.last());
    }

    #[test]
    fn small_corpus_rejected() {
        let cfg = AutoencConfig::for_width(8);
        let corpus = random_latents(5, 8, 3);
        let rng = seeded_stream(0, "ae-train");
        assert!(train_autoencoder(&cfg, &corpus, &AutoencTrainOpts::default(), &rng).is_err());
    }

    #[test]
    fn deterministic_training() {
        let cfg = AutoencConfig::for_width(8);
        let corpus = random_latents(12, 8, 4);
        let opts = AutoencTrainOpts {
            epochs: 3,
            ..AutoencTrainOpts::default()
        };
        let run = || {
            let rng = seeded_stream(9, "ae-train");
            train_autoencoder(&cfg, &corpus, &opts, &rng)
                .unwrap()
                .0
                .params
                .content_hash()
        };
        assert_eq!(run(), run());
    }
}
