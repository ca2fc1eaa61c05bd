use super::FeatureSeq;
use crate::nn::{RngStream, Tensor};

/// Mask counts and maximum widths. A mask width is drawn uniformly from
/// `0..=max` and its start uniformly over valid positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecAugmentConfig {
    pub time_masks: usize,
    pub time_width: usize,
    pub freq_masks: usize,
    pub freq_width: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            time_masks: 2,
            time_width: 16,
            freq_masks: 2,
            freq_width: 12,
        }
    }
}

/// SpecAugment-style time and frequency masking. Masked cells are set to the
/// per-utterance mean (computed before masking); unmasked cells are
/// bit-identical to the input. Shape never changes.
pub fn spec_augment(features: &FeatureSeq, cfg: &SpecAugmentConfig, rng: &mut RngStream) -> FeatureSeq {
    let (frames, bins) = (features.frames(), features.bins());
    assert!(cfg.time_width < frames.max(1), "time mask width must be below frame count");
    assert!(cfg.freq_width < bins, "freq mask width must be below bin count");

    let mean = features.features.data().iter().map(|&v| v as f64).sum::<f64>()
        / features.features.len() as f64;
    let fill = mean as f32;

    let mut out: Tensor<f32> = features.features.clone();
    for _ in 0..cfg.time_masks {
        let w = rng.index(cfg.time_width + 1);
        let start = rng.index(frames - w + 1);
        for t in start..start + w {
            for b in 0..bins {
                out[(t, b)] = fill;
            }
        }
    }
    for _ in 0..cfg.freq_masks {
        let w = rng.index(cfg.freq_width + 1);
        let start = rng.index(bins - w + 1);
        for t in 0..frames {
            for b in start..start + w {
                out[(t, b)] = fill;
            }
        }
    }
    FeatureSeq {
        features: out,
        frame_ms: features.frame_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    fn ramp_features(frames: usize, bins: usize) -> FeatureSeq {
        let data: Vec<f32> = (0..frames * bins).map(|i| i as f32 * 0.01 - 3.0).collect();
        FeatureSeq {
            features: Tensor::from_vec(&[frames, bins], data),
            frame_ms: 10,
        }
    }

    #[test]
    fn zero_masks_is_identity() {
        let feats = ramp_features(20, 16);
        let cfg = SpecAugmentConfig {
            time_masks: 0,
            freq_masks: 0,
            time_width: 4,
            freq_width: 4,
        };
        let mut rng = seeded_stream(0, "specaug");
        let out = spec_augment(&feats, &cfg, &mut rng);
        assert_eq!(out.features, feats.features);
    }

    #[test]
    fn one_full_width_freq_mask_alters_exactly_that_band() {
        let feats = ramp_features(12, 32);
        // A single freq mask; force width 8 by retrying seeds until the draw
        // is exactly 8 (deterministic once found).
        let cfg = SpecAugmentConfig {
            time_masks: 0,
            time_width: 0,
            freq_masks: 1,
            freq_width: 8,
        };
        let mut chosen = None;
        for seed in 0..200 {
            let mut rng = seeded_stream(seed, "specaug");
            if rng.index(9) == 8 {
                chosen = Some(seed);
                break;
            }
        }
        let seed = chosen.expect("some seed draws width 8");
        let mut rng = seeded_stream(seed, "specaug");
        let out = spec_augment(&feats, &cfg, &mut rng);

        // Exactly 8 consecutive bins altered in every frame.
        let mut altered_bins = Vec::new();
        for b in 0..32 {
            let changed = (0..12).all(|t| out.features[(t, b)] != feats.features[(t, b)]);
            let unchanged = (0..12).all(|t| out.features[(t, b)] == feats.features[(t, b)]);
            assert!(changed || unchanged, "bin {b} partially masked");
            if changed {
                altered_bins.push(b);
            }
        }
        assert_eq!(altered_bins.len(), 8);
        for w in altered_bins.windows(2) {
            assert_eq!(w[1], w[0] + 1);
        }
    }

    #[test]
    fn shape_is_preserved_and_fill_is_mean() {
        let feats = ramp_features(30, 24);
        let cfg = SpecAugmentConfig::default();
        let mut rng = seeded_stream(3, "specaug");
        let out = spec_augment(&feats, &cfg, &mut rng);
        assert_eq!(out.features.shape(), feats.features.shape());
        let mean = feats.features.data().iter().map(|&v| v as f64).sum::<f64>()
            / feats.features.len() as f64;
        for (a, b) in feats.features.data().iter().zip(out.features.data()) {
            if a != b {
                assert!((*b as f64 - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn masked_fraction_matches_analytic_expectation() {
        // One time mask (max Wt) and one freq mask (max Wf), independent:
        // E[fraction] = 1 - (1 - E[wt]/T)(1 - E[wf]/F) with E[w] = W/2.
        let frames = 40;
        let bins = 20;
        let cfg = SpecAugmentConfig {
            time_masks: 1,
            time_width: 10,
            freq_masks: 1,
            freq_width: 6,
        };
        let feats = ramp_features(frames, bins);
        let mut rng = seeded_stream(11, "specaug-frac");
        let mut masked = 0usize;
        let draws = 1000;
        for _ in 0..draws {
            let out = spec_augment(&feats, &cfg, &mut rng);
            masked += out
                .features
                .data()
                .iter()
                .zip(feats.features.data())
                .filter(|(a, b)| a != b)
                .count();
        }
        let observed = masked as f64 / (draws * frames * bins) as f64;
        let et = cfg.time_width as f64 / 2.0 / frames as f64;
        let ef = cfg.freq_width as f64 / 2.0 / bins as f64;
        let expected = 1.0 - (1.0 - et) * (1.0 - ef);
        // Mean-fill can coincide with a cell value; tolerance covers it.
        assert!(
            (observed - expected).abs() / expected < 0.10,
            "observed {observed:.4}, expected {expected:.4}"
        );
    }
}
