use super::lexicon::{PhonemeSeq, MASK_ID};
use crate::nn::RngStream;

/// Replace exactly `round(ratio * len)` positions with the mask symbol,
/// sampled uniformly without replacement. Output length equals input length;
/// returns the masked sequence and the chosen positions (sorted).
pub fn mask_phonemes(seq: &PhonemeSeq, ratio: f64, rng: &mut RngStream) -> (PhonemeSeq, Vec<usize>) {
    assert!((0.0..=1.0).contains(&ratio), "mask ratio {ratio} outside [0, 1]");
    let k = (ratio * seq.len() as f64).round() as usize;
    let positions = rng.sample_indices(seq.len(), k);
    let mut masked = seq.clone();
    for &p in &positions {
        masked[p] = MASK_ID;
    }
    (masked, positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    #[test]
    fn thirty_percent_of_ten_is_three() {
        let seq: PhonemeSeq = (0..10).map(|i| i % 5).collect();
        let mut rng = seeded_stream(0, "mask");
        let (masked, pos) = mask_phonemes(&seq, 0.3, &mut rng);
        assert_eq!(masked.len(), 10);
        assert_eq!(pos.len(), 3);
        assert_eq!(masked.iter().filter(|&&p| p == MASK_ID).count(), 3);
    }

    #[test]
    fn ratio_zero_is_identity() {
        let seq: PhonemeSeq = vec![1, 2, 3, 4];
        let mut rng = seeded_stream(0, "mask");
        let (masked, pos) = mask_phonemes(&seq, 0.0, &mut rng);
        assert_eq!(masked, seq);
        assert!(pos.is_empty());
    }

    #[test]
    fn ratio_one_masks_everything() {
        let seq: PhonemeSeq = vec![1, 2, 3, 4];
        let mut rng = seeded_stream(0, "mask");
        let (masked, _) = mask_phonemes(&seq, 1.0, &mut rng);
        assert!(masked.iter().all(|&p| p == MASK_ID));
    }

    #[test]
    fn empirical_fraction_near_ratio() {
        // Over many variable-length sequences the rounded per-sequence count
        // keeps the aggregate fraction within [0.28, 0.32] at ratio 0.3.
        let mut rng = seeded_stream(7, "mask-fraction");
        let mut total = 0usize;
        let mut masked_count = 0usize;
        let mut len_rng = seeded_stream(7, "mask-lens");
        while total < 10_000 {
            let len = 5 + len_rng.index(20);
            let seq: PhonemeSeq = (0..len).map(|i| i % 7).collect();
            let (masked, _) = mask_phonemes(&seq, 0.3, &mut rng);
            total += len;
            masked_count += masked.iter().filter(|&&p| p == MASK_ID).count();
        }
        let fraction = masked_count as f64 / total as f64;
        assert!((0.28..=0.32).contains(&fraction), "fraction {fraction}");
    }
}
