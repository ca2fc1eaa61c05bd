use std::io::{Read, Write};
use std::path::Path;

use super::lexicon::{PhonemeSeq, MASK_ID};
use crate::nn::RngStream;
use crate::{Error, Result};

pub const SAMPLE_RATE: usize = 16_000;

const MIN_SEGMENT_MS: usize = 60;
const MAX_SEGMENT_MS: usize = 120;

/// Per-phoneme segment length in samples, drawn uniformly in [60, 120] ms.
fn segment_samples(rng: &mut RngStream) -> usize {
    let ms = MIN_SEGMENT_MS + rng.index(MAX_SEGMENT_MS - MIN_SEGMENT_MS + 1);
    ms * SAMPLE_RATE / 1000
}

/// Render a phoneme sequence as 16 kHz mono audio.
///
/// Each phoneme becomes a segment of a phoneme-specific two-sine mixture
/// with a light third harmonic; the speaker id pitch-shifts all components
/// in semitone steps. Low-amplitude noise comes from `rng`, so the waveform
/// is fully determined by `(seq, speaker, rng, noise_amp)`.
pub fn synth_waveform(
    seq: &PhonemeSeq,
    speaker: usize,
    rng: &mut RngStream,
    noise_amp: f64,
) -> Result<Vec<f32>> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("synth_waveform phoneme sequence".into()));
    }
    if seq.iter().any(|&p| p == MASK_ID) {
        return Err(Error::Invalid("cannot synthesize a masked phoneme".into()));
    }

    // Speakers are spread across one octave in a non-monotonic order, so a
    // held-out speaker id falls inside the pitch range of the seen ones.
    // Only the voicing component is pitch-shifted; the two upper mixture
    // components carry phoneme identity for every speaker.
    let pitch = 2.0f64.powf(((speaker * 5) % 12) as f64 / 12.0);
    let mut out = Vec::new();
    for &p in seq {
        let n = segment_samples(rng);
        let f1 = pitch * (150.0 + 24.0 * p as f64);
        let f2 = 900.0 + 150.0 * p as f64;
        let f3 = 3600.0 + 95.0 * p as f64;
        let ramp = SAMPLE_RATE / 100; // 10 ms attack/decay
        for i in 0..n {
            let t = i as f64 / SAMPLE_RATE as f64;
            let mut v = 0.26 * (std::f64::consts::TAU * f1 * t).sin()
                + 0.28 * (std::f64::consts::TAU * f2 * t).sin()
                + 0.12 * (std::f64::consts::TAU * f3 * t).sin();
            let env = if i < ramp {
                i as f64 / ramp as f64
            } else if i + ramp > n {
                (n - i) as f64 / ramp as f64
            } else {
                1.0
            };
            v *= env;
            v += noise_amp * rng.normal_f64();
            out.push(v.clamp(-1.0, 1.0) as f32);
        }
    }
    Ok(out)
}

/// Length bounds implied by the per-phoneme segment range, in samples.
pub fn duration_bounds(phoneme_count: usize) -> (usize, usize) {
    (
        phoneme_count * MIN_SEGMENT_MS * SAMPLE_RATE / 1000,
        phoneme_count * MAX_SEGMENT_MS * SAMPLE_RATE / 1000,
    )
}

/// Write mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(44 + samples.len() * 2);
    let data_len = (samples.len() * 2) as u32;
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVEfmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&(SAMPLE_RATE as u32).to_le_bytes());
    bytes.extend_from_slice(&((SAMPLE_RATE * 2) as u32).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Read mono 16-bit PCM WAV written by [`write_wav`].
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 44 || &bytes[..4] != b"RIFF" || &bytes[8..16] != b"WAVEfmt " {
        return Err(Error::Invalid(format!("{} is not a WAV file", path.display())));
    }
    let data = &bytes[44..];
    let mut samples = Vec::with_capacity(data.len() / 2);
    for chunk in data.chunks_exact(2) {
        let q = i16::from_le_bytes([chunk[0], chunk[1]]);
        samples.push(q as f32 / 32767.0);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lexicon::PHONEMES;
    use crate::nn::seeded_stream;

    #[test]
    fn duration_in_per_phoneme_bounds() {
        let seq: PhonemeSeq = vec![0, 3, 7];
        let mut rng = seeded_stream(0, "wave");
        let wav = synth_waveform(&seq, 0, &mut rng, 0.01).unwrap();
        let (lo, hi) = duration_bounds(3);
        assert!(wav.len() >= lo && wav.len() <= hi, "{} samples", wav.len());
        // 3 phonemes: 180..360 ms at 16 kHz
        assert_eq!(lo, 2880);
        assert_eq!(hi, 5760);
    }

    #[test]
    fn deterministic_given_seed() {
        let seq: PhonemeSeq = vec![1, 2, 3];
        let a = synth_waveform(&seq, 1, &mut seeded_stream(5, "wave"), 0.02).unwrap();
        let b = synth_waveform(&seq, 1, &mut seeded_stream(5, "wave"), 0.02).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn speakers_differ() {
        let seq: PhonemeSeq = vec![1, 2, 3];
        let a = synth_waveform(&seq, 0, &mut seeded_stream(5, "wave"), 0.0).unwrap();
        let b = synth_waveform(&seq, 1, &mut seeded_stream(5, "wave"), 0.0).unwrap();
        assert_eq!(a.len(), b.len());
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 0.0);
    }

    #[test]
    fn mask_in_input_is_error() {
        let seq: PhonemeSeq = vec![1, MASK_ID];
        let mut rng = seeded_stream(0, "wave");
        assert!(synth_waveform(&seq, 0, &mut rng, 0.0).is_err());
    }

    #[test]
    fn all_phonemes_render() {
        let seq: PhonemeSeq = (0..PHONEMES.len()).collect();
        let mut rng = seeded_stream(0, "wave");
        let wav = synth_waveform(&seq, 2, &mut rng, 0.01).unwrap();
        assert!(wav.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn wav_roundtrip_close() {
        let dir = std::env::temp_dir().join("lasyn-wav-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wav");
        let seq: PhonemeSeq = vec![4, 9];
        let wav = synth_waveform(&seq, 0, &mut seeded_stream(1, "wave"), 0.01).unwrap();
        write_wav(&path, &wav).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), wav.len());
        for (a, b) in wav.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }
}
