//! Log-mel filterbank features and spectrogram augmentation.

pub mod specaug;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::nn::Tensor;
use crate::{Error, Result};

pub use specaug::{spec_augment, SpecAugmentConfig};

/// Feature extraction configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate: usize,
    pub window_ms: usize,
    pub hop_ms: usize,
    pub mel_bins: usize,
    /// Clamp applied after the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            window_ms: 20,
            hop_ms: 10,
            mel_bins: 128,
            log_floor: -10.0,
        }
    }
}

impl MelConfig {
    pub fn window_samples(&self) -> usize {
        self.sample_rate * self.window_ms / 1000
    }

    pub fn hop_samples(&self) -> usize {
        self.sample_rate * self.hop_ms / 1000
    }

    fn validate(&self) -> Result<()> {
        if self.hop_samples() == 0 || self.window_samples() < self.hop_samples() {
            return Err(Error::Invalid(format!(
                "mel config needs window >= hop > 0, got {}ms/{}ms",
                self.window_ms, self.hop_ms
            )));
        }
        if self.mel_bins == 0 {
            return Err(Error::Invalid("mel_bins must be positive".into()));
        }
        Ok(())
    }
}

/// Frames-by-bins feature matrix with its frame rate.
#[derive(Debug, Clone)]
pub struct FeatureSeq {
    pub features: Tensor<f32>,
    pub frame_ms: usize,
}

impl FeatureSeq {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn bins(&self) -> usize {
        self.features.cols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the one-sided spectrum (`n_fft/2 + 1` bins).
pub fn mel_filterbank(mel_bins: usize, n_fft: usize, sample_rate: usize) -> Tensor<f64> {
    let n_spec = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let centers: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let df = sample_rate as f64 / n_fft as f64;
    let mut fb = Tensor::zeros(&[mel_bins, n_spec]);
    for m in 0..mel_bins {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..n_spec {
            let f = k as f64 * df;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            fb[(m, k)] = rise.min(fall).max(0.0);
        }
    }
    fb
}

/// Log-mel features: Hann window, power spectrum, triangular mel filters,
/// natural log clamped at the configured floor. Deterministic, no RNG.
///
/// Frame count is `1 + floor((N - window) / hop)`.
pub fn logmel(waveform: &[f32], cfg: &MelConfig) -> Result<FeatureSeq> {
    cfg.validate()?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if waveform.len() < win {
        return Err(Error::Invalid(format!(
            "waveform has {} samples, shorter than one {win}-sample window",
            waveform.len()
        )));
    }
    let frames = 1 + (waveform.len() - win) / hop;
    let n_spec = win / 2 + 1;
    let fb = mel_filterbank(cfg.mel_bins, win, cfg.sample_rate);

    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / win as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(win);
    let mut features = Tensor::zeros(&[frames, cfg.mel_bins]);
    let mut buf = vec![Complex::new(0.0, 0.0); win];

    for frame in 0..frames {
        let start = frame * hop;
        for i in 0..win {
            buf[i] = Complex::new(waveform[start + i] as f64 * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for m in 0..cfg.mel_bins {
            let mut energy = 0.0;
            for k in 0..n_spec {
                let w = fb[(m, k)];
                if w > 0.0 {
                    energy += w * buf[k].norm_sqr();
                }
            }
            features[(frame, m)] = energy.ln().max(cfg.log_floor) as f32;
        }
    }
    Ok(FeatureSeq {
        features,
        frame_ms: cfg.hop_ms,
    })
}
