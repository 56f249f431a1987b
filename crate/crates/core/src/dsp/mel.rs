use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::spectrogram::LogMelSpectrogram;
use super::wav::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_ms: 64.0,
            hop_ms: 10.0,
            n_mels: 64,
            f_min: 60.0,
            f_max: 7800.0,
            log_floor: 1e-7,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    /// Value of a silent cell, `ln(log_floor)`.
    pub fn silence(&self) -> f32 {
        self.log_floor.ln() as f32
    }

    /// Frames produced for `len` samples, or `None` if shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        let win = self.window_samples();
        (len >= win).then(|| 1 + (len - win) / self.hop_samples())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("frontend: {m}")));
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return bad("need 0 <= f_min < f_max");
        }
        if self.f_max > self.sample_rate as f64 / 2.0 {
            return bad("f_max above Nyquist");
        }
        if self.window_ms <= self.hop_ms || self.hop_ms <= 0.0 {
            return bad("need window_ms > hop_ms > 0");
        }
        if self.n_mels == 0 || !(self.log_floor > 0.0) {
            return bad("need n_mels > 0 and log_floor > 0");
        }
        Ok(())
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale with peaks at `n_mels + 2`
/// equally-mel-spaced points over `[f_min, f_max]`; unnormalized (peak 1).
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    /// Row-major `n_mels x n_bins`.
    weights: Vec<f32>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &FrontendConfig) -> Self {
        let n_fft = cfg.window_samples();
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges_hz: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0f32; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                weights[m * n_bins + k] = up.min(down).max(0.0) as f32;
            }
        }
        Self {
            n_mels: cfg.n_mels,
            n_bins,
            weights,
            edges_hz,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }
}

struct Stft {
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl Stft {
    fn new(n_fft: usize) -> Self {
        // periodic Hann
        let window = (0..n_fft)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos()) as f32)
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self { window, fft }
    }
}

/// Power-spectrum log-mel features, frames without centering:
/// `T = 1 + floor((len - window) / hop)`.
pub fn compute_logmel(wave: &Waveform, cfg: &FrontendConfig) -> Result<LogMelSpectrogram> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::UnsupportedSampleRate(wave.sample_rate));
    }
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    let n_frames = cfg
        .frame_count(wave.len())
        .ok_or(Error::WaveformTooShort {
            len: wave.len(),
            min: win,
        })?;
    let bank = MelFilterbank::new(cfg);
    let stft = Stft::new(win);
    let mut buf = vec![Complex::new(0f32, 0f32); win];
    let mut scratch = vec![Complex::new(0f32, 0f32); stft.fft.get_inplace_scratch_len()];
    let mut power = vec![0f32; bank.n_bins()];
    let mut data = vec![0f32; cfg.n_mels * n_frames];
    let floor = cfg.log_floor;
    for t in 0..n_frames {
        let frame = &wave.samples[t * hop..t * hop + win];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&stft.window) {
            *b = Complex::new(s * w, 0.0);
        }
        stft.fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let energy: f64 = bank
                .row(m)
                .iter()
                .zip(&power)
                .map(|(&w, &p)| w as f64 * p as f64)
                .sum();
            data[m * n_frames + t] = (energy + floor).ln() as f32;
        }
    }
    Ok(LogMelSpectrogram::from_vec(cfg.n_mels, n_frames, data))
}
