//! Small synthetic labelled audio tasks written as 16 kHz WAV files plus a
//! manifest. Each class has a fixed foreground structure; backgrounds,
//! levels and timing vary per clip.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{write_manifest, write_wav_i16, ManifestEntry, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Harmonic complexes with class-specific fundamentals.
    Tones,
    /// Noise with a class-specific spectral envelope.
    Textures,
    /// Sequences of short chirps with a class-specific contour, at random
    /// offsets.
    WordsLike,
    /// Harmonic complexes at a random pitch per clip; classes differ only
    /// in which partials are present.
    Timbres,
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tones" => Ok(Self::Tones),
            "textures" => Ok(Self::Textures),
            "words-like" | "words" => Ok(Self::WordsLike),
            "timbres" => Ok(Self::Timbres),
            other => Err(Error::InvalidInput(format!(
                "unknown synth kind `{other}` (tones|textures|words-like|timbres)"
            ))),
        }
    }
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tones => "tones",
            Self::Textures => "textures",
            Self::WordsLike => "words-like",
            Self::Timbres => "timbres",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_classes: usize,
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub seed: u64,
    /// Foreground-to-background ratio range in dB.
    pub snr_db: [f64; 2],
    /// Overall level range in dBFS of the mixture peak.
    pub level_db: [f64; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::Tones,
            n_classes: 3,
            n_clips: 300,
            clip_seconds: 1.0,
            seed: 0,
            snr_db: [0.0, 20.0],
            level_db: [-20.0, -1.0],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidInput("synth: need at least 2 classes".into()));
        }
        if self.n_clips == 0 || !(self.clip_seconds > 0.0) {
            return Err(Error::InvalidInput("synth: need clips of positive length".into()));
        }
        if self.snr_db[0] > self.snr_db[1] || self.level_db[0] > self.level_db[1] || self.level_db[1] > 0.0 {
            return Err(Error::InvalidInput("synth: ranges must be ordered, levels <= 0 dBFS".into()));
        }
        Ok(())
    }
}

/// Fundamental of tone class `c`: geometric spacing over 150..1200 Hz.
pub fn tone_fundamental(c: usize, n_classes: usize) -> f64 {
    geometric(150.0, 1200.0, c, n_classes)
}

/// Envelope centre of texture class `c`: geometric spacing over 300..5000 Hz.
pub fn texture_center(c: usize, n_classes: usize) -> f64 {
    geometric(300.0, 5000.0, c, n_classes)
}

fn geometric(lo: f64, hi: f64, c: usize, n: usize) -> f64 {
    if n <= 1 {
        return lo;
    }
    lo * (hi / lo).powf(c as f64 / (n - 1) as f64)
}

/// The chirp contour for a words-like class: `(start_hz, end_hz)` per
/// chirp. Classes differ in direction pattern and register.
pub fn chirp_motif(c: usize, n_classes: usize) -> Vec<(f64, f64)> {
    let base = geometric(400.0, 1600.0, c / 2, n_classes.div_ceil(2));
    let up = (base, base * 2.0);
    let down = (base * 2.0, base);
    match c % 4 {
        0 => vec![up, up, up],
        1 => vec![down, down, down],
        2 => vec![up, down, up],
        _ => vec![down, up, down],
    }
}

/// Pitch range of the timbre task.
pub const TIMBRE_F0_RANGE: [f64; 2] = [110.0, 880.0];

/// Whether partial `h` (1-based) sounds in timbre class `c`: every
/// `(c + 1)`-th partial starting from the fundamental.
pub fn timbre_has_partial(c: usize, h: usize) -> bool {
    (h - 1) % (c + 1) == 0
}

/// One clip of class `c`, peak-normalized to a random level.
pub fn synth_clip<R: Rng + ?Sized>(spec: &SynthSpec, c: usize, rng: &mut R) -> Vec<f32> {
    let n = (spec.clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let sr = SAMPLE_RATE as f64;
    let fg = match spec.kind {
        SynthKind::Tones => {
            let f0 = tone_fundamental(c, spec.n_classes);
            let dur = rng.random_range(0.5..=1.0) * n as f64;
            let start = rng.random_range(0.0..=(n as f64 - dur));
            let mut x = vec![0f64; n];
            let mut h = 1;
            while f0 * h as f64 <= 7500.0 && h <= 8 {
                let phase = rng.random_range(0.0..2.0 * PI);
                for (i, v) in x.iter_mut().enumerate() {
                    *v += (2.0 * PI * f0 * h as f64 * i as f64 / sr + phase).sin() / h as f64;
                }
                h += 1;
            }
            apply_gate(&mut x, start, dur, 0.01 * sr);
            x
        }
        SynthKind::Timbres => {
            let [lo, hi] = TIMBRE_F0_RANGE;
            let f0 = lo * (hi / lo).powf(rng.random_range(0.0..=1.0));
            let dur = rng.random_range(0.5..=1.0) * n as f64;
            let start = rng.random_range(0.0..=(n as f64 - dur));
            let mut x = vec![0f64; n];
            let mut h = 1;
            while f0 * h as f64 <= 7500.0 && h <= 16 {
                if timbre_has_partial(c, h) {
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let a = 1.0 / (h as f64).sqrt();
                    for (i, v) in x.iter_mut().enumerate() {
                        *v += a * (2.0 * PI * f0 * h as f64 * i as f64 / sr + phase).sin();
                    }
                }
                h += 1;
            }
            apply_gate(&mut x, start, dur, 0.01 * sr);
            x
        }
        SynthKind::Textures => {
            let fc = texture_center(c, spec.n_classes);
            shaped_noise(n, rng, |f| {
                let oct = (f.max(1.0) / fc).log2();
                (-0.5 * (oct / 0.25).powi(2)).exp()
            })
        }
        SynthKind::WordsLike => {
            let motif = chirp_motif(c, spec.n_classes);
            let chirp_len = 0.08 * sr;
            let gap = 0.04 * sr;
            let total = motif.len() as f64 * (chirp_len + gap);
            let start = rng.random_range(0.0..=(n as f64 - total).max(0.0));
            let mut x = vec![0f64; n];
            for (k, &(f_a, f_b)) in motif.iter().enumerate() {
                let s0 = start + k as f64 * (chirp_len + gap);
                let mut phase = rng.random_range(0.0..2.0 * PI);
                let s_begin = s0.round() as usize;
                let s_end = ((s0 + chirp_len).round() as usize).min(n);
                for i in s_begin..s_end {
                    let u = (i - s_begin) as f64 / chirp_len;
                    let f = f_a * (f_b / f_a).powf(u);
                    phase += 2.0 * PI * f / sr;
                    let w = (PI * u).sin();
                    x[i] += w * (phase.sin() + 0.5 * (2.0 * phase).sin());
                }
            }
            x
        }
    };
    // Background: noise with a random spectral tilt (from white to brown).
    let tilt = rng.random_range(0.0..2.0);
    let bg = shaped_noise(n, rng, |f| (100.0 / f.max(100.0)).powf(tilt / 2.0));
    let snr = rng.random_range(spec.snr_db[0]..=spec.snr_db[1]);
    let (p_fg, p_bg) = (power(&fg), power(&bg));
    let g_bg = if p_bg > 0.0 && p_fg > 0.0 {
        (p_fg / p_bg / 10f64.powf(snr / 10.0)).sqrt()
    } else {
        1.0
    };
    let mut mix: Vec<f64> = fg.iter().zip(&bg).map(|(a, b)| a + g_bg * b).collect();
    let peak = mix.iter().fold(0f64, |m, v| m.max(v.abs()));
    let level = 10f64.powf(rng.random_range(spec.level_db[0]..=spec.level_db[1]) / 20.0);
    if peak > 0.0 {
        mix.iter_mut().for_each(|v| *v *= level / peak);
    }
    mix.into_iter().map(|v| v as f32).collect()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Raised-cosine gate of length `dur` starting at `start` with `ramp` edges.
fn apply_gate(x: &mut [f64], start: f64, dur: f64, ramp: f64) {
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 - start;
        let g = if t < 0.0 || t > dur {
            0.0
        } else if t < ramp {
            0.5 - 0.5 * (PI * t / ramp).cos()
        } else if t > dur - ramp {
            0.5 - 0.5 * (PI * (dur - t) / ramp).cos()
        } else {
            1.0
        };
        *v *= g;
    }
}

/// White Gaussian noise filtered by a magnitude response `gain(hz)`.
fn shaped_noise<R: Rng + ?Sized>(n: usize, rng: &mut R, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut *rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *v *= gain(bin as f64 * SAMPLE_RATE as f64 / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|v| v.re / n as f64).collect()
}

/// Writes `n_clips` WAV files (classes assigned round-robin) and
/// `manifest.csv` into `out_dir`; returns the manifest path.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.n_clips);
    for i in 0..spec.n_clips {
        let c = i % spec.n_classes;
        let mut rng = substream(spec.seed, i as u64);
        let samples = synth_clip(spec, c, &mut rng);
        let path = out_dir.join(format!("{}_{i:05}.wav", class_name(c)));
        write_wav_i16(&path, &Waveform::new(samples, SAMPLE_RATE))?;
        entries.push(ManifestEntry {
            path,
            label: class_name(c),
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

pub fn class_name(c: usize) -> String {
    format!("class{c:02}")
}
