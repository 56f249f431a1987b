use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrcConfig {
    pub freq_scale: [f64; 2],
    pub time_scale: [f64; 2],
    pub virtual_time_scale: f64,
    pub virtual_freq_scale: f64,
}

impl Default for RrcConfig {
    fn default() -> Self {
        Self {
            freq_scale: [0.6, 1.5],
            time_scale: [0.6, 1.5],
            virtual_time_scale: 1.5,
            virtual_freq_scale: 1.0,
        }
    }
}

impl RrcConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("freq_scale", self.freq_scale), ("time_scale", self.time_scale)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("rrc.{name}: need 0 < lower <= upper")));
            }
        }
        if !(self.virtual_time_scale >= 1.0 && self.virtual_freq_scale >= 1.0) {
            return Err(Error::Config("rrc: virtual scales must be >= 1".into()));
        }
        Ok(())
    }

    /// Virtual boundary size for an `n_mels x n_frames` input.
    pub fn virtual_size(&self, n_mels: usize, n_frames: usize) -> (usize, usize) {
        (
            ((self.virtual_freq_scale * n_mels as f64).floor() as usize).max(n_mels),
            ((self.virtual_time_scale * n_frames as f64).floor() as usize).max(n_frames),
        )
    }
}

/// Crop rectangle in virtual-boundary coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub freq_start: usize,
    pub time_start: usize,
    pub freq_len: usize,
    pub time_len: usize,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl CropRect {
    /// Crop sizes `F_C = floor(min(U(h1,h2), 1) F)` and `T_C = floor(U(w1,w2) T)`,
    /// then an offset uniform over every placement inside the boundary whose
    /// frequency extent stays within the input rows.
    pub fn sample<R: Rng + ?Sized>(
        n_mels: usize,
        n_frames: usize,
        cfg: &RrcConfig,
        rng: &mut R,
    ) -> Self {
        let (virt_f, virt_t) = cfg.virtual_size(n_mels, n_frames);
        let freq_len = ((uniform(rng, cfg.freq_scale).min(1.0) * n_mels as f64).floor() as usize)
            .clamp(1, n_mels);
        let time_len = ((uniform(rng, cfg.time_scale) * n_frames as f64).floor() as usize)
            .clamp(1, virt_t);
        let freq_origin = (virt_f - n_mels) / 2;
        let freq_start = freq_origin + rng.random_range(0..=n_mels - freq_len);
        let time_start = rng.random_range(0..=virt_t - time_len);
        Self {
            freq_start,
            time_start,
            freq_len,
            time_len,
        }
    }
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
#[inline]
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps (source indices, weights) for each output position with corner
/// alignment: `src = dst (n_src - 1) / (n_dst - 1)`, edges replicated.
fn taps(n_src: usize, n_dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = if n_dst > 1 && n_src > 1 {
        (n_src - 1) as f64 / (n_dst - 1) as f64
    } else {
        0.0
    };
    let last = n_src as isize - 1;
    (0..n_dst)
        .map(|d| {
            let pos = d as f64 * scale;
            let base = pos.floor();
            let t = pos - base;
            let base = base as isize;
            let idx = [-1isize, 0, 1, 2].map(|o| (base + o).clamp(0, last) as usize);
            let w = [cubic(1.0 + t), cubic(t), cubic(1.0 - t), cubic(2.0 - t)];
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize of a row-major `src_h x src_w` grid.
pub fn bicubic_resize(src: &[f32], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w);
    let col_taps = taps(src_w, dst_w);
    let row_taps = taps(src_h, dst_h);
    let mut mid = vec![0f64; src_h * dst_w];
    for r in 0..src_h {
        let row = &src[r * src_w..(r + 1) * src_w];
        for (c, (idx, w)) in col_taps.iter().enumerate() {
            mid[r * dst_w + c] = (0..4).map(|k| w[k] * row[idx[k]] as f64).sum();
        }
    }
    let mut out = vec![0f32; dst_h * dst_w];
    for (r, (idx, w)) in row_taps.iter().enumerate() {
        for c in 0..dst_w {
            out[r * dst_w + c] = (0..4).map(|k| w[k] * mid[idx[k] * dst_w + c]).sum::<f64>() as f32;
        }
    }
    out
}

/// Reads `rect` from the zero-filled virtual boundary around `x` and resizes
/// it back to the input shape. Interpolation may overshoot the crop's range.
pub fn resize_crop_at(x: &LogMelSpectrogram, cfg: &RrcConfig, rect: CropRect) -> LogMelSpectrogram {
    let (n_mels, n_frames) = (x.n_mels(), x.n_frames());
    let (virt_f, virt_t) = cfg.virtual_size(n_mels, n_frames);
    assert!(rect.freq_start + rect.freq_len <= virt_f && rect.time_start + rect.time_len <= virt_t);
    let (off_f, off_t) = ((virt_f - n_mels) / 2, (virt_t - n_frames) / 2);
    let mut crop = vec![0f32; rect.freq_len * rect.time_len];
    for i in 0..rect.freq_len {
        let f = (rect.freq_start + i) as isize - off_f as isize;
        if f < 0 || f >= n_mels as isize {
            continue;
        }
        for j in 0..rect.time_len {
            let t = (rect.time_start + j) as isize - off_t as isize;
            if t >= 0 && t < n_frames as isize {
                crop[i * rect.time_len + j] = x.get(f as usize, t as usize);
            }
        }
    }
    let data = bicubic_resize(&crop, rect.freq_len, rect.time_len, n_mels, n_frames);
    LogMelSpectrogram::from_vec(n_mels, n_frames, data)
}

pub fn random_resize_crop<R: Rng + ?Sized>(
    x: &LogMelSpectrogram,
    cfg: &RrcConfig,
    rng: &mut R,
) -> LogMelSpectrogram {
    let rect = CropRect::sample(x.n_mels(), x.n_frames(), cfg, rng);
    resize_crop_at(x, cfg, rect)
}
