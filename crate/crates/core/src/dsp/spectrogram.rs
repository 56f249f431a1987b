use rand::Rng;

use crate::error::{Error, Result};

/// `n_mels x n_frames` grid of log mel energies, row-major (one row per mel
/// bin).
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    n_mels: usize,
    n_frames: usize,
    data: Vec<f32>,
}

impl LogMelSpectrogram {
    pub fn from_vec(n_mels: usize, n_frames: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_mels * n_frames, "spectrogram size");
        Self {
            n_mels,
            n_frames,
            data,
        }
    }

    pub fn filled(n_mels: usize, n_frames: usize, value: f32) -> Self {
        Self::from_vec(n_mels, n_frames, vec![value; n_mels * n_frames])
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.n_mels, self.n_frames]
    }

    #[inline]
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.data[mel * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, mel: usize, frame: usize, v: f32) {
        self.data[mel * self.n_frames + frame] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_vec(self.n_mels, self.n_frames, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().to_vec(),
                actual: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.n_frames);
        let mut data = Vec::with_capacity(self.n_mels * len);
        for m in 0..self.n_mels {
            let row = &self.data[m * self.n_frames..(m + 1) * self.n_frames];
            data.extend_from_slice(&row[start..start + len]);
        }
        Self::from_vec(self.n_mels, len, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Random contiguous crop when longer than `target` frames, even head/tail
/// padding with `pad_value` when shorter. The extra frame of an odd deficit
/// goes to the tail.
pub fn crop_or_pad<R: Rng + ?Sized>(
    s: &LogMelSpectrogram,
    target: usize,
    pad_value: f32,
    rng: &mut R,
) -> LogMelSpectrogram {
    assert!(target >= 1, "target frames must be positive");
    let n = s.n_frames();
    if n == target {
        return s.clone();
    }
    if n > target {
        let start = rng.random_range(0..=n - target);
        return s.slice_frames(start, target);
    }
    let head = (target - n) / 2;
    let mut out = LogMelSpectrogram::filled(s.n_mels(), target, pad_value);
    for m in 0..s.n_mels() {
        for t in 0..n {
            out.set(m, head + t, s.get(m, t));
        }
    }
    out
}
