use serde::{Deserialize, Serialize};

use super::spectrogram::LogMelSpectrogram;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Scalar dataset statistics for pre-normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    mu: f32,
    sigma: f32,
}

impl NormStats {
    pub fn new(mu: f32, sigma: f32) -> Result<Self> {
        if !(sigma as f64 > STD_FLOOR) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::DegenerateStats(sigma as f64));
        }
        Ok(Self { mu, sigma })
    }

    pub fn identity() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }

    pub fn mu(&self) -> f32 {
        self.mu
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }
}

/// Streaming sum / sum-of-squares accumulator. Shards merge associatively.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StatsAccumulator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl StatsAccumulator {
    pub fn push_slice(&mut self, values: &[f32]) {
        for &v in values {
            let v = v as f64;
            self.sum += v;
            self.sum_sq += v * v;
        }
        self.count += values.len() as u64;
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.count as f64 - m * m).max(0.0).sqrt()
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.count == 0 {
            return Err(Error::EmptyDataset);
        }
        let std = self.std();
        if std < STD_FLOOR {
            return Err(Error::DegenerateStats(std));
        }
        NormStats::new(self.mean() as f32, std as f32)
    }
}

pub fn compute_dataset_stats<'a, I>(dataset: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a LogMelSpectrogram>,
{
    dataset
        .into_iter()
        .fold(StatsAccumulator::default(), |mut acc, s| {
            acc.push_slice(s.data());
            acc
        })
        .finish()
}
