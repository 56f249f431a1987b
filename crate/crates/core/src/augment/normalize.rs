use crate::dsp::{LogMelSpectrogram, NormStats, StatsAccumulator, STD_FLOOR};
use crate::error::{Error, Result};

pub fn pre_normalize(x: &LogMelSpectrogram, stats: &NormStats) -> LogMelSpectrogram {
    let (mu, sigma) = (stats.mu(), stats.sigma());
    x.map(|v| (v - mu) / sigma)
}

/// Standardizes a whole batch with one scalar mean/std pair computed over
/// every cell of every member.
pub fn post_normalize(batch: &[LogMelSpectrogram]) -> Result<Vec<LogMelSpectrogram>> {
    let mut acc = StatsAccumulator::default();
    for s in batch {
        acc.push_slice(s.data());
    }
    if acc.count == 0 {
        return Err(Error::EmptyDataset);
    }
    let (mean, std) = (acc.mean(), acc.std());
    if std < STD_FLOOR {
        return Err(Error::DegenerateStats(std));
    }
    Ok(batch
        .iter()
        .map(|s| s.map(|v| ((v as f64 - mean) / std) as f32))
        .collect())
}
