//! Manifest-backed datasets held as full-length log-mel clips.

use std::path::{Path, PathBuf};

use crate::dsp::{compute_dataset_stats, compute_logmel, load_wav, read_manifest, FrontendConfig, LogMelSpectrogram, NormStats};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const WORKERS_ENV: &str = "BYOLA_NUM_WORKERS";

/// Worker threads for featurization: `BYOLA_NUM_WORKERS` if set to a
/// positive integer, otherwise the available parallelism.
pub fn num_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub clips: Vec<LogMelSpectrogram>,
    /// Index into `label_names`.
    pub labels: Vec<usize>,
    /// Sorted distinct labels.
    pub label_names: Vec<String>,
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    pub fn from_manifest(manifest: &Path, frontend: &FrontendConfig) -> Result<Self> {
        let entries = read_manifest(manifest)?;
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut label_names: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
        label_names.sort();
        label_names.dedup();
        let labels = entries
            .iter()
            .map(|e| label_names.binary_search(&e.label).unwrap())
            .collect();
        let paths: Vec<PathBuf> = entries.into_iter().map(|e| e.path).collect();
        let clips = load_clips(&paths, frontend, num_workers())?;
        Ok(Self {
            clips,
            labels,
            label_names,
            paths,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn stats(&self) -> Result<NormStats> {
        compute_dataset_stats(self.clips.iter())
    }
}

/// Loads and transforms `paths` on up to `workers` threads; output order
/// follows `paths`.
pub fn load_clips(paths: &[PathBuf], frontend: &FrontendConfig, workers: usize) -> Result<Vec<LogMelSpectrogram>> {
    let one = |p: &PathBuf| load_wav(p).and_then(|w| compute_logmel(&w, frontend));
    let workers = workers.clamp(1, paths.len().max(1));
    if workers == 1 {
        return paths.iter().map(one).collect();
    }
    let chunk = paths.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = paths
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(paths.len());
        for h in handles {
            out.extend(h.join().expect("featurization worker panicked")?);
        }
        Ok(out)
    })
}

/// Stacks equally shaped segments into `[B, 1, F, T]`.
pub fn batch_tensor<'a, I>(segments: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a LogMelSpectrogram>,
{
    let mut data = Vec::new();
    let mut shape: Option<[usize; 2]> = None;
    let mut b = 0;
    for s in segments {
        match shape {
            None => shape = Some(s.shape()),
            Some(sh) if sh != s.shape() => {
                return Err(Error::ShapeMismatch {
                    expected: sh.to_vec(),
                    actual: s.shape().to_vec(),
                })
            }
            _ => {}
        }
        data.extend_from_slice(s.data());
        b += 1;
    }
    let [f, t] = shape.ok_or(Error::EmptyDataset)?;
    Ok(Tensor::from_vec(&[b, 1, f, t], data))
}
