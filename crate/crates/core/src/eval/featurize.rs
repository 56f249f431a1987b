use crate::data::{batch_tensor, num_workers};
use crate::dsp::{crop_or_pad, LogMelSpectrogram, NormStats};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig};
use crate::nn::{Encoder, Mode, Tensor};
use crate::augment::pre_normalize;
use crate::rng::{seeded, substream};

const BATCH: usize = 64;

/// A pretrained (or randomly initialized) encoder used read-only.
#[derive(Clone, Debug)]
pub struct FrozenEncoder {
    encoder: Encoder,
    pub stats: NormStats,
    pub config: RunConfig,
}

impl FrozenEncoder {
    pub fn new(encoder: Encoder, stats: NormStats, config: RunConfig) -> Self {
        Self { encoder, stats, config }
    }

    /// Loads the online encoder and normalization statistics of a `byol` or
    /// `cola` checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.method != "byol" && ck.method != "cola" {
            return Err(Error::Checkpoint(format!("`{}` checkpoint holds no encoder", ck.method)));
        }
        let config: RunConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
        let stats = ck
            .stats
            .ok_or_else(|| Error::Checkpoint("missing normalization stats".into()))?;
        let mut encoder = Encoder::new(&config.encoder, &mut seeded(0));
        ck.load_module("online.encoder", &mut encoder)?;
        Ok(Self { encoder, stats, config })
    }

    /// Untrained encoder with the initialization of a fresh run.
    pub fn random(config: &RunConfig, stats: NormStats, seed: u64) -> Self {
        let encoder = Encoder::new(&config.encoder, &mut substream(seed, 0));
        Self::new(encoder, stats, config.clone())
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn dim(&self) -> usize {
        self.config.encoder.d
    }

    /// `[N, d]` embeddings: each clip is cropped or padded to
    /// `segment_frames` (padding with silence), pre-normalized and encoded in
    /// eval mode. Crop offsets depend only on `seed` and the clip length.
    pub fn featurize(&self, clips: &[LogMelSpectrogram], segment_frames: usize, seed: u64) -> Result<Tensor> {
        if clips.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if segment_frames == 0 || segment_frames % self.config.encoder.downsample() != 0 {
            return Err(Error::InvalidInput(format!(
                "segment length {segment_frames} not divisible by {}",
                self.config.encoder.downsample()
            )));
        }
        let d = self.dim();
        let silence = self.config.frontend.silence();
        let workers = num_workers().min(clips.len().div_ceil(BATCH)).max(1);
        let chunk = clips.len().div_ceil(workers);
        let run = |part: &[LogMelSpectrogram]| -> Result<Vec<f32>> {
            let mut enc = self.encoder.clone();
            let mut out = Vec::with_capacity(part.len() * d);
            for group in part.chunks(BATCH) {
                let segs: Vec<_> = group
                    .iter()
                    .map(|c| pre_normalize(&crop_or_pad(c, segment_frames, silence, &mut substream(seed, 0)), &self.stats))
                    .collect();
                let y = enc.forward(&batch_tensor(&segs)?, Mode::Eval, &mut seeded(0))?;
                out.extend_from_slice(y.data());
            }
            Ok(out)
        };
        let data = if workers == 1 {
            run(clips)?
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = clips.chunks(chunk).map(|p| s.spawn(move || run(p))).collect();
                let mut all = Vec::with_capacity(clips.len() * d);
                for h in handles {
                    all.extend(h.join().expect("featurization worker panicked")?);
                }
                Ok::<_, Error>(all)
            })?
        };
        Ok(Tensor::from_vec(&[clips.len(), d], data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{named_params, EncoderConfig};
    use rand::Rng;

    fn toy_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.encoder = EncoderConfig {
            d: 16,
            conv_channels: 4,
            ..EncoderConfig::default()
        };
        cfg
    }

    fn clips(n: usize) -> Vec<LogMelSpectrogram> {
        let mut rng = seeded(1);
        (0..n)
            .map(|i| {
                let t = 40 + 20 * (i % 3);
                LogMelSpectrogram::from_vec(64, t, (0..64 * t).map(|_| rng.random_range(-10.0..0.0)).collect())
            })
            .collect()
    }

    #[test]
    fn shape_determinism_and_duplicates() {
        let f = FrozenEncoder::random(&toy_config(), NormStats::new(-5.0, 3.0).unwrap(), 0);
        let mut cs = clips(5);
        let a = f.featurize(&cs, 48, 3).unwrap();
        assert_eq!(a.shape(), &[5, 16]);
        assert_eq!(a, f.featurize(&cs, 48, 3).unwrap());
        cs.push(cs[1].clone());
        let b = f.featurize(&cs, 48, 3).unwrap();
        assert_eq!(b.rows(5, 6), b.rows(1, 2));
        assert_eq!(b.rows(0, 5), a);
        assert!(f.featurize(&cs, 50, 3).is_err());
    }

    #[test]
    fn weights_unchanged_by_featurization() {
        let f = FrozenEncoder::random(&toy_config(), NormStats::new(-5.0, 3.0).unwrap(), 0);
        let before: Vec<_> = named_params(f.encoder()).into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        f.featurize(&clips(4), 48, 0).unwrap();
        let after: Vec<_> = named_params(f.encoder()).into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let f = FrozenEncoder::random(&toy_config(), NormStats::new(-5.0, 3.0).unwrap(), 0);
        let cs = clips(130);
        std::env::set_var(crate::data::WORKERS_ENV, "1");
        let one = f.featurize(&cs, 48, 2).unwrap();
        std::env::set_var(crate::data::WORKERS_ENV, "3");
        let three = f.featurize(&cs, 48, 2).unwrap();
        std::env::remove_var(crate::data::WORKERS_ENV);
        assert_eq!(one, three);
    }
}
