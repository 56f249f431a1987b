use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixup::{mixup_block, GaussianConfig, MemoryBank, MixupConfig};
use super::normalize::{post_normalize, pre_normalize};
use super::rrc::{random_resize_crop, RrcConfig};
use crate::dsp::{LogMelSpectrogram, NormStats};
use crate::error::Result;

/// Which blocks run, and their parameters. The default is the full module:
/// Pre-Norm, Mixup, RRC, Post-Norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub pre_norm: bool,
    pub use_mixup: bool,
    pub use_gaussian: bool,
    pub use_rrc: bool,
    pub post_norm: bool,
    pub mixup: MixupConfig,
    pub gaussian: GaussianConfig,
    pub rrc: RrcConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pre_norm: true,
            use_mixup: true,
            use_gaussian: false,
            use_rrc: true,
            post_norm: true,
            mixup: MixupConfig::default(),
            gaussian: GaussianConfig::default(),
            rrc: RrcConfig::default(),
        }
    }
}

impl AugmentConfig {
    /// No mixing, no cropping; only the normalization blocks.
    pub fn normalize_only() -> Self {
        Self {
            use_mixup: false,
            use_rrc: false,
            ..Self::default()
        }
    }

    /// Parses block names joined by `+`, e.g. `mixup+rrc`, `gaussian`, `none`.
    pub fn with_blocks(mut self, spec: &str) -> Result<Self> {
        self.use_mixup = false;
        self.use_gaussian = false;
        self.use_rrc = false;
        for part in spec.split('+').map(str::trim) {
            match part.to_ascii_lowercase().as_str() {
                "mixup" => self.use_mixup = true,
                "gaussian" => self.use_gaussian = true,
                "rrc" => self.use_rrc = true,
                "none" | "" => {}
                other => {
                    return Err(crate::error::Error::Config(format!(
                        "unknown augmentation block `{other}`"
                    )))
                }
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mixup.alpha >= 0.0 && self.mixup.alpha <= 1.0) {
            return Err(crate::error::Error::Config("mixup.alpha must lie in [0, 1]".into()));
        }
        if self.mixup.bank_capacity == 0 {
            return Err(crate::error::Error::Config("mixup.bank_capacity must be positive".into()));
        }
        if !(self.gaussian.alpha >= 0.0 && self.gaussian.alpha <= 1.0 && self.gaussian.sigma >= 0.0) {
            return Err(crate::error::Error::Config("gaussian: need alpha in [0, 1], sigma >= 0".into()));
        }
        self.rrc.validate()
    }
}

/// Mutable augmentation state carried across a training run.
#[derive(Clone, Debug)]
pub struct AugmentContext {
    pub stats: NormStats,
    pub bank: MemoryBank,
    pub cfg: AugmentConfig,
}

impl AugmentContext {
    pub fn new(stats: NormStats, cfg: AugmentConfig) -> Self {
        let bank = MemoryBank::new(cfg.mixup.bank_capacity);
        Self { stats, bank, cfg }
    }

    pub fn normalize(&self, x: &LogMelSpectrogram) -> LogMelSpectrogram {
        if self.cfg.pre_norm {
            pre_normalize(x, &self.stats)
        } else {
            x.clone()
        }
    }

    /// Runs the enabled per-view blocks on an already pre-normalized segment.
    pub fn augment_one<R: Rng + ?Sized>(
        &mut self,
        x: &LogMelSpectrogram,
        rng: &mut R,
    ) -> Result<LogMelSpectrogram> {
        let mut v = x.clone();
        if self.cfg.use_mixup {
            v = mixup_block(&v, &mut self.bank, &self.cfg.mixup, rng)?;
        }
        if self.cfg.use_gaussian {
            v = self.cfg.gaussian.apply(&v, rng);
        }
        if self.cfg.use_rrc {
            v = random_resize_crop(&v, &self.cfg.rrc, rng);
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub v: LogMelSpectrogram,
    pub v_prime: LogMelSpectrogram,
}

/// Pre-normalizes `x`, then passes each of two copies independently through
/// the per-view blocks. Post-normalization happens per batch, see
/// [`post_normalize_pairs`].
pub fn make_views<R: Rng + ?Sized>(
    x: &LogMelSpectrogram,
    ctx: &mut AugmentContext,
    rng: &mut R,
) -> Result<ViewPair> {
    let base = ctx.normalize(x);
    let v = ctx.augment_one(&base, rng)?;
    let v_prime = ctx.augment_one(&base, rng)?;
    Ok(ViewPair { v, v_prime })
}

/// Joint post-normalization over both branches of a batch; a no-op when the
/// block is disabled.
pub fn post_normalize_pairs(pairs: Vec<ViewPair>, cfg: &AugmentConfig) -> Result<Vec<ViewPair>> {
    if !cfg.post_norm {
        return Ok(pairs);
    }
    let n = pairs.len();
    let flat: Vec<LogMelSpectrogram> = pairs
        .into_iter()
        .flat_map(|p| [p.v, p.v_prime])
        .collect();
    let normed = post_normalize(&flat)?;
    let mut it = normed.into_iter();
    Ok((0..n)
        .map(|_| ViewPair {
            v: it.next().unwrap(),
            v_prime: it.next().unwrap(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random(seed: u64) -> LogMelSpectrogram {
        let mut rng = seeded(seed);
        LogMelSpectrogram::from_vec(16, 24, (0..384).map(|_| rng.random_range(-20.0..0.0)).collect())
    }

    fn ctx(cfg: AugmentConfig) -> AugmentContext {
        AugmentContext::new(NormStats::new(-10.0, 5.0).unwrap(), cfg)
    }

    #[test]
    fn disabled_augmentations_give_equal_views() {
        let cfg = AugmentConfig {
            mixup: MixupConfig {
                alpha: 1e-9,
                bank_capacity: 16,
            },
            rrc: RrcConfig {
                freq_scale: [1.0, 1.0],
                time_scale: [1.0, 1.0],
                virtual_time_scale: 1.0,
                virtual_freq_scale: 1.0,
            },
            ..AugmentConfig::default()
        };
        let mut c = ctx(cfg.clone());
        let mut rng = seeded(0);
        let mut pairs = vec![];
        for s in 0..4 {
            pairs.push(make_views(&random(s), &mut c, &mut rng).unwrap());
        }
        for p in post_normalize_pairs(pairs, &cfg).unwrap() {
            for (a, b) in p.v.data().iter().zip(p.v_prime.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn views_keep_shape_and_are_reproducible() {
        let run = || {
            let mut c = ctx(AugmentConfig::default());
            let mut rng = seeded(77);
            (0..5).map(|s| make_views(&random(s), &mut c, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        for p in &a {
            assert_eq!(p.v.shape(), [16, 24]);
            assert_eq!(p.v_prime.shape(), [16, 24]);
            assert!(p.v.is_finite() && p.v_prime.is_finite());
        }
        assert_ne!(a[3].v, a[3].v_prime);
    }

    #[test]
    fn block_parsing() {
        let c = AugmentConfig::default().with_blocks("mixup+gaussian").unwrap();
        assert!(c.use_mixup && c.use_gaussian && !c.use_rrc);
        let c = AugmentConfig::default().with_blocks("none").unwrap();
        assert!(!c.use_mixup && !c.use_gaussian && !c.use_rrc);
        assert!(AugmentConfig::default().with_blocks("specaugment").is_err());
    }

    #[test]
    fn each_view_pushes_to_bank() {
        let mut c = ctx(AugmentConfig::default());
        make_views(&random(1), &mut c, &mut seeded(0)).unwrap();
        assert_eq!(c.bank.len(), 2);
    }
}
