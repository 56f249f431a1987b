use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    /// Upper bound of the mixing ratio, `lambda ~ U(0, alpha)`.
    pub alpha: f64,
    pub bank_capacity: usize,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            bank_capacity: 2048,
        }
    }
}

/// Gaussian-noise counterpart, mixed in with the same log-mixup-exp rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianConfig {
    /// Standard deviation of the noise matrix.
    pub sigma: f64,
    /// Upper bound of the mixing ratio.
    pub alpha: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            alpha: 0.4,
        }
    }
}

impl GaussianConfig {
    pub fn apply<R: Rng + ?Sized>(&self, x: &LogMelSpectrogram, rng: &mut R) -> LogMelSpectrogram {
        let lambda = self.alpha * rng.random::<f64>();
        gaussian_block(x, self.sigma, lambda, rng)
    }
}

/// FIFO queue of past normalized segments.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    queue: VecDeque<LogMelSpectrogram>,
    capacity: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory bank capacity must be positive");
        Self {
            queue: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &LogMelSpectrogram> {
        self.queue.iter()
    }

    pub fn push(&mut self, x: LogMelSpectrogram) -> Result<()> {
        if let Some(front) = self.queue.front() {
            front.check_same_shape(&x)?;
        }
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
        }
        self.queue.push_back(x);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }
}

/// Samples a counterpart uniformly from the bank as it was before `x` is
/// enqueued; an empty bank yields `x` itself.
pub fn bank_push_then_sample<R: Rng + ?Sized>(
    bank: &mut MemoryBank,
    x: &LogMelSpectrogram,
    rng: &mut R,
) -> Result<LogMelSpectrogram> {
    if let Some(front) = bank.queue.front() {
        front.check_same_shape(x)?;
    }
    let sample = if bank.is_empty() {
        x.clone()
    } else {
        bank.queue[rng.random_range(0..bank.len())].clone()
    };
    bank.push(x.clone())?;
    Ok(sample)
}

#[inline]
fn mix_cell(a: f32, b: f32, lambda: f64) -> f32 {
    if a == b || lambda == 0.0 {
        return a;
    }
    if lambda == 1.0 {
        return b;
    }
    let (a64, b64) = (a as f64, b as f64);
    let m = a64.max(b64);
    let v = m + ((1.0 - lambda) * (a64 - m).exp() + lambda * (b64 - m).exp()).ln();
    (v as f32).clamp(a.min(b), a.max(b))
}

/// Cellwise `log((1 - lambda) exp(x_i) + lambda exp(x_k))`, evaluated around
/// the cellwise maximum so large log energies do not overflow.
pub fn log_mixup_exp(
    x_i: &LogMelSpectrogram,
    x_k: &LogMelSpectrogram,
    lambda: f64,
) -> Result<LogMelSpectrogram> {
    x_i.check_same_shape(x_k)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mixing ratio {lambda} outside [0, 1]")));
    }
    let data = x_i
        .data()
        .iter()
        .zip(x_k.data())
        .map(|(&a, &b)| mix_cell(a, b, lambda))
        .collect();
    Ok(LogMelSpectrogram::from_vec(x_i.n_mels(), x_i.n_frames(), data))
}

/// Draws `lambda ~ U(0, alpha)`, then a counterpart from the bank (pushing
/// `x`), and mixes.
pub fn mixup_block<R: Rng + ?Sized>(
    x: &LogMelSpectrogram,
    bank: &mut MemoryBank,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<LogMelSpectrogram> {
    let lambda = cfg.alpha * rng.random::<f64>();
    let counterpart = bank_push_then_sample(bank, x, rng)?;
    log_mixup_exp(x, &counterpart, lambda)
}

/// Mixes `x` with an i.i.d. `N(0, sigma^2)` matrix at ratio `lambda`.
pub fn gaussian_block<R: Rng + ?Sized>(
    x: &LogMelSpectrogram,
    sigma: f64,
    lambda: f64,
    rng: &mut R,
) -> LogMelSpectrogram {
    let noise: Vec<f32> = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        (0..x.data().len()).map(|_| normal.sample(rng) as f32).collect()
    } else {
        vec![0.0; x.data().len()]
    };
    let noise = LogMelSpectrogram::from_vec(x.n_mels(), x.n_frames(), noise);
    log_mixup_exp(x, &noise, lambda.clamp(0.0, 1.0)).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn grid(vals: &[f32]) -> LogMelSpectrogram {
        LogMelSpectrogram::from_vec(1, vals.len(), vals.to_vec())
    }

    fn random(seed: u64, n_mels: usize, n_frames: usize) -> LogMelSpectrogram {
        let mut rng = seeded(seed);
        LogMelSpectrogram::from_vec(
            n_mels,
            n_frames,
            (0..n_mels * n_frames).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
    }

    #[test]
    fn ln2_ln4_half_is_ln3() {
        let a = grid(&[2f32.ln(); 5]);
        let b = grid(&[4f32.ln(); 5]);
        let out = log_mixup_exp(&a, &b, 0.5).unwrap();
        for &v in out.data() {
            assert!((v - 3f32.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn endpoints_and_fixed_point_exact() {
        let a = random(1, 4, 6);
        let b = random(2, 4, 6);
        assert_eq!(log_mixup_exp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(log_mixup_exp(&a, &b, 1.0).unwrap(), b);
        for lambda in [0.0, 0.13, 0.4, 0.99, 1.0] {
            assert_eq!(log_mixup_exp(&a, &a, lambda).unwrap(), a);
        }
    }

    #[test]
    fn large_log_energies_stay_finite() {
        let a = grid(&[500.0, -500.0]);
        let b = grid(&[800.0, -900.0]);
        let out = log_mixup_exp(&a, &b, 0.3).unwrap();
        assert!(out.is_finite());
        assert!((out.get(0, 0) - (800.0 + 0.3f64.ln()) as f32).abs() < 1e-3);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            log_mixup_exp(&grid(&[1.0]), &grid(&[1.0, 2.0]), 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn empty_bank_returns_input() {
        let mut bank = MemoryBank::new(4);
        let x = random(3, 2, 2);
        assert_eq!(bank_push_then_sample(&mut bank, &x, &mut seeded(0)).unwrap(), x);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn single_element_bank_returns_it() {
        let mut bank = MemoryBank::new(4);
        let y = random(4, 2, 2);
        bank.push(y.clone()).unwrap();
        let x = random(5, 2, 2);
        assert_eq!(bank_push_then_sample(&mut bank, &x, &mut seeded(0)).unwrap(), y);
    }

    #[test]
    fn bank_evicts_oldest_at_capacity() {
        let mut bank = MemoryBank::new(2048);
        let mut rng = seeded(0);
        for i in 0..2049 {
            bank_push_then_sample(&mut bank, &LogMelSpectrogram::filled(1, 1, i as f32), &mut rng)
                .unwrap();
        }
        assert_eq!(bank.len(), 2048);
        assert_eq!(bank.iter().next().unwrap().get(0, 0), 1.0);
        assert_eq!(bank.iter().last().unwrap().get(0, 0), 2048.0);
    }

    #[test]
    fn bank_rejects_shape_change() {
        let mut bank = MemoryBank::new(3);
        bank.push(LogMelSpectrogram::filled(2, 2, 0.0)).unwrap();
        let err = bank_push_then_sample(&mut bank, &LogMelSpectrogram::filled(2, 3, 0.0), &mut seeded(0));
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn tiny_alpha_barely_changes_input() {
        let mut bank = MemoryBank::new(8);
        bank.push(random(7, 4, 4)).unwrap();
        let x = random(8, 4, 4);
        let cfg = MixupConfig { alpha: 1e-9, bank_capacity: 8 };
        let out = mixup_block(&x, &mut bank, &cfg, &mut seeded(1)).unwrap();
        for (a, b) in x.data().iter().zip(out.data()) {
            // |d out / d lambda| <= e^{range} - 1 with range 6
            assert!((a - b).abs() as f64 <= 1e-9 * 6f64.exp() + 1e-6);
        }
    }

    #[test]
    fn empty_bank_mixup_is_identity() {
        let x = random(9, 3, 5);
        for seed in 0..5 {
            let mut bank = MemoryBank::new(8);
            let cfg = MixupConfig::default();
            assert_eq!(mixup_block(&x, &mut bank, &cfg, &mut seeded(seed)).unwrap(), x);
        }
    }

    #[test]
    fn mixup_deterministic() {
        let run = || {
            let mut bank = MemoryBank::new(8);
            let mut rng = seeded(42);
            let mut outs = vec![];
            for s in 0..6 {
                outs.push(mixup_block(&random(s, 3, 3), &mut bank, &MixupConfig::default(), &mut rng).unwrap());
            }
            outs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gaussian_block_cases() {
        let x = random(10, 4, 4);
        assert_eq!(gaussian_block(&x, 0.4, 0.0, &mut seeded(0)), x);
        let zeros = LogMelSpectrogram::filled(4, 4, 0.0);
        assert_eq!(
            gaussian_block(&x, 0.0, 0.3, &mut seeded(0)),
            log_mixup_exp(&x, &zeros, 0.3).unwrap()
        );
        let cfg = GaussianConfig::default();
        assert_eq!(cfg.apply(&x, &mut seeded(3)), cfg.apply(&x, &mut seeded(3)));
        assert_ne!(cfg.apply(&x, &mut seeded(3)), x);
    }

    proptest! {
        #[test]
        fn monotone_between_inputs(
            base in proptest::collection::vec(-30.0f32..30.0, 16),
            gap in proptest::collection::vec(0.0f32..30.0, 16),
            lambda in 0.0f64..=1.0,
        ) {
            let a = grid(&base);
            let b = grid(&base.iter().zip(&gap).map(|(x, g)| x + g).collect::<Vec<_>>());
            let out = log_mixup_exp(&a, &b, lambda).unwrap();
            for i in 0..16 {
                prop_assert!(out.get(0, i) >= a.get(0, i));
                prop_assert!(out.get(0, i) <= b.get(0, i));
            }
        }

        #[test]
        fn bank_keeps_newest(n in 0usize..40, cap in 1usize..12) {
            let mut bank = MemoryBank::new(cap);
            let mut rng = seeded(n as u64);
            for i in 0..n {
                bank_push_then_sample(&mut bank, &LogMelSpectrogram::filled(1, 1, i as f32), &mut rng).unwrap();
            }
            prop_assert_eq!(bank.len(), n.min(cap));
            let kept: Vec<f32> = bank.iter().map(|s| s.get(0, 0)).collect();
            let expect: Vec<f32> = (n.saturating_sub(cap)..n).map(|i| i as f32).collect();
            prop_assert_eq!(kept, expect);
        }
    }
}
