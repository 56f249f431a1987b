use serde::{Deserialize, Serialize};

use super::module::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter order
/// and checked against parameter names on every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update(&mut self, params: Vec<(String, &mut Param)>) {
        if self.names.is_empty() {
            for (name, p) in &params {
                self.names.push(name.clone());
                self.m.push(Tensor::zeros(p.value.shape()));
                self.v.push(Tensor::zeros(p.value.shape()));
            }
        }
        assert_eq!(params.len(), self.names.len(), "optimizer parameter set changed");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = eps as f32;
        for (i, (name, p)) in params.into_iter().enumerate() {
            debug_assert_eq!(name, self.names[i]);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
    }

    /// `(name, first moment, second moment)` per parameter.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.names
            .iter()
            .zip(&self.m)
            .zip(&self.v)
            .map(|((n, m), v)| (n.as_str(), m, v))
    }

    pub fn restore(&mut self, step: u64, moments: Vec<(String, Tensor, Tensor)>) -> Result<()> {
        if moments.iter().any(|(_, m, v)| m.shape() != v.shape()) {
            return Err(Error::Checkpoint("optimizer moment shapes differ".into()));
        }
        self.step = step;
        self.names.clear();
        self.m.clear();
        self.v.clear();
        for (n, m, v) in moments {
            self.names.push(n);
            self.m.push(m);
            self.v.push(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::new(Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]));
        p.grad = Tensor::from_vec(&[3], vec![0.5, -2.0, 0.0]);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        adam.update(vec![("p".into(), &mut p)]);
        let w = p.value.data();
        assert!((w[0] - 0.9).abs() < 1e-5);
        assert!((w[1] - 1.1).abs() < 1e-5);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = Param::new(Tensor::from_vec(&[2], vec![0.3, -0.7]));
        p.grad = Tensor::from_vec(&[2], vec![1.0, 1.0]);
        let before = p.value.clone();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() });
        adam.update(vec![("p".into(), &mut p)]);
        assert_eq!(p.value, before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::new(Tensor::from_vec(&[2], vec![3.0, -4.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() });
        for _ in 0..2000 {
            let g: Vec<f32> = p.value.data().iter().map(|w| 2.0 * w).collect();
            p.grad = Tensor::from_vec(&[2], g);
            adam.update(vec![("p".into(), &mut p)]);
        }
        assert!(p.value.data().iter().all(|w| w.abs() < 1e-2));
    }
}
