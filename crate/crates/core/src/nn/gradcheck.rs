//! Central finite-difference verification of analytic parameter gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::layers::Linear;
use super::module::{named_params, zero_grad, Module, Param};
use super::tensor::Tensor;
use crate::rng::seeded;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f32,
    pub tolerance: f64,
    /// Entries checked per tensor; smaller tensors are checked exhaustively.
    pub max_per_tensor: usize,
    /// Absolute floor of the relative-error denominator.
    pub scale_floor: f64,
    /// Floor as a fraction of the RMS analytic gradient, so entries whose
    /// true gradient vanishes are judged against the gradient scale rather
    /// than against f32 evaluation noise.
    pub rms_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            tolerance: 1e-2,
            max_per_tensor: 16,
            scale_floor: 1e-2,
            rms_floor: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries whose perturbation changed the activation pattern; central
    /// differences straddle a kink there and are not compared.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradMismatch>,
    /// Entries above tolerance.
    pub flagged: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty() && self.checked > 0
    }
}

/// `loss(net, backward)` must evaluate the loss deterministically and, when
/// `backward` is set, accumulate gradients into the parameters. It returns
/// the loss and a hash of the activation pattern (ReLU masks, max
/// selections); smooth functions return a constant. Randomness (dropout)
/// and batch-statistic modes are the caller's responsibility.
pub fn finite_diff_check<N, F>(net: &mut N, mut loss: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    N: Module,
    F: FnMut(&mut N, bool) -> (f64, u64),
{
    zero_grad(net);
    let (_, base_pattern) = loss(net, true);
    let analytic: Vec<(String, Vec<f32>)> = named_params(net)
        .into_iter()
        .map(|(n, p)| (n, p.grad.data().to_vec()))
        .collect();
    let (sq, n) = analytic
        .iter()
        .flat_map(|(_, g)| g.iter())
        .fold((0f64, 0usize), |(s, n), &g| (s + g as f64 * g as f64, n + 1));
    let floor = cfg.scale_floor.max(cfg.rms_floor * (sq / n.max(1) as f64).sqrt());
    let mut rng = seeded(cfg.seed);
    let mut report = GradCheckReport::default();
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let indices: Vec<usize> = if grad.len() <= cfg.max_per_tensor {
            (0..grad.len()).collect()
        } else {
            sample(&mut rng, grad.len(), cfg.max_per_tensor).into_vec()
        };
        for idx in indices {
            let orig = param_value(net, t, idx);
            let plus = orig + cfg.step;
            let minus = orig - cfg.step;
            set_param_value(net, t, idx, plus);
            let (lp, pp) = loss(net, false);
            set_param_value(net, t, idx, minus);
            let (lm, pm) = loss(net, false);
            set_param_value(net, t, idx, orig);
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            let a = grad[idx] as f64;
            let rel_err = (numeric - a).abs() / numeric.abs().max(a.abs()).max(floor);
            report.checked += 1;
            let entry = GradMismatch {
                param: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_err,
            };
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel_err.max(report.max_rel_err);
                report.worst = Some(entry.clone());
            }
            if rel_err > cfg.tolerance {
                report.flagged.push(entry);
            }
        }
    }
    report
}

fn param_value<N: Module>(net: &mut N, t: usize, idx: usize) -> f32 {
    let mut ps = Vec::new();
    net.visit_params_mut("", &mut ps);
    ps[t].1.value.data()[idx]
}

fn set_param_value<N: Module>(net: &mut N, t: usize, idx: usize, v: f32) {
    let mut ps = Vec::new();
    net.visit_params_mut("", &mut ps);
    ps[t].1.value.data_mut()[idx] = v;
}

/// Linear layer under `0.5 * sum((Wx + b - target)^2)`.
struct Quadratic {
    layer: Linear,
}

impl Module for Quadratic {
    fn visit_params<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Param)>) {
        self.layer.visit_params(p, out)
    }
    fn visit_params_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.layer.visit_params_mut(p, out)
    }
}

/// Loss evaluated in f64 from the parameter values; the analytic gradient
/// comes from the layer's own backward pass.
fn quadratic_loss(net: &mut Quadratic, x: &Tensor, target: &Tensor, backward: bool) -> f64 {
    let (b, k) = (x.shape()[0], x.shape()[1]);
    let n = target.shape()[1];
    let w = net.layer.weight.value.data();
    let bias = net.layer.bias.value.data();
    let mut loss = 0.0;
    let mut diff = vec![0f32; b * n];
    for r in 0..b {
        for o in 0..n {
            let mut y = bias[o] as f64;
            for i in 0..k {
                y += w[o * k + i] as f64 * x.data()[r * k + i] as f64;
            }
            let d = y - target.data()[r * n + o] as f64;
            diff[r * n + o] = d as f32;
            loss += 0.5 * d * d;
        }
    }
    if backward {
        net.layer.forward(x);
        net.layer.backward(&Tensor::from_vec(&[b, n], diff));
    }
    loss
}

/// Finite-difference control on a smooth quadratic: a correct checker must
/// agree to 1e-4 here with step 1e-3.
pub fn quadratic_control(seed: u64) -> GradCheckReport {
    let mut rng = seeded(seed);
    let mut net = Quadratic {
        layer: Linear::new(4, 3, &mut rng),
    };
    let x = Tensor::from_vec(&[5, 4], (0..20).map(|_| rng.random_range(-1.0..1.0)).collect());
    let target = Tensor::from_vec(&[5, 3], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect());
    let cfg = GradCheckConfig {
        step: 1e-3,
        tolerance: 1e-4,
        seed,
        ..GradCheckConfig::default()
    };
    finite_diff_check(&mut net, |n, bw| (quadratic_loss(n, &x, &target, bw), 0), &cfg)
}
