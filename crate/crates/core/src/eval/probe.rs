use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig, Linear, Module, Param, Tensor};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 200,
            patience: 10,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled split with `train_frac` / `val_frac` of each class
/// (rounded) and the rest for test. Every class needs at least one member in
/// each part.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[usize],
    n_classes: usize,
    train_frac: f64,
    val_frac: f64,
    rng: &mut R,
) -> Result<Split> {
    if n_classes < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let n = members.len();
        if n < 3 {
            return Err(Error::InvalidInput(format!(
                "degenerate split: class {c} has {n} items, need at least 3"
            )));
        }
        members.shuffle(rng);
        let n_val = ((n as f64 * val_frac).round() as usize).max(1);
        let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - n_val - 1);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside {n_classes} classes")));
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Clone, Debug)]
pub struct LinearProbe {
    layer: Linear,
}

impl LinearProbe {
    /// Zero weights and biases: training starts from uniform predictions.
    pub fn new(dim: usize, n_classes: usize) -> Self {
        let mut layer = Linear::new(dim, n_classes, &mut crate::rng::seeded(0));
        layer.weight.value.fill(0.0);
        Self { layer }
    }

    pub fn weight(&self) -> &Tensor {
        &self.layer.weight.value
    }

    pub fn bias(&self) -> &Tensor {
        &self.layer.bias.value
    }

    pub fn logits(&mut self, x: &Tensor) -> Tensor {
        self.layer.forward(x)
    }

    pub fn predict(&mut self, x: &Tensor) -> Vec<usize> {
        let logits = self.logits(x);
        let c = logits.shape()[1];
        logits
            .data()
            .chunks(c)
            .map(|row| {
                // First maximum wins ties.
                row.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }

    pub fn accuracy(&mut self, features: &Tensor, labels: &[usize], idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let x = gather_rows(features, idx);
        let pred = self.predict(&x);
        let hits = pred.iter().zip(idx).filter(|(p, &i)| **p == labels[i]).count();
        hits as f64 / idx.len() as f64
    }

    /// Mean cross-entropy over the rows in `idx`.
    pub fn loss(&mut self, features: &Tensor, labels: &[usize], idx: &[usize]) -> f64 {
        let x = gather_rows(features, idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        softmax_cross_entropy(&self.logits(&x), &y).0
    }
}

impl Module for LinearProbe {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.layer.visit_params(prefix, out)
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.layer.visit_params_mut(prefix, out)
    }
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub probe: LinearProbe,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub train_losses: Vec<f64>,
}

pub(crate) fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * d..(i + 1) * d]);
    }
    Tensor::from_vec(&[idx.len(), d], data)
}

/// Softmax regression on raw features with Adam and minibatches; keeps the
/// weights of the epoch with the best validation accuracy.
pub fn train_probe<R: Rng + ?Sized>(
    features: &Tensor,
    labels: &[usize],
    n_classes: usize,
    split: &Split,
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Result<ProbeOutcome> {
    if features.shape().len() != 2 || features.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len(), 0],
            actual: features.shape().to_vec(),
        });
    }
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidInput("degenerate split: empty part".into()));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("probe features".into()));
    }
    let d = features.shape()[1];
    let mut probe = LinearProbe::new(d, n_classes);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    // Validation accuracy decides; val loss only breaks ties.
    let mut best = (probe.clone(), f64::NEG_INFINITY, f64::INFINITY);
    let mut since_best = 0;
    let mut order = split.train.clone();
    let mut losses = Vec::new();
    let mut epochs_run = 0;
    for _ in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = gather_rows(features, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let logits = probe.layer.forward(&x);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y);
            total += loss * chunk.len() as f64;
            crate::nn::zero_grad(&mut probe);
            probe.layer.backward(&dlogits);
            let mut ps = Vec::new();
            probe.visit_params_mut("", &mut ps);
            adam.update(ps);
        }
        losses.push(total / order.len() as f64);
        epochs_run += 1;
        let val = probe.accuracy(features, labels, &split.val);
        let val_loss = probe.loss(features, labels, &split.val);
        if val > best.1 || (val == best.1 && val_loss < best.2) {
            best = (probe.clone(), val, val_loss);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (mut probe, best_val_accuracy, _) = best;
    let test_accuracy = probe.accuracy(features, labels, &split.test);
    Ok(ProbeOutcome {
        probe,
        test_accuracy,
        best_val_accuracy,
        epochs_run,
        train_losses: losses,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
}

impl TaskResult {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len().max(1) as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { accuracies, mean, std }
    }
}

/// One stratified 80/10/10 split and probe per seed.
pub fn evaluate_features(
    features: &Tensor,
    labels: &[usize],
    n_classes: usize,
    seeds: &[u64],
    cfg: &ProbeConfig,
) -> Result<TaskResult> {
    let mut acc = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut rng = substream(s, 0);
        let split = stratified_split(labels, n_classes, 0.8, 0.1, &mut rng)?;
        acc.push(train_probe(features, labels, n_classes, &split, cfg, &mut rng)?.test_accuracy);
    }
    Ok(TaskResult::from_accuracies(acc))
}

/// `runs` consecutive seeds starting at `seed`.
pub fn run_seeds(seed: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|r| seed.wrapping_add(r)).collect()
}
