use super::tensor::Tensor;

/// Guard on row norms before division.
pub const NORM_EPS: f64 = 1e-12;

/// Row-wise L2 normalization of `[B, D]`; also returns the (guarded) norms.
pub fn l2_normalize_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let &[b, d] = x.shape() else {
        panic!("expected a matrix")
    };
    let mut out = Tensor::zeros(&[b, d]);
    let mut norms = Vec::with_capacity(b);
    for r in 0..b {
        let row = &x.data()[r * d..(r + 1) * d];
        let n = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt().max(NORM_EPS);
        for (o, &v) in out.data_mut()[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v as f64 / n) as f32;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Gradient through [`l2_normalize_rows`] given its outputs.
pub fn l2_normalize_rows_backward(normed: &Tensor, norms: &[f64], dy: &Tensor) -> Tensor {
    let &[b, d] = normed.shape() else { unreachable!() };
    let mut dx = Tensor::zeros(&[b, d]);
    for r in 0..b {
        let y = &normed.data()[r * d..(r + 1) * d];
        let g = &dy.data()[r * d..(r + 1) * d];
        let n = norms[r];
        let clamped = n <= NORM_EPS;
        let dot: f64 = if clamped {
            0.0
        } else {
            y.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        for ((o, &yv), &gv) in dx.data_mut()[r * d..(r + 1) * d].iter_mut().zip(y).zip(g) {
            *o = ((gv as f64 - yv as f64 * dot) / n) as f32;
        }
    }
    dx
}

/// Mean over rows of `2 - 2 cos(q_i, z_i)`, and its gradient with respect to
/// `q`. `z` is treated as a constant.
pub fn byol_loss(q: &Tensor, z: &Tensor) -> (f64, Tensor) {
    assert_eq!(q.shape(), z.shape(), "byol loss operands");
    let &[b, d] = q.shape() else {
        panic!("expected a matrix")
    };
    let (qn, q_norms) = l2_normalize_rows(q);
    let (zn, _) = l2_normalize_rows(z);
    let mut total = 0f64;
    let mut dqn = Tensor::zeros(&[b, d]);
    for r in 0..b {
        let qr = &qn.data()[r * d..(r + 1) * d];
        let zr = &zn.data()[r * d..(r + 1) * d];
        let cos: f64 = qr.iter().zip(zr).map(|(&a, &c)| a as f64 * c as f64).sum();
        total += (2.0 - 2.0 * cos).clamp(0.0, 4.0);
        for (g, &zv) in dqn.data_mut()[r * d..(r + 1) * d].iter_mut().zip(zr) {
            *g = (-2.0 * zv as f64 / b as f64) as f32;
        }
    }
    let dq = l2_normalize_rows_backward(&qn, &q_norms, &dqn);
    (total / b as f64, dq)
}

/// Mean softmax cross-entropy of `logits [B, C]` against class indices,
/// with the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let &[b, c] = logits.shape() else {
        panic!("expected a matrix")
    };
    assert_eq!(labels.len(), b, "one label per row");
    let mut total = 0f64;
    let mut grad = Tensor::zeros(&[b, c]);
    for r in 0..b {
        let row = &logits.data()[r * c..(r + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[labels[r]] as f64;
        for (j, g) in grad.data_mut()[r * c..(r + 1) * c].iter_mut().enumerate() {
            let p = (row[j] as f64 - log_z).exp();
            let y = if j == labels[r] { 1.0 } else { 0.0 };
            *g = ((p - y) / b as f64) as f32;
        }
    }
    (total / b as f64, grad)
}
