use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseMetrics {
    /// Per-dimension standard deviation, averaged over dimensions.
    pub mean_std: f64,
    /// `exp` of the entropy of the normalized singular values of the
    /// centered embedding matrix; 1 for degenerate inputs.
    pub effective_rank: f64,
}

/// Embeddings `[N, d]`.
pub fn collapse_metrics(emb: &Tensor) -> CollapseMetrics {
    let (n, d) = (emb.shape()[0], emb.shape()[1]);
    if n == 0 || d == 0 {
        return CollapseMetrics {
            mean_std: 0.0,
            effective_rank: 1.0,
        };
    }
    let x = emb.data();
    let mut mean = vec![0f64; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(&x[r * d..(r + 1) * d]) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let c: Vec<f64> = (0..n * d).map(|i| x[i] as f64 - mean[i % d]).collect();
    let mut var = vec![0f64; d];
    for r in 0..n {
        for (s, &v) in var.iter_mut().zip(&c[r * d..(r + 1) * d]) {
            *s += v * v;
        }
    }
    let mean_std = var.iter().map(|v| (v / n as f64).sqrt()).sum::<f64>() / d as f64;

    let sv: Vec<f64> = nalgebra::DMatrix::from_row_slice(n, d, &c)
        .singular_values()
        .iter()
        .copied()
        .collect();
    let total: f64 = sv.iter().sum();
    let scale = sv.iter().cloned().fold(0.0, f64::max);
    let effective_rank = if !(total > 0.0) || scale < 1e-9 * (1.0 + mean.iter().map(|m| m.abs()).fold(0.0, f64::max)) {
        1.0
    } else {
        let h: f64 = sv
            .iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let p = s / total;
                -p * p.ln()
            })
            .sum();
        h.exp()
    };
    CollapseMetrics {
        mean_std,
        effective_rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapsed_embeddings() {
        let t = Tensor::filled(&[6, 4], 0.7);
        let m = collapse_metrics(&t);
        assert_eq!(m.mean_std, 0.0);
        assert_eq!(m.effective_rank, 1.0);
    }

    #[test]
    fn rank_of_orthogonal_equal_spread() {
        // Rows +-e_i for 3 axes: centered, equal singular values -> rank 3.
        let mut data = vec![0f32; 6 * 3];
        for i in 0..3 {
            data[(2 * i) * 3 + i] = 1.0;
            data[(2 * i + 1) * 3 + i] = -1.0;
        }
        let m = collapse_metrics(&Tensor::from_vec(&[6, 3], data.clone()));
        assert!((m.effective_rank - 3.0).abs() < 1e-9, "{m:?}");
        // Each column: two +-1 entries among 6 -> std sqrt(1/3).
        assert!((m.mean_std - (1.0f64 / 3.0).sqrt()).abs() < 1e-9);
        // Same spread embedded in more dimensions than rows.
        let mut wide = vec![0f32; 6 * 8];
        for r in 0..6 {
            for c in 0..3 {
                wide[r * 8 + c] = data[r * 3 + c];
            }
        }
        let w = collapse_metrics(&Tensor::from_vec(&[6, 8], wide));
        assert!((w.effective_rank - 3.0).abs() < 1e-9, "{w:?}");
    }
}
