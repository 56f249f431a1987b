use rand::Rng;

use super::linalg::gemm;
use super::module::{join, Mode, Module, Param};
use super::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Kaiming-uniform (fan-in, ReLU gain) initialization.
fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// 3x3 convolution, stride 1, zero padding 1. Input `[B, C_in, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    in_ch: usize,
    out_ch: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: Param::new(kaiming_uniform(&[out_ch, in_ch, 3, 3], in_ch * 9, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            input: None,
        }
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let hw = h * w;
        for c in 0..self.in_ch {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        let dst = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => {
                                dst[0] = 0.0;
                                dst[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..w - 1].copy_from_slice(&src[1..]);
                                dst[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let hw = h * w;
        for c in 0..self.in_ch {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[y * w..(y + 1) * w];
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                            1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                            _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let &[b, c, h, w] = x.shape() else {
            panic!("conv input must be 4-d")
        };
        assert_eq!(c, self.in_ch, "conv input channels");
        let (hw, k) = (h * w, self.in_ch * 9);
        let mut out = Tensor::zeros(&[b, self.out_ch, h, w]);
        let mut cols = vec![0f32; k * hw];
        for n in 0..b {
            self.im2col(&x.data()[n * c * hw..(n + 1) * c * hw], h, w, &mut cols);
            let y = &mut out.data_mut()[n * self.out_ch * hw..(n + 1) * self.out_ch * hw];
            for (oc, bias) in self.bias.value.data().iter().enumerate() {
                y[oc * hw..(oc + 1) * hw].fill(*bias);
            }
            gemm(self.out_ch, k, hw, 1.0, self.weight.value.data(), false, &cols, false, 1.0, y);
        }
        self.input = Some(x.clone());
        out
    }

    /// Returns the input gradient when `need_input_grad`.
    pub fn backward(&mut self, dy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self.input.take().expect("conv backward without forward");
        let &[b, c, h, w] = x.shape() else { unreachable!() };
        let (hw, k) = (h * w, self.in_ch * 9);
        let mut cols = vec![0f32; k * hw];
        let mut dcols = vec![0f32; k * hw];
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for n in 0..b {
            let g = &dy.data()[n * self.out_ch * hw..(n + 1) * self.out_ch * hw];
            self.im2col(&x.data()[n * c * hw..(n + 1) * c * hw], h, w, &mut cols);
            gemm(self.out_ch, hw, k, 1.0, g, false, &cols, true, 1.0, self.weight.grad.data_mut());
            for (oc, db) in self.bias.grad.data_mut().iter_mut().enumerate() {
                *db += g[oc * hw..(oc + 1) * hw].iter().sum::<f32>();
            }
            if let Some(dx) = dx.as_mut() {
                gemm(k, self.out_ch, hw, 1.0, self.weight.value.data(), true, g, false, 0.0, &mut dcols);
                self.col2im_add(&dcols, h, w, &mut dx.data_mut()[n * c * hw..(n + 1) * c * hw]);
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    batch_stats: bool,
    shape: Vec<usize>,
}

/// Batch normalization over axis 1 of `[N, C, ...]`; statistics pool the
/// leading axis and all trailing axes.
pub struct BatchNorm {
    channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

impl Clone for BatchNorm {
    fn clone(&self) -> Self {
        Self {
            channels: self.channels,
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for BatchNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchNorm").field("channels", &self.channels).finish()
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            cache: None,
        }
    }

    fn layout(&self, shape: &[usize]) -> (usize, usize) {
        assert!(shape.len() >= 2 && shape[1] == self.channels, "batchnorm channels");
        (shape[0], shape[2..].iter().product())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let (outer, inner) = self.layout(x.shape());
        let c_n = self.channels;
        let count = outer * inner;
        let xd = x.data();
        let (mean, var): (Vec<f64>, Vec<f64>) = if mode.batch_stats() {
            assert!(count >= 2, "batch statistics need at least 2 values per channel");
            let mut mean = vec![0f64; c_n];
            let mut sq = vec![0f64; c_n];
            for o in 0..outer {
                for c in 0..c_n {
                    let s = &xd[(o * c_n + c) * inner..][..inner];
                    for &v in s {
                        mean[c] += v as f64;
                        sq[c] += v as f64 * v as f64;
                    }
                }
            }
            let var = mean
                .iter_mut()
                .zip(&sq)
                .map(|(m, s)| {
                    *m /= count as f64;
                    (s / count as f64 - *m * *m).max(0.0)
                })
                .collect();
            (mean, var)
        } else {
            (
                self.running_mean.data().iter().map(|&v| v as f64).collect(),
                self.running_var.data().iter().map(|&v| v as f64).collect(),
            )
        };
        if mode.updates_running_stats() {
            let unbias = count as f64 / (count - 1) as f64;
            for c in 0..c_n {
                let rm = &mut self.running_mean.data_mut()[c];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[c] as f32;
                let rv = &mut self.running_var.data_mut()[c];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * (var[c] * unbias) as f32;
            }
        }
        let inv_std: Vec<f32> = var
            .iter()
            .map(|v| (1.0 / (v + BN_EPS as f64).sqrt()) as f32)
            .collect();
        let mut xhat = vec![0f32; xd.len()];
        let mut y = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for o in 0..outer {
            for c in 0..c_n {
                let off = (o * c_n + c) * inner;
                let m = mean[c] as f32;
                for i in off..off + inner {
                    let h = (xd[i] - m) * inv_std[c];
                    xhat[i] = h;
                    y.data_mut()[i] = g[c] * h + b[c];
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats: mode.batch_stats(),
            shape: x.shape().to_vec(),
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let (outer, inner) = self.layout(&cache.shape);
        let c_n = self.channels;
        let count = (outer * inner) as f32;
        let dyd = dy.data();
        let mut sum_dy = vec![0f32; c_n];
        let mut sum_dy_xhat = vec![0f32; c_n];
        for o in 0..outer {
            for c in 0..c_n {
                let off = (o * c_n + c) * inner;
                for i in off..off + inner {
                    sum_dy[c] += dyd[i];
                    sum_dy_xhat[c] += dyd[i] * cache.xhat[i];
                }
            }
        }
        for c in 0..c_n {
            self.gamma.grad.data_mut()[c] += sum_dy_xhat[c];
            self.beta.grad.data_mut()[c] += sum_dy[c];
        }
        let g = self.gamma.value.data();
        let mut dx = Tensor::zeros(&cache.shape);
        for o in 0..outer {
            for c in 0..c_n {
                let off = (o * c_n + c) * inner;
                let scale = g[c] * cache.inv_std[c];
                for i in off..off + inner {
                    dx.data_mut()[i] = if cache.batch_stats {
                        scale * (dyd[i] - sum_dy[c] / count - cache.xhat[i] * sum_dy_xhat[c] / count)
                    } else {
                        scale * dyd[i]
                    };
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor) -> Tensor {
        self.mask.clear();
        self.mask.extend(x.data().iter().map(|&v| v > 0.0));
        x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    /// Feeds the last activation pattern to `h`.
    pub fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        std::hash::Hash::hash(&self.mask, h)
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Tensor {
        assert_eq!(dy.numel(), self.mask.len(), "relu backward shape");
        dy.data_mut()
            .iter_mut()
            .zip(&self.mask)
            .for_each(|(g, &m)| {
                if !m {
                    *g = 0.0
                }
            });
        dy
    }
}

/// 2x2 max pooling with stride 2 over the last two axes of `[B, C, H, W]`.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    argmax: Vec<u32>,
    in_shape: Vec<usize>,
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let &[b, c, h, w] = x.shape() else {
            panic!("maxpool input must be 4-d")
        };
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even spatial dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        self.argmax.clear();
        self.argmax.reserve(out.numel());
        let xd = x.data();
        let mut k = 0;
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x_ in 0..ow {
                    let i0 = base + 2 * y * w + 2 * x_;
                    let mut best = i0;
                    for i in [i0 + 1, i0 + w, i0 + w + 1] {
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.data_mut()[k] = xd[best];
                    self.argmax.push(best as u32);
                    k += 1;
                }
            }
        }
        self.in_shape = x.shape().to_vec();
        out
    }

    /// Feeds the last selected indices to `h`.
    pub fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        std::hash::Hash::hash(&self.argmax, h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(&self.in_shape);
        for (&i, &g) in self.argmax.iter().zip(dy.data()) {
            dx.data_mut()[i as usize] += g;
        }
        dx
    }
}

/// Inverted dropout; identity outside training modes.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Self { rate, mask: None }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, mut x: Tensor, mode: Mode, rng: &mut R) -> Tensor {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f32> = (0..x.numel())
            .map(|_| if rng.random::<f32>() < self.rate { 0.0 } else { keep })
            .collect();
        x.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Tensor {
        if let Some(mask) = self.mask.take() {
            dy.data_mut().iter_mut().zip(&mask).for_each(|(g, m)| *g *= m);
        }
        dy
    }
}

/// `y = x W^T + b` over the last axis; weight is `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::new(kaiming_uniform(&[out_dim, in_dim], in_dim, rng)),
            bias: Param::new(Tensor::zeros(&[out_dim])),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let shape = x.shape();
        assert_eq!(*shape.last().unwrap(), self.in_dim, "linear input dim");
        let rows = x.numel() / self.in_dim;
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = self.out_dim;
        let mut y = Tensor::zeros(&out_shape);
        for r in 0..rows {
            y.data_mut()[r * self.out_dim..(r + 1) * self.out_dim]
                .copy_from_slice(self.bias.value.data());
        }
        gemm(rows, self.in_dim, self.out_dim, 1.0, x.data(), false, self.weight.value.data(), true, 1.0, y.data_mut());
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without forward");
        let rows = x.numel() / self.in_dim;
        gemm(self.out_dim, rows, self.in_dim, 1.0, dy.data(), true, x.data(), false, 1.0, self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        for r in 0..rows {
            for (b, g) in db.iter_mut().zip(&dy.data()[r * self.out_dim..(r + 1) * self.out_dim]) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(rows, self.out_dim, self.in_dim, 1.0, dy.data(), false, self.weight.value.data(), false, 0.0, dx.data_mut());
        dx
    }
}

impl Module for Linear {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
