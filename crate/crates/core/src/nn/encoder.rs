use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, Dropout, Linear, MaxPool2, Relu};
use super::module::{join, Mode, Module, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Embedding dimension; 512, 1024 or 2048 for full-size models.
    pub d: usize,
    pub conv_channels: usize,
    pub n_conv_blocks: usize,
    pub dropout: f32,
    pub n_mels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 2048,
            conv_channels: 64,
            n_conv_blocks: 3,
            dropout: 0.3,
            n_mels: 64,
        }
    }
}

impl EncoderConfig {
    pub fn with_dim(d: usize) -> Self {
        Self {
            d,
            ..Self::default()
        }
    }

    pub fn downsample(&self) -> usize {
        1 << self.n_conv_blocks
    }

    /// Width of the per-frame feature vector after the conv stack.
    pub fn flat_features(&self) -> usize {
        self.conv_channels * self.n_mels / self.downsample()
    }

    pub fn is_full_size(&self) -> bool {
        matches!(self.d, 512 | 1024 | 2048)
            && self.conv_channels == 64
            && self.n_conv_blocks == 3
            && self.n_mels == 64
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.conv_channels == 0 || self.n_conv_blocks == 0 {
            return Err(Error::Config("encoder: d, conv_channels, n_conv_blocks must be positive".into()));
        }
        if self.n_mels % self.downsample() != 0 {
            return Err(Error::Config(format!(
                "encoder: n_mels {} not divisible by {}",
                self.n_mels,
                self.downsample()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder: dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Layer name and output shape for each stage of the last forward pass.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
    relu: Relu,
    pool: MaxPool2,
}

/// `[conv3x3 -> BN -> ReLU -> maxpool2]` x n, frames as a sequence of
/// `channels * pooled_mels` features (channel-major), two ReLU linear
/// layers with dropout between them, then max + mean over time.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    blocks: Vec<ConvBlock>,
    fc1: Linear,
    relu1: Relu,
    dropout: Dropout,
    fc2: Linear,
    relu2: Relu,
    pool_argmax: Vec<u32>,
    pooled_shape: [usize; 4],
    trace: ShapeTrace,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        cfg.validate().expect("valid encoder config");
        let blocks = (0..cfg.n_conv_blocks)
            .map(|i| ConvBlock {
                conv: Conv2d::new(if i == 0 { 1 } else { cfg.conv_channels }, cfg.conv_channels, rng),
                bn: BatchNorm::new(cfg.conv_channels),
                relu: Relu::default(),
                pool: MaxPool2::default(),
            })
            .collect();
        Self {
            fc1: Linear::new(cfg.flat_features(), cfg.d, rng),
            fc2: Linear::new(cfg.d, cfg.d, rng),
            cfg: cfg.clone(),
            blocks,
            relu1: Relu::default(),
            dropout: Dropout::new(cfg.dropout),
            relu2: Relu::default(),
            pool_argmax: Vec::new(),
            pooled_shape: [0; 4],
            trace: Vec::new(),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn last_trace(&self) -> &ShapeTrace {
        &self.trace
    }

    /// Hashes every ReLU mask and max selection of the last forward pass;
    /// equal hashes mean the same piecewise-linear region.
    pub fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        for blk in &self.blocks {
            blk.relu.hash_pattern(h);
            blk.pool.hash_pattern(h);
        }
        self.relu1.hash_pattern(h);
        self.relu2.hash_pattern(h);
        std::hash::Hash::hash(&self.pool_argmax, h);
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.n_mels {
            return Err(Error::ShapeMismatch {
                expected: vec![s.first().copied().unwrap_or(0), 1, self.cfg.n_mels, 0],
                actual: s.to_vec(),
            });
        }
        let k = self.cfg.downsample();
        if s[3] == 0 || s[3] % k != 0 {
            return Err(Error::InvalidInput(format!(
                "frame count {} not divisible by {k}",
                s[3]
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
        Ok(())
    }

    /// `[B, 1, F, T] -> [B, d]`.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        self.check_input(x)?;
        self.trace.clear();
        let mut h = x.clone();
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            h = blk.conv.forward(&h);
            h = blk.bn.forward(&h, mode);
            h = blk.relu.forward(h);
            h = blk.pool.forward(&h);
            self.trace.push((format!("block{}", i + 1), h.shape().to_vec()));
        }
        let &[b, c, f, t] = h.shape() else { unreachable!() };
        self.pooled_shape = [b, c, f, t];
        let feat = c * f;
        let mut seq = Tensor::zeros(&[b, t, feat]);
        {
            let (src, dst) = (h.data(), seq.data_mut());
            for n in 0..b {
                for ch in 0..c {
                    for fr in 0..f {
                        let row = &src[((n * c + ch) * f + fr) * t..][..t];
                        for (ti, &v) in row.iter().enumerate() {
                            dst[(n * t + ti) * feat + ch * f + fr] = v;
                        }
                    }
                }
            }
        }
        self.trace.push(("reshape".into(), seq.shape().to_vec()));
        let mut z = self.fc1.forward(&seq);
        z = self.relu1.forward(z);
        z = self.dropout.forward(z, mode, rng);
        z = self.fc2.forward(&z);
        z = self.relu2.forward(z);
        self.trace.push(("fc2".into(), z.shape().to_vec()));
        let (y, argmax) = temporal_max_mean(&z);
        self.pool_argmax = argmax;
        self.trace.push(("pool".into(), y.shape().to_vec()));
        Ok(y)
    }

    /// Accumulates parameter gradients for `dy = dL/dy`, `[B, d]`.
    pub fn backward(&mut self, dy: &Tensor) {
        let [b, c, f, t] = self.pooled_shape;
        let d = self.cfg.d;
        let mut dz = Tensor::zeros(&[b, t, d]);
        for n in 0..b {
            for k in 0..d {
                let g = dy.data()[n * d + k];
                let share = g / t as f32;
                for ti in 0..t {
                    dz.data_mut()[(n * t + ti) * d + k] = share;
                }
                dz.data_mut()[(n * t + self.pool_argmax[n * d + k] as usize) * d + k] += g;
            }
        }
        let mut g = self.relu2.backward(dz);
        g = self.fc2.backward(&g);
        g = self.dropout.backward(g);
        g = self.relu1.backward(g);
        let dseq = self.fc1.backward(&g);
        let feat = c * f;
        let mut dh = Tensor::zeros(&[b, c, f, t]);
        {
            let (src, dst) = (dseq.data(), dh.data_mut());
            for n in 0..b {
                for ch in 0..c {
                    for fr in 0..f {
                        let row = &mut dst[((n * c + ch) * f + fr) * t..][..t];
                        for (ti, v) in row.iter_mut().enumerate() {
                            *v = src[(n * t + ti) * feat + ch * f + fr];
                        }
                    }
                }
            }
        }
        let last = self.blocks.len() - 1;
        for (i, blk) in self.blocks.iter_mut().enumerate().rev() {
            dh = blk.pool.backward(&dh);
            dh = blk.relu.backward(dh);
            dh = blk.bn.backward(&dh);
            match blk.conv.backward(&dh, i != 0) {
                Some(dx) => dh = dx,
                None => debug_assert_eq!(i, 0, "{last}"),
            }
        }
    }
}

/// `[B, T, d] -> [B, d]`: elementwise max over time plus mean over time.
/// Also returns the argmax frame (first on ties) per output element.
pub fn temporal_max_mean(z: &Tensor) -> (Tensor, Vec<u32>) {
    let &[b, t, d] = z.shape() else {
        panic!("temporal pooling input must be 3-d")
    };
    let mut y = Tensor::zeros(&[b, d]);
    let mut argmax = vec![0u32; b * d];
    let zd = z.data();
    for n in 0..b {
        for k in 0..d {
            let mut best = 0;
            let mut sum = 0f32;
            for ti in 0..t {
                let v = zd[(n * t + ti) * d + k];
                sum += v;
                if v > zd[(n * t + best) * d + k] {
                    best = ti;
                }
            }
            argmax[n * d + k] = best as u32;
            y.data_mut()[n * d + k] = zd[(n * t + best) * d + k] + sum / t as f32;
        }
    }
    (y, argmax)
}

impl Module for Encoder {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.conv.visit_params(&join(prefix, &format!("conv{}", i + 1)), out);
            blk.bn.visit_params(&join(prefix, &format!("bn{}", i + 1)), out);
        }
        self.fc1.visit_params(&join(prefix, "fc1"), out);
        self.fc2.visit_params(&join(prefix, "fc2"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.conv.visit_params_mut(&join(prefix, &format!("conv{}", i + 1)), out);
            blk.bn.visit_params_mut(&join(prefix, &format!("bn{}", i + 1)), out);
        }
        self.fc1.visit_params_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), out);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.bn.visit_buffers(&join(prefix, &format!("bn{}", i + 1)), out);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.bn.visit_buffers_mut(&join(prefix, &format!("bn{}", i + 1)), out);
        }
    }
}
