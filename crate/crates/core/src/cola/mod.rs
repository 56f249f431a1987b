//! The contrastive baseline: two random segments of a clip form a positive
//! pair, other clips in the batch are negatives, and similarity is a
//! bilinear form between L2-normalized projections.

use rand::Rng;

use crate::augment::{post_normalize_pairs, AugmentConfig, AugmentContext, ViewPair};
use crate::data::batch_tensor;
use crate::dsp::{crop_or_pad, LogMelSpectrogram};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig};
use crate::nn::gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
use crate::nn::{
    gemm, join, l2_normalize_rows, l2_normalize_rows_backward, named_params, softmax_cross_entropy, zero_grad,
    Adam, AdamConfig, Encoder, EncoderConfig, Linear, Mode, Module, Param, Tensor,
};
use crate::rng::seeded;
use crate::train::Pretrainable;

/// Encoder, linear projection and the bilinear matrix.
#[derive(Clone, Debug)]
pub struct ColaNetwork {
    pub encoder: Encoder,
    pub projection: Linear,
    pub bilinear: Param,
}

impl ColaNetwork {
    pub fn new<R: Rng + ?Sized>(encoder: &EncoderConfig, proj_dim: usize, rng: &mut R) -> Self {
        let mut w = Tensor::zeros(&[proj_dim, proj_dim]);
        for i in 0..proj_dim {
            w.data_mut()[i * proj_dim + i] = 1.0;
        }
        Self {
            encoder: Encoder::new(encoder, rng),
            projection: Linear::new(encoder.d, proj_dim, rng),
            bilinear: Param::new(w),
        }
    }

    pub fn proj_dim(&self) -> usize {
        self.projection.out_dim
    }

    /// Contrastive loss on a stacked batch `[a_1..a_B, p_1..p_B]`; with
    /// `backward`, accumulates gradients.
    pub fn loss_on_batch<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, backward: bool, rng: &mut R) -> Result<f64> {
        let n = x.shape()[0];
        if n % 2 != 0 {
            return Err(Error::InvalidInput(format!("stacked batch of {n} is not two equal halves")));
        }
        let b = n / 2;
        let y = self.encoder.forward(x, mode, rng)?;
        let z = self.projection.forward(&y);
        let (zn, norms) = l2_normalize_rows(&z);
        let (loss, da, dp, dw) = contrastive_loss(&zn.rows(0, b), &zn.rows(b, n), &self.bilinear.value)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("contrastive loss".into()));
        }
        if backward {
            for (g, d) in self.bilinear.grad.data_mut().iter_mut().zip(dw.data()) {
                *g += d;
            }
            let dzn = Tensor::cat_rows(&[&da, &dp]);
            let dz = l2_normalize_rows_backward(&zn, &norms, &dzn);
            let dy = self.projection.backward(&dz);
            self.encoder.backward(&dy);
        }
        Ok(loss)
    }

    pub fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        self.encoder.hash_pattern(h)
    }
}

impl Module for ColaNetwork {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.encoder.visit_params(&join(prefix, "encoder"), out);
        self.projection.visit_params(&join(prefix, "projection"), out);
        out.push((join(prefix, "bilinear"), &self.bilinear));
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), out);
        self.projection.visit_params_mut(&join(prefix, "projection"), out);
        out.push((join(prefix, "bilinear"), &mut self.bilinear));
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.encoder.visit_buffers(&join(prefix, "encoder"), out);
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.encoder.visit_buffers_mut(&join(prefix, "encoder"), out);
    }
}

#[derive(Clone, Debug)]
pub struct ColaState {
    pub net: ColaNetwork,
    pub optimizer: Adam,
    pub step: u64,
}

impl ColaState {
    pub fn new<R: Rng + ?Sized>(encoder: &EncoderConfig, proj_dim: usize, adam: AdamConfig, rng: &mut R) -> Self {
        Self {
            net: ColaNetwork::new(encoder, proj_dim, rng),
            optimizer: Adam::new(adam),
            step: 0,
        }
    }

    /// The projection width follows `head.out`.
    pub fn from_config<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Self {
        Self::new(&cfg.encoder, cfg.head.out, cfg.train.adam(), rng)
    }

    /// One optimization step on a batch of full-length clips.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        clips: &[&LogMelSpectrogram],
        t: usize,
        silence: f32,
        ctx: &mut AugmentContext,
        rng: &mut R,
    ) -> Result<f64> {
        if clips.len() < 2 {
            return Err(Error::InvalidInput("contrastive loss needs a batch of at least 2".into()));
        }
        let mut pairs = Vec::with_capacity(clips.len());
        for c in clips {
            pairs.push(cola_views(c, t, silence, ctx, rng)?);
        }
        let pairs = post_normalize_pairs(pairs, &ctx.cfg)?;
        let x = batch_tensor(pairs.iter().map(|p| &p.v).chain(pairs.iter().map(|p| &p.v_prime)))?;
        zero_grad(&mut self.net);
        let loss = self.net.loss_on_batch(&x, Mode::Train, true, rng)?;
        let mut params = Vec::new();
        self.net.visit_params_mut("", &mut params);
        if params.iter().any(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }
        self.optimizer.update(params);
        self.step += 1;
        Ok(loss)
    }
}

impl Pretrainable for ColaState {
    const METHOD: &'static str = "cola";

    fn init(cfg: &RunConfig, rng: &mut crate::rng::Rng) -> Self {
        Self::from_config(cfg, rng)
    }

    fn step_on_clips(
        &mut self,
        clips: &[&LogMelSpectrogram],
        t: usize,
        silence: f32,
        ctx: &mut AugmentContext,
        rng: &mut crate::rng::Rng,
    ) -> Result<f64> {
        self.train_step(clips, t, silence, ctx, rng)
    }

    fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.net.encoder
    }

    fn steps_taken(&self) -> u64 {
        self.step
    }

    fn write_into(&self, ckpt: &mut Checkpoint) {
        ckpt.put_module("online", &self.net);
        for (name, m, v) in self.optimizer.moments() {
            ckpt.insert(format!("optim.m.{name}"), m.clone());
            ckpt.insert(format!("optim.v.{name}"), v.clone());
        }
        ckpt.meta.insert("step".into(), self.step.into());
        ckpt.meta.insert("optim_step".into(), self.optimizer.step.into());
    }

    fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.load_module("online", &mut self.net)?;
        self.step = ckpt.meta_u64("step")?;
        let optim_step = ckpt.meta_u64("optim_step")?;
        let mut moments = Vec::new();
        if optim_step > 0 {
            for (name, _) in named_params(&self.net) {
                let m = ckpt.require(&format!("optim.m.{name}"))?.clone();
                let v = ckpt.require(&format!("optim.v.{name}"))?.clone();
                moments.push((name, m, v));
            }
        }
        self.optimizer.restore(optim_step, moments)
    }
}

/// Augmentation settings for a baseline variant: `none`, `mixup`,
/// `mixup+rrc`, `gaussian`. Batch post-normalization runs only when some
/// block is enabled.
pub fn cola_augment(base: &AugmentConfig, variant: &str) -> Result<AugmentConfig> {
    let mut cfg = base.clone().with_blocks(variant)?;
    cfg.post_norm = cfg.use_mixup || cfg.use_rrc || cfg.use_gaussian;
    Ok(cfg)
}

/// Two independent `t`-frame crops of `clip`, both pre-normalized.
pub fn sample_two_segments<R: Rng + ?Sized>(
    clip: &LogMelSpectrogram,
    t: usize,
    silence: f32,
    ctx: &AugmentContext,
    rng: &mut R,
) -> (LogMelSpectrogram, LogMelSpectrogram) {
    let a = crop_or_pad(clip, t, silence, rng);
    let b = crop_or_pad(clip, t, silence, rng);
    (ctx.normalize(&a), ctx.normalize(&b))
}

/// Positive pair for one clip after the enabled augmentation blocks.
pub fn cola_views<R: Rng + ?Sized>(
    clip: &LogMelSpectrogram,
    t: usize,
    silence: f32,
    ctx: &mut AugmentContext,
    rng: &mut R,
) -> Result<ViewPair> {
    let (a, b) = sample_two_segments(clip, t, silence, ctx, rng);
    Ok(ViewPair {
        v: ctx.augment_one(&a, rng)?,
        v_prime: ctx.augment_one(&b, rng)?,
    })
}

/// `a^T W b`.
pub fn bilinear_similarity(a: &[f32], b: &[f32], w: &Tensor) -> f64 {
    let p = a.len();
    assert_eq!(w.shape(), &[p, b.len()], "bilinear shape");
    let mut s = 0.0f64;
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = &w.data()[i * b.len()..(i + 1) * b.len()];
        let r: f64 = row.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
        s += ai as f64 * r;
    }
    s
}

/// Mean in-batch softmax cross-entropy over `S = A W P^T` with the diagonal
/// as targets. Returns the loss and gradients for `A`, `P` and `W`.
pub fn contrastive_loss(a: &Tensor, p: &Tensor, w: &Tensor) -> Result<(f64, Tensor, Tensor, Tensor)> {
    let (&[b, d], &[bp, dp]) = (a.shape(), p.shape()) else {
        return Err(Error::InvalidInput("anchors and positives must be matrices".into()));
    };
    if b != bp || d != dp || w.shape() != [d, d] {
        return Err(Error::ShapeMismatch {
            expected: vec![b, d],
            actual: p.shape().to_vec(),
        });
    }
    if b < 2 {
        return Err(Error::InvalidInput("contrastive loss needs a batch of at least 2".into()));
    }
    let (av, pv, wv) = (a.data(), p.data(), w.data());
    let mut aw = vec![0.0f32; b * d];
    gemm(b, d, d, 1.0, av, false, wv, false, 0.0, &mut aw);
    let mut s = Tensor::zeros(&[b, b]);
    gemm(b, d, b, 1.0, &aw, false, pv, true, 0.0, s.data_mut());
    let labels: Vec<usize> = (0..b).collect();
    let (loss, ds) = softmax_cross_entropy(&s, &labels);
    let ds = ds.data();

    let mut pw = vec![0.0f32; b * d];
    gemm(b, d, d, 1.0, pv, false, wv, true, 0.0, &mut pw);
    let mut da = Tensor::zeros(&[b, d]);
    gemm(b, b, d, 1.0, ds, false, &pw, false, 0.0, da.data_mut());
    let mut dpt = Tensor::zeros(&[b, d]);
    gemm(b, b, d, 1.0, ds, true, &aw, false, 0.0, dpt.data_mut());
    let mut dsp = vec![0.0f32; b * d];
    gemm(b, b, d, 1.0, ds, false, pv, false, 0.0, &mut dsp);
    let mut dw = Tensor::zeros(&[d, d]);
    gemm(d, b, d, 1.0, av, true, &dsp, false, 0.0, dw.data_mut());
    Ok((loss, da, dpt, dw))
}

/// Finite-difference check of the encoder, projection and bilinear matrix
/// through the contrastive loss on a toy network, in eval mode with
/// dropout disabled.
pub fn cola_grad_check(seed: u64, cfg: &GradCheckConfig) -> GradCheckReport {
    let enc = EncoderConfig {
        d: 8,
        conv_channels: 2,
        n_mels: 8,
        dropout: 0.0,
        ..EncoderConfig::default()
    };
    let mut rng = seeded(seed);
    let mut net = ColaNetwork::new(&enc, 6, &mut rng);
    let mut params = Vec::new();
    net.visit_params_mut("", &mut params);
    for (name, p) in params {
        if name.ends_with("bias") || name.ends_with("beta") || name.ends_with("gamma") || name == "bilinear" {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.2..0.2f32);
            }
        }
    }
    let x = Tensor::from_vec(&[4, 1, 8, 8], (0..4 * 64).map(|_| rng.random_range(-1.0..1.0f32)).collect());
    finite_diff_check(
        &mut net,
        |n, backward| {
            let loss = n.loss_on_batch(&x, Mode::Eval, backward, &mut seeded(0)).expect("finite toy loss");
            use std::hash::Hasher;
            let mut h = std::collections::hash_map::DefaultHasher::new();
            n.hash_pattern(&mut h);
            (loss, h.finish())
        },
        cfg,
    )
}
