use rand::Rng;

use crate::augment::{make_views, post_normalize_pairs, AugmentContext, ViewPair};
use crate::data::batch_tensor;
use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig};
use crate::nn::gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
use crate::nn::{
    byol_loss, zero_grad, Adam, Encoder, EncoderConfig, HeadConfig, MlpHead, Mode, Module, Param,
    Tensor,
};
use crate::rng::seeded;

#[derive(Clone, Debug)]
pub struct OnlineNetwork {
    pub encoder: Encoder,
    pub projector: MlpHead,
    pub predictor: MlpHead,
}

#[derive(Clone, Debug)]
pub struct TargetNetwork {
    pub encoder: Encoder,
    pub projector: MlpHead,
}

macro_rules! impl_module {
    ($ty:ty, $($field:ident),+) => {
        impl Module for $ty {
            fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
                $(self.$field.visit_params(&crate::nn::join(prefix, stringify!($field)), out);)+
            }
            fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
                $(self.$field.visit_params_mut(&crate::nn::join(prefix, stringify!($field)), out);)+
            }
            fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
                $(self.$field.visit_buffers(&crate::nn::join(prefix, stringify!($field)), out);)+
            }
            fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
                $(self.$field.visit_buffers_mut(&crate::nn::join(prefix, stringify!($field)), out);)+
            }
        }
    };
}

impl_module!(OnlineNetwork, encoder, projector, predictor);
impl_module!(TargetNetwork, encoder, projector);

/// Everything that evolves during BYOL training except the augmentation
/// memory bank, which lives in [`AugmentContext`].
#[derive(Clone, Debug)]
pub struct ByolState {
    pub online: OnlineNetwork,
    pub target: TargetNetwork,
    pub optimizer: Adam,
    pub tau: f64,
    pub step: u64,
}

/// Gradients flow through the online network only, so that is what the
/// module view exposes.
impl Module for ByolState {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.online.visit_params(prefix, out)
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.online.visit_params_mut(prefix, out)
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.online.visit_buffers(prefix, out)
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.online.visit_buffers_mut(prefix, out)
    }
}

/// `tau * xi + (1 - tau) * theta`, rounded to the f32 neighbour that does
/// not move farther from `theta` than the exact value.
pub fn ema_lerp(xi: f32, theta: f32, tau: f64) -> f32 {
    if tau == 1.0 {
        return xi;
    }
    if tau == 0.0 {
        return theta;
    }
    let gap = tau * (xi as f64 - theta as f64);
    let r = (theta as f64 + gap) as f32;
    if (r as f64 - theta as f64).abs() > gap.abs() {
        if r > theta {
            r.next_down()
        } else {
            r.next_up()
        }
    } else {
        r
    }
}

impl ByolState {
    pub fn new<R: Rng + ?Sized>(encoder: &EncoderConfig, head: &HeadConfig, adam: crate::nn::AdamConfig, tau: f64, rng: &mut R) -> Self {
        let enc = Encoder::new(encoder, rng);
        let projector = MlpHead::new(encoder.d, head, rng);
        let predictor = MlpHead::new(head.out, head, rng);
        Self {
            target: TargetNetwork {
                encoder: enc.clone(),
                projector: projector.clone(),
            },
            online: OnlineNetwork {
                encoder: enc,
                projector,
                predictor,
            },
            optimizer: Adam::new(adam),
            tau,
            step: 0,
        }
    }

    pub fn from_config<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Self {
        Self::new(&cfg.encoder, &cfg.head, cfg.train.adam(), cfg.train.tau, rng)
    }

    /// Symmetric loss on a stacked batch `x = [v_1..v_B, v'_1..v'_B]`:
    /// the prediction for each view regresses the target projection of the
    /// other view. With `backward`, accumulates online-network gradients.
    pub fn loss_on_batch<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        online_mode: Mode,
        target_mode: Mode,
        backward: bool,
        rng: &mut R,
    ) -> Result<f64> {
        let n = x.shape()[0];
        if n % 2 != 0 || n < 2 {
            return Err(Error::InvalidInput(format!("stacked batch of {n} is not two equal halves")));
        }
        let b = n / 2;
        let y = self.online.encoder.forward(x, online_mode, rng)?;
        let z = self.online.projector.forward(&y, online_mode)?;
        let q = self.online.predictor.forward(&z, online_mode)?;
        let yt = self.target.encoder.forward(x, target_mode, rng)?;
        let zt = self.target.projector.forward(&yt, target_mode)?;
        let (l1, dq1) = byol_loss(&q.rows(0, b), &zt.rows(b, n));
        let (l2, dq2) = byol_loss(&q.rows(b, n), &zt.rows(0, b));
        let loss = l1 + l2;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        if backward {
            let dq = Tensor::cat_rows(&[&dq1, &dq2]);
            let dz = self.online.predictor.backward(&dq);
            let dy = self.online.projector.backward(&dz);
            self.online.encoder.backward(&dy);
        }
        Ok(loss)
    }

    /// Loss of prepared view pairs without touching gradients.
    pub fn symmetric_loss<R: Rng + ?Sized>(&mut self, pairs: &[ViewPair], mode: Mode, rng: &mut R) -> Result<f64> {
        let x = stack_pairs(pairs)?;
        let target_mode = if mode == Mode::Train { Mode::TrainFrozenStats } else { mode };
        self.loss_on_batch(&x, mode, target_mode, false, rng)
    }

    /// One optimization step on a batch of raw (not yet normalized) segments.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        raw: &[LogMelSpectrogram],
        ctx: &mut AugmentContext,
        rng: &mut R,
    ) -> Result<f64> {
        let mut pairs = Vec::with_capacity(raw.len());
        for x in raw {
            pairs.push(make_views(x, ctx, rng)?);
        }
        let pairs = post_normalize_pairs(pairs, &ctx.cfg)?;
        let x = stack_pairs(&pairs)?;
        zero_grad(&mut self.online);
        let loss = self.loss_on_batch(&x, Mode::Train, Mode::TrainFrozenStats, true, rng)?;
        let mut params = Vec::new();
        self.online.visit_params_mut("", &mut params);
        if params.iter().any(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }
        self.optimizer.update(params);
        self.ema_update();
        self.step += 1;
        Ok(loss)
    }

    /// `xi <- tau * xi + (1 - tau) * theta` for target parameters and
    /// normalization buffers.
    pub fn ema_update(&mut self) {
        let tau = self.tau;
        let mut src = Vec::new();
        self.online.encoder.visit_params("encoder", &mut src);
        self.online.projector.visit_params("projector", &mut src);
        let mut dst = Vec::new();
        self.target.visit_params_mut("", &mut dst);
        assert_eq!(src.len(), dst.len(), "online and target structures differ");
        for ((sn, s), (dn, d)) in src.into_iter().zip(dst) {
            debug_assert_eq!(sn, dn);
            for (x, &t) in d.value.data_mut().iter_mut().zip(s.value.data()) {
                *x = ema_lerp(*x, t, tau);
            }
        }
        let mut src = Vec::new();
        self.online.encoder.visit_buffers("encoder", &mut src);
        self.online.projector.visit_buffers("projector", &mut src);
        let mut dst = Vec::new();
        self.target.visit_buffers_mut("", &mut dst);
        for ((_, s), (_, d)) in src.into_iter().zip(dst) {
            for (x, &t) in d.data_mut().iter_mut().zip(s.data()) {
                *x = ema_lerp(*x, t, tau);
            }
        }
    }

    /// Hash of the online network's last activation pattern.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.online.encoder.hash_pattern(&mut h);
        self.online.projector.hash_pattern(&mut h);
        self.online.predictor.hash_pattern(&mut h);
        h.finish()
    }

    /// Networks, optimizer moments and counters. The memory bank is stored
    /// separately by the caller.
    pub fn write_into(&self, ckpt: &mut Checkpoint) {
        ckpt.put_module("online", &self.online);
        ckpt.put_module("target", &self.target);
        for (name, m, v) in self.optimizer.moments() {
            ckpt.insert(format!("optim.m.{name}"), m.clone());
            ckpt.insert(format!("optim.v.{name}"), v.clone());
        }
        ckpt.meta.insert("step".into(), self.step.into());
        ckpt.meta.insert("optim_step".into(), self.optimizer.step.into());
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.load_module("online", &mut self.online)?;
        ckpt.load_module("target", &mut self.target)?;
        self.step = ckpt.meta_u64("step")?;
        let optim_step = ckpt.meta_u64("optim_step")?;
        let mut moments = Vec::new();
        if optim_step > 0 {
            for (name, _) in crate::nn::named_params(&self.online) {
                let m = ckpt.require(&format!("optim.m.{name}"))?.clone();
                let v = ckpt.require(&format!("optim.v.{name}"))?.clone();
                moments.push((name, m, v));
            }
        }
        self.optimizer.restore(optim_step, moments)
    }
}

fn stack_pairs(pairs: &[ViewPair]) -> Result<Tensor> {
    batch_tensor(pairs.iter().map(|p| &p.v).chain(pairs.iter().map(|p| &p.v_prime)))
}

/// Finite-difference check of the full online path through the symmetric
/// loss on a toy network (2 conv channels, d = 8, batch 4, 8x8 inputs),
/// with dropout disabled and normalization in eval mode.
pub fn byol_grad_check(seed: u64, cfg: &GradCheckConfig) -> GradCheckReport {
    let enc = EncoderConfig {
        d: 8,
        conv_channels: 2,
        n_mels: 8,
        dropout: 0.0,
        ..EncoderConfig::default()
    };
    let head = HeadConfig { hidden: 12, out: 6 };
    let mut rng = seeded(seed);
    let mut state = ByolState::new(&enc, &head, Default::default(), 0.99, &mut rng);
    // Separate the target from the online weights so the loss is not at
    // its minimum, and move biases and affine terms off their initial
    // values: zero biases put ReLU inputs exactly on the kink.
    state.target = ByolState::new(&enc, &head, Default::default(), 0.99, &mut rng).target;
    let mut params = Vec::new();
    state.online.visit_params_mut("", &mut params);
    for (name, p) in params {
        if name.ends_with("bias") || name.ends_with("beta") || name.ends_with("gamma") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.2..0.2f32);
            }
        }
    }
    let x = Tensor::from_vec(&[4, 1, 8, 8], (0..4 * 64).map(|_| rng.random_range(-1.0..1.0f32)).collect());
    let mode = Mode::Eval;
    finite_diff_check(
        &mut state,
        |s, backward| {
            let mut r = seeded(seed ^ 0x5eed);
            let loss = s.loss_on_batch(&x, mode, mode, backward, &mut r).expect("finite toy loss");
            (loss, s.activation_pattern())
        },
        cfg,
    )
}
