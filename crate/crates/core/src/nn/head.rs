use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Linear, Relu};
use super::module::{join, Mode, Module, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub out: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 4096,
            out: 256,
        }
    }
}

/// Linear -> BatchNorm -> ReLU -> Linear; used for the projector and the
/// predictor.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub linear_in: Linear,
    pub bn: BatchNorm,
    relu: Relu,
    pub linear_out: Linear,
}

impl MlpHead {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, cfg: &HeadConfig, rng: &mut R) -> Self {
        Self {
            linear_in: Linear::new(in_dim, cfg.hidden, rng),
            bn: BatchNorm::new(cfg.hidden),
            relu: Relu::default(),
            linear_out: Linear::new(cfg.hidden, cfg.out, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.linear_out.out_dim
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.linear_in.in_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![x.shape()[0], self.linear_in.in_dim],
                actual: x.shape().to_vec(),
            });
        }
        if mode.batch_stats() && x.shape()[0] < 2 {
            return Err(Error::InvalidInput("batch statistics need at least 2 rows".into()));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("head input".into()));
        }
        let h = self.linear_in.forward(x);
        let h = self.bn.forward(&h, mode);
        let h = self.relu.forward(h);
        Ok(self.linear_out.forward(&h))
    }

    pub fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        self.relu.hash_pattern(h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.linear_out.backward(dy);
        let g = self.relu.backward(g);
        let g = self.bn.backward(&g);
        self.linear_in.backward(&g)
    }
}

impl Module for MlpHead {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.linear_in.visit_params(&join(prefix, "linear_in"), out);
        self.bn.visit_params(&join(prefix, "bn"), out);
        self.linear_out.visit_params(&join(prefix, "linear_out"), out);
    }
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.linear_in.visit_params_mut(&join(prefix, "linear_in"), out);
        self.bn.visit_params_mut(&join(prefix, "bn"), out);
        self.linear_out.visit_params_mut(&join(prefix, "linear_out"), out);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.bn.visit_buffers(&join(prefix, "bn"), out);
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), out);
    }
}
