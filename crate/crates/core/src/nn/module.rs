use super::tensor::Tensor;

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout on.
    Train,
    /// Batch statistics and dropout, but running statistics left untouched.
    TrainFrozenStats,
    /// Running statistics, dropout off.
    Eval,
}

impl Mode {
    pub fn batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }

    pub fn updates_running_stats(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// Named access to parameters (learnable) and buffers (running statistics).
/// Names are stable and unique within a module tree.
pub trait Module {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);
    fn visit_buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, &'a Tensor)>) {}
    fn visit_buffers_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, &'a mut Tensor)>) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn named_params<M: Module + ?Sized>(m: &M) -> Vec<(String, &Param)> {
    let mut out = Vec::new();
    m.visit_params("", &mut out);
    out
}

pub fn named_buffers<M: Module + ?Sized>(m: &M) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    m.visit_buffers("", &mut out);
    out
}

/// Learnable element count; running statistics are excluded.
pub fn count_params<M: Module + ?Sized>(m: &M) -> usize {
    named_params(m).iter().map(|(_, p)| p.numel()).sum()
}

pub fn zero_grad<M: Module + ?Sized>(m: &mut M) {
    let mut out = Vec::new();
    m.visit_params_mut("", &mut out);
    for (_, p) in out {
        p.grad.fill(0.0);
    }
}
