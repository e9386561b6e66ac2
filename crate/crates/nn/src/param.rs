use ndarray::{ArrayD, IxDyn};

use crate::Real;

/// A named tensor with its gradient accumulator.
///
/// Buffers such as BatchNorm running statistics are stored as non-trainable
/// params so that serialization sees one flat list.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    pub trainable: bool,
    /// Fan-in used by initializers; `None` for biases and buffers.
    pub fan_in: Option<usize>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { name: name.into(), value, grad, trainable: true, fan_in: None }
    }

    pub fn buffer(name: impl Into<String>, value: ArrayD<T>) -> Self {
        let mut p = Self::new(name, value);
        p.trainable = false;
        p
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn with_fan_in(mut self, fan_in: usize) -> Self {
        self.fan_in = Some(fan_in);
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that exposes an ordered list of params.
///
/// The order must be stable: optimizers and checkpoints rely on it.
pub trait ParamSet<T: Real> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>);

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Number of trainable scalars.
    fn num_trainable(&mut self) -> usize {
        self.params_mut().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }
}
