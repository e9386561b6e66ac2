//! Layers with cached forward state and explicit backward passes.

mod activation;
mod batchnorm;
mod conv;
mod deconv;
mod depthwise;
mod resize;

pub use activation::{LeakyRelu, Relu};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use deconv::ConvTranspose2d;
pub use depthwise::DepthwiseConv2d;
pub use resize::{resize_bilinear, resize_bilinear_backward, Upsample};

use ndarray::Array4;

use crate::{Param, ParamSet, Real};

/// Whether a forward pass should cache state and use batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

pub trait Layer<T: Real>: Send {
    /// In `Mode::Train` the layer caches what `backward` needs.
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T>;

    /// Accumulates parameter gradients and returns the input gradient.
    ///
    /// Panics if the preceding forward pass was not run in `Mode::Train`.
    fn backward(&mut self, dy: &Array4<T>) -> Array4<T>;

    fn collect_params<'a>(&'a mut self, _out: &mut Vec<&'a mut Param<T>>) {}
}

/// A chain of layers applied in order.
pub struct Sequential<T: Real> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Self { layers: Vec::new() }
    }
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn with(mut self, layer: impl Layer<T> + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut h = first.forward(x, mode);
        for layer in iter {
            h = layer.forward(&h, mode);
        }
        h
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        for layer in self.layers.iter_mut() {
            layer.collect_params(out);
        }
    }
}

impl<T: Real> ParamSet<T> for Sequential<T> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        Layer::collect_params(self, out);
    }
}
