use ndarray::Array4;

use super::{Layer, Mode};
use crate::Real;

pub struct Relu<T> {
    cache: Option<Array4<T>>,
}

impl<T> Default for Relu<T> {
    fn default() -> Self {
        Self { cache: None }
    }
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let y = x.mapv(|v| if v > T::zero() { v } else { T::zero() });
        self.cache = mode.is_train().then(|| y.clone());
        y
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let y = self.cache.take().expect("Relu::backward without a train-mode forward");
        let mut dx = dy.to_owned();
        dx.zip_mut_with(&y, |d, &v| {
            if v <= T::zero() {
                *d = T::zero();
            }
        });
        dx
    }
}

/// Leaky ReLU, `max(x, slope * x)`.
pub struct LeakyRelu<T> {
    pub slope: T,
    cache: Option<Array4<T>>,
}

impl<T: Real> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        Self { slope: T::c(slope), cache: None }
    }
}

impl<T: Real> Layer<T> for LeakyRelu<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let s = self.slope;
        if mode.is_train() {
            self.cache = Some(x.to_owned());
        } else {
            self.cache = None;
        }
        x.mapv(|v| if v > T::zero() { v } else { v * s })
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let x = self.cache.take().expect("LeakyRelu::backward without a train-mode forward");
        let s = self.slope;
        let mut dx = dy.to_owned();
        dx.zip_mut_with(&x, |d, &v| {
            if v <= T::zero() {
                *d *= s;
            }
        });
        dx
    }
}
