//! Parameter initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Param, Real};

/// He-normal initialization of every param that declares a fan-in.
///
/// Biases, BatchNorm affine terms and buffers keep their constructed values.
pub fn he_normal<T: Real, R: Rng + ?Sized>(params: &mut [&mut Param<T>], gain: f64, rng: &mut R) {
    for p in params.iter_mut() {
        let Some(fan_in) = p.fan_in else { continue };
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        p.value.mapv_inplace(|_| T::c(normal.sample(rng)));
    }
}
