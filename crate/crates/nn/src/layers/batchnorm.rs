use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn};

use super::{Layer, Mode};
use crate::{Param, Real};

/// Per-channel batch normalization over (N, H, W).
///
/// Train mode normalizes with batch statistics and updates the running
/// estimates (momentum 0.1, unbiased variance); eval mode uses the running
/// estimates only.
pub struct BatchNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub eps: T,
    cache: Option<Cache<T>>,
}

struct Cache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(format!("{name}.running_var"), ArrayD::ones(IxDyn(&[channels]))),
            momentum: T::c(0.1),
            eps: T::c(1e-5),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "{}: channel mismatch", self.gamma.name);
        let count = n * h * w;
        let m = T::from_usize(count).expect("count");
        let mut out = x.to_owned();
        if !mode.is_train() {
            for ch in 0..c {
                let inv = T::one() / (self.running_var.value[[ch]] + self.eps).sqrt();
                let (g, b, mu) = (self.gamma.value[[ch]], self.beta.value[[ch]], self.running_mean.value[[ch]]);
                out.index_axis_mut(Axis(1), ch).mapv_inplace(|v| (v - mu) * inv * g + b);
            }
            self.cache = None;
            return out;
        }
        let mut inv_std = Array1::zeros(c);
        let mut xhat = Array4::zeros(x.raw_dim());
        for ch in 0..c {
            let plane = x.index_axis(Axis(1), ch);
            let mean = plane.sum() / m;
            let var = plane.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
            let inv = T::one() / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            let mut xh = xhat.index_axis_mut(Axis(1), ch);
            xh.zip_mut_with(&plane, |d, &v| *d = (v - mean) * inv);
            let (g, b) = (self.gamma.value[[ch]], self.beta.value[[ch]]);
            out.index_axis_mut(Axis(1), ch).zip_mut_with(&xh, |o, &v| *o = v * g + b);
            let unbiased = if count > 1 { var * m / (m - T::one()) } else { var };
            let mom = self.momentum;
            let rm = &mut self.running_mean.value[[ch]];
            *rm = (T::one() - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.value[[ch]];
            *rv = (T::one() - mom) * *rv + mom * unbiased;
        }
        self.cache = Some(Cache { xhat, inv_std });
        out
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let Cache { xhat, inv_std } = self.cache.take().expect("BatchNorm2d::backward without a train-mode forward");
        let (n, c, h, w) = dy.dim();
        let m = T::from_usize(n * h * w).expect("count");
        let mut dx = Array4::zeros(dy.raw_dim());
        for ch in 0..c {
            let g = dy.index_axis(Axis(1), ch);
            let xh = xhat.index_axis(Axis(1), ch);
            let sum_g = g.sum();
            let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            self.beta.grad[[ch]] += sum_g;
            self.gamma.grad[[ch]] += sum_gx;
            let scale = self.gamma.value[[ch]] * inv_std[ch] / m;
            let mut d = dx.index_axis_mut(Axis(1), ch);
            ndarray::Zip::from(&mut d).and(&g).and(&xh).for_each(|d, &gv, &xv| {
                *d = scale * (m * gv - sum_g - xv * sum_gx);
            });
        }
        dx
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
}
