//! Adam with bias correction.

use ndarray::ArrayD;

use crate::{Param, Real};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    moments: Vec<(ArrayD<T>, ArrayD<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self { beta1: T::c(beta1), beta2: T::c(beta2), eps: T::c(1e-8), step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable param and clears all gradients.
    ///
    /// The param list must have the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "param list changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let lr = T::c(lr);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if p.trainable {
                ndarray::Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(m)
                    .and(v)
                    .for_each(|w, &g, m, v| {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *w -= lr * mhat / (vhat.sqrt() + self.eps);
                    });
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::<f64>::new("w", arr1(&[1.0, -2.0]).into_dyn());
        p.grad = arr1(&[0.5, -3.0]).into_dyn();
        let mut opt = Adam::new(0.9, 0.99);
        opt.step(&mut [&mut p], 0.1);
        // bias-corrected first step is lr * g / |g|
        assert!((p.value[IxDyn(&[0])] - 0.9).abs() < 1e-6);
        assert!((p.value[IxDyn(&[1])] + 1.9).abs() < 1e-6);
        assert_eq!(p.grad.sum(), 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::<f64>::new("w", arr1(&[3.0]).into_dyn());
        let mut opt = Adam::new(0.9, 0.99);
        for _ in 0..2000 {
            let w = p.value[IxDyn(&[0])];
            p.grad[IxDyn(&[0])] = 2.0 * (w - 1.0);
            opt.step(&mut [&mut p], 0.01);
        }
        assert!((p.value[IxDyn(&[0])] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut p = Param::<f64>::buffer("rm", arr1(&[1.0]).into_dyn());
        p.grad[IxDyn(&[0])] = 1.0;
        Adam::new(0.9, 0.99).step(&mut [&mut p], 0.1);
        assert_eq!(p.value[IxDyn(&[0])], 1.0);
    }
}
