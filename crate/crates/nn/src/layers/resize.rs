use ndarray::{Array4, ArrayView4, Axis};

use super::{Layer, Mode};
use crate::Real;

/// Interpolation taps for one axis: `(i0, i1, w0, w1)` per output index.
///
/// Half-pixel centers (`align_corners = false`), clamped at the border.
fn taps<T: Real>(in_n: usize, out_n: usize) -> Vec<(usize, usize, T, T)> {
    let scale = in_n as f64 / out_n as f64;
    (0..out_n)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_n - 1);
            let i1 = (i0 + 1).min(in_n - 1);
            let l1 = src - i0 as f64;
            (i0, i1, T::c(1.0 - l1), T::c(l1))
        })
        .collect()
}

/// Bilinear resize of every plane of an NCHW tensor to `(oh, ow)`.
pub fn resize_bilinear<T: Real>(x: ArrayView4<T>, oh: usize, ow: usize) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    if (h, w) == (oh, ow) {
        return x.to_owned();
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut out = Array4::zeros((n, c, oh, ow));
    for (src_b, mut dst_b) in x.outer_iter().zip(out.outer_iter_mut()) {
        for (src, mut dst) in src_b.outer_iter().zip(dst_b.outer_iter_mut()) {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    dst[[oy, ox]] = wy0 * (wx0 * src[[y0, x0]] + wx1 * src[[y0, x1]])
                        + wy1 * (wx0 * src[[y1, x0]] + wx1 * src[[y1, x1]]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: maps an output gradient back to `(h, w)`.
pub fn resize_bilinear_backward<T: Real>(dy: ArrayView4<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c, oh, ow) = dy.dim();
    if (h, w) == (oh, ow) {
        return dy.to_owned();
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut dx = Array4::zeros((n, c, h, w));
    for (g_b, mut d_b) in dy.outer_iter().zip(dx.outer_iter_mut()) {
        for (g, mut d) in g_b.outer_iter().zip(d_b.outer_iter_mut()) {
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let v = g[[oy, ox]];
                    d[[y0, x0]] += wy0 * wx0 * v;
                    d[[y0, x1]] += wy0 * wx1 * v;
                    d[[y1, x0]] += wy1 * wx0 * v;
                    d[[y1, x1]] += wy1 * wx1 * v;
                }
            }
        }
    }
    dx
}

/// Fixed-factor bilinear upsampling layer.
pub struct Upsample {
    pub factor: usize,
    in_hw: Option<(usize, usize)>,
}

impl Upsample {
    pub fn new(factor: usize) -> Self {
        Self { factor, in_hw: None }
    }
}

impl<T: Real> Layer<T> for Upsample {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let (h, w) = (x.len_of(Axis(2)), x.len_of(Axis(3)));
        self.in_hw = mode.is_train().then_some((h, w));
        resize_bilinear(x.view(), h * self.factor, w * self.factor)
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (h, w) = self.in_hw.take().expect("Upsample::backward without a train-mode forward");
        resize_bilinear_backward(dy.view(), h, w)
    }
}
