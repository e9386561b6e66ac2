use ndarray::{linalg::general_mat_mul, Array2, Array4, ArrayView2, Axis, Ix4};

use super::{Layer, Mode};
use crate::tensor::{col2im, im2col, ConvGeom};
use crate::{Param, Real};

/// Transposed convolution (a.k.a. deconvolution) with bias.
///
/// Weight layout is `(in, out, k, k)`; output size is
/// `(n - 1) * stride + k - 2 * pad`.
pub struct ConvTranspose2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeom,
    in_ch: usize,
    out_ch: usize,
    cache: Option<Array4<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[in_ch, out_ch, kernel, kernel])
                .with_fan_in((in_ch * kernel * kernel / (stride * stride)).max(1)),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            geom: ConvGeom { kernel, stride, pad },
            in_ch,
            out_ch,
            cache: None,
        }
    }

    fn weight_2d(&self) -> ArrayView2<'_, T> {
        let k = self.geom.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.in_ch, self.out_ch * k * k))
            .expect("contiguous weight")
    }
}

impl<T: Real> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "{}: channel mismatch", self.weight.name);
        let g = self.geom;
        let k = g.kernel;
        let (oh, ow) = (g.deconv_out(h), g.deconv_out(w));
        let x = x.as_standard_layout().into_owned();
        let mut out = Array4::<T>::zeros((n, self.out_ch, oh, ow));
        let mut cols = Array2::<T>::zeros((self.out_ch * k * k, h * w));
        for b in 0..n {
            let xb = x.index_axis(Axis(0), b);
            let xb = xb.into_shape_with_order((c, h * w)).expect("contiguous");
            general_mat_mul(T::one(), &self.weight_2d().t(), &xb, T::zero(), &mut cols);
            let mut ob = out.index_axis_mut(Axis(0), b);
            for (mut plane, &bias) in ob.outer_iter_mut().zip(self.bias.value.iter()) {
                plane.fill(bias);
            }
            col2im(
                cols.as_slice().expect("owned"),
                self.out_ch,
                oh,
                ow,
                g,
                h,
                w,
                ob.as_slice_mut().expect("owned"),
            );
        }
        self.cache = mode.is_train().then_some(x);
        out
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let x = self.cache.take().expect("ConvTranspose2d::backward without a train-mode forward");
        let (n, _, h, w) = x.dim();
        let (_, _, oh, ow) = dy.dim();
        let g = self.geom;
        let k = g.kernel;
        let dy = dy.as_standard_layout();
        let rows = self.out_ch * k * k;
        let mut dcols = Array2::<T>::zeros((rows, h * w));
        let mut dw = Array2::<T>::zeros((self.in_ch, rows));
        let mut dx = Array4::<T>::zeros((n, self.in_ch, h, w));
        for b in 0..n {
            let dyb = dy.index_axis(Axis(0), b);
            for (o, plane) in dyb.outer_iter().enumerate() {
                self.bias.grad[[o]] += plane.sum();
            }
            im2col(
                dyb.as_slice().expect("standard layout"),
                self.out_ch,
                oh,
                ow,
                g,
                h,
                w,
                dcols.as_slice_mut().expect("owned"),
            );
            let xb = x.index_axis(Axis(0), b);
            let xb = xb.into_shape_with_order((self.in_ch, h * w)).expect("contiguous");
            general_mat_mul(T::one(), &xb, &dcols.t(), T::one(), &mut dw);
            let dxb = dx.index_axis_mut(Axis(0), b);
            let mut dxb = dxb.into_shape_with_order((self.in_ch, h * w)).expect("contiguous");
            general_mat_mul(T::one(), &self.weight_2d(), &dcols.view(), T::zero(), &mut dxb);
        }
        let dw = dw.into_shape_with_order((self.in_ch, self.out_ch, k, k)).expect("contiguous");
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix4>().expect("4-d weight");
        gw += &dw;
        dx
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}
