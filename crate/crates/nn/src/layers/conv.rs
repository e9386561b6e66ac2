use ndarray::{linalg::general_mat_mul, Array2, Array4, ArrayView2, ArrayViewMut2, Axis, Ix4};

use super::{Layer, Mode};
use crate::tensor::{col2im, im2col, ConvGeom};
use crate::{Param, Real};

/// 2-D convolution with square kernel, zero padding and bias.
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeom,
    in_ch: usize,
    out_ch: usize,
    cache: Option<Cache<T>>,
}

struct Cache<T> {
    cols: Vec<Array2<T>>,
    in_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel])
                .with_fan_in(in_ch * kernel * kernel),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            geom: ConvGeom { kernel, stride, pad },
            in_ch,
            out_ch,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn is_pointwise(&self) -> bool {
        self.geom == ConvGeom { kernel: 1, stride: 1, pad: 0 }
    }

    fn weight_2d(&self) -> ArrayView2<'_, T> {
        let k = self.geom.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * k * k))
            .expect("contiguous weight")
    }

    /// Input gradient only, without touching parameter gradients or the cache.
    ///
    /// Valid for pointwise convolutions, whose input gradient does not depend
    /// on the forward input.
    pub fn backward_input_pointwise(&self, dy: &Array4<T>) -> Array4<T> {
        assert!(self.is_pointwise(), "backward_input_pointwise on a spatial kernel");
        let (n, _, h, w) = dy.dim();
        let wt = self.weight_2d();
        let mut dx = Array4::zeros((n, self.in_ch, h, w));
        for b in 0..n {
            let dyb = dy.index_axis(Axis(0), b);
            let dyb = dyb.into_shape_with_order((self.out_ch, h * w)).expect("contiguous");
            let mut dxb = dx.index_axis_mut(Axis(0), b);
            let dxb = dxb.view_mut().into_shape_with_order((self.in_ch, h * w)).expect("contiguous");
            mm(T::one(), &wt.t(), &dyb, T::zero(), dxb);
        }
        dx
    }
}

fn mm<T: Real>(alpha: T, a: &ArrayView2<T>, b: &ArrayView2<T>, beta: T, c: ArrayViewMut2<T>) {
    let mut c = c;
    general_mat_mul(alpha, a, b, beta, &mut c);
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "{}: channel mismatch", self.weight.name);
        let g = self.geom;
        let (oh, ow) = (g.conv_out(h), g.conv_out(w));
        let k = g.kernel;
        let x = x.as_standard_layout();
        let mut out = Array4::<T>::zeros((n, self.out_ch, oh, ow));
        let mut cols_cache = Vec::with_capacity(if mode.is_train() { n } else { 0 });
        let pointwise = self.is_pointwise();
        for b in 0..n {
            let xb = x.index_axis(Axis(0), b);
            let cols = if pointwise {
                xb.to_owned().into_shape_with_order((c, h * w)).expect("contiguous")
            } else {
                let mut cols = Array2::<T>::zeros((c * k * k, oh * ow));
                im2col(
                    xb.as_slice().expect("standard layout"),
                    c,
                    h,
                    w,
                    g,
                    oh,
                    ow,
                    cols.as_slice_mut().expect("owned"),
                );
                cols
            };
            {
                let mut ob = out.index_axis_mut(Axis(0), b);
                for (mut plane, &bias) in ob.outer_iter_mut().zip(self.bias.value.iter()) {
                    plane.fill(bias);
                }
                let ob = ob.into_shape_with_order((self.out_ch, oh * ow)).expect("contiguous");
                mm(T::one(), &self.weight_2d(), &cols.view(), T::one(), ob);
            }
            if mode.is_train() {
                cols_cache.push(cols);
            }
        }
        self.cache = mode.is_train().then_some(Cache { cols: cols_cache, in_hw: (h, w) });
        out
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("Conv2d::backward without a train-mode forward");
        let (n, _, oh, ow) = dy.dim();
        let (h, w) = cache.in_hw;
        let g = self.geom;
        let k = g.kernel;
        let dy = dy.as_standard_layout();
        let mut dx = Array4::<T>::zeros((n, self.in_ch, h, w));
        let rows = self.in_ch * k * k;
        let mut dw = Array2::<T>::zeros((self.out_ch, rows));
        let mut dcols = Array2::<T>::zeros((rows, oh * ow));
        for b in 0..n {
            let dyb = dy.index_axis(Axis(0), b);
            let dyb = dyb.into_shape_with_order((self.out_ch, oh * ow)).expect("contiguous");
            mm(T::one(), &dyb, &cache.cols[b].t(), T::one(), dw.view_mut());
            for (o, row) in dyb.outer_iter().enumerate() {
                self.bias.grad[[o]] += row.sum();
            }
            mm(T::one(), &self.weight_2d().t(), &dyb, T::zero(), dcols.view_mut());
            let mut dxb = dx.index_axis_mut(Axis(0), b);
            let dxs = dxb.as_slice_mut().expect("owned");
            if self.is_pointwise() {
                dxs.copy_from_slice(dcols.as_slice().expect("owned"));
            } else {
                col2im(dcols.as_slice().expect("owned"), self.in_ch, h, w, g, oh, ow, dxs);
            }
        }
        let dw = dw.into_shape_with_order((self.out_ch, self.in_ch, k, k)).expect("contiguous");
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix4>().expect("4-d weight");
        gw += &dw;
        dx
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}
