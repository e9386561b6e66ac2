use ndarray::{Array4, Axis};

use super::{Layer, Mode};
use crate::tensor::ConvGeom;
use crate::{Param, Real};

/// Depthwise convolution: one `k x k` filter per channel (groups = channels).
pub struct DepthwiseConv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeom,
    channels: usize,
    cache: Option<Array4<T>>,
}

impl<T: Real> DepthwiseConv2d<T> {
    pub fn new(name: &str, channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[channels, 1, kernel, kernel])
                .with_fan_in(kernel * kernel),
            bias: Param::zeros(format!("{name}.bias"), &[channels]),
            geom: ConvGeom { kernel, stride, pad },
            channels,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Iterates every (output index, input index, kernel index) triple of one plane.
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let g = self.geom;
        let (oh, ow) = (g.conv_out(h), g.conv_out(w));
        for oy in 0..oh {
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..ow {
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        f(oy * ow + ox, iy as usize * w + ix as usize, ky * g.kernel + kx);
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for DepthwiseConv2d<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "{}: channel mismatch", self.weight.name);
        let g = self.geom;
        let (oh, ow) = (g.conv_out(h), g.conv_out(w));
        let x = x.as_standard_layout().into_owned();
        let wv = self.weight.value.as_slice().expect("contiguous").to_vec();
        let kk = g.kernel * g.kernel;
        let mut out = Array4::<T>::zeros((n, c, oh, ow));
        for b in 0..n {
            for ch in 0..c {
                let src = x.index_axis(Axis(0), b);
                let src = src.index_axis(Axis(0), ch);
                let src = src.as_slice().expect("contiguous");
                let mut dst = out.index_axis_mut(Axis(0), b);
                let mut dst = dst.index_axis_mut(Axis(0), ch);
                let dst = dst.as_slice_mut().expect("contiguous");
                dst.fill(self.bias.value[[ch]]);
                let kern = &wv[ch * kk..(ch + 1) * kk];
                self.for_each_tap(h, w, |o, i, k| dst[o] += kern[k] * src[i]);
            }
        }
        self.cache = mode.is_train().then_some(x);
        out
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let x = self.cache.take().expect("DepthwiseConv2d::backward without a train-mode forward");
        let (n, c, h, w) = x.dim();
        let dy = dy.as_standard_layout();
        let kk = self.geom.kernel * self.geom.kernel;
        let wv = self.weight.value.as_slice().expect("contiguous").to_vec();
        let mut dwv = vec![T::zero(); c * kk];
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        for b in 0..n {
            for ch in 0..c {
                let src = x.index_axis(Axis(0), b);
                let src = src.index_axis(Axis(0), ch);
                let src = src.as_slice().expect("contiguous");
                let g = dy.index_axis(Axis(0), b);
                let g = g.index_axis(Axis(0), ch);
                let g = g.as_slice().expect("contiguous");
                self.bias.grad[[ch]] += g.iter().copied().sum::<T>();
                let mut d = dx.index_axis_mut(Axis(0), b);
                let mut d = d.index_axis_mut(Axis(0), ch);
                let d = d.as_slice_mut().expect("contiguous");
                let kern = &wv[ch * kk..(ch + 1) * kk];
                let dk = &mut dwv[ch * kk..(ch + 1) * kk];
                self.for_each_tap(h, w, |o, i, k| {
                    dk[k] += g[o] * src[i];
                    d[i] += g[o] * kern[k];
                });
            }
        }
        for (gw, dw) in self.weight.grad.iter_mut().zip(dwv) {
            *gw += dw;
        }
        dx
    }

    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}
