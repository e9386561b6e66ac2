//! Layout helpers shared by the convolution layers.

use ndarray::{concatenate, s, Array4, ArrayView4, Axis};

use crate::Real;

/// Spatial geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output size of a convolution over an input of size `n`.
    pub fn conv_out(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output size of a transposed convolution over an input of size `n`.
    pub fn deconv_out(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

/// Unfolds one `(c, h, w)` image into a `(c*k*k, oh*ow)` column matrix.
///
/// `(h, w)` is the size of the padded-input side, `(oh, ow)` the size of the
/// sliding-window side.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let n_out = oh * ow;
    debug_assert_eq!(cols.len(), c * k * k * n_out);
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let k = g.kernel;
    let n_out = oh * ow;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Concatenates two NCHW tensors along the channel axis.
pub fn concat_channels<T: Real>(a: ArrayView4<T>, b: ArrayView4<T>) -> Array4<T> {
    concatenate(Axis(1), &[a, b]).expect("matching batch and spatial dims")
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Real>(x: &Array4<T>, first: usize) -> (Array4<T>, Array4<T>) {
    (
        x.slice(s![.., ..first, .., ..]).to_owned(),
        x.slice(s![.., first.., .., ..]).to_owned(),
    )
}

/// Concatenates along the batch axis.
pub fn concat_batch<T: Real>(parts: &[ArrayView4<T>]) -> Array4<T> {
    concatenate(Axis(0), parts).expect("matching channel and spatial dims")
}
