//! Layer descriptions and the operation counts used by the cost model.
//!
//! Counting rules (floating-point operations):
//!
//! | kind | count |
//! |---|---|
//! | convolution | `2 Ho Wo (Ci Kh Kw + 1) Co` |
//! | separable convolution | depthwise (`Ci = 1` per group) plus pointwise convolution |
//! | deconvolution | convolution rule on the output size |
//! | batch normalization | `2 Hi Wi Ci` |
//! | ReLU / LReLU | `Hi Wi Ci` |
//! | bilinear resampling | `11 Ho Wo Co` |
//! | bilinear warp | `11 Ho Wo Co` |
//! | cosine similarity | `6 Ho Wo Ci + 5 Ho Wo` |
//! | convex fusion | `3 Ho Wo Co + Ho Wo` |

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Convolution,
    SeparableConvolution,
    Deconvolution,
    BatchNormalization,
    Activation,
    BilinearUpsampling,
    Warp,
    Cosine,
    Fusion,
}

/// One counted operation with its input and output geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl LayerSpec {
    /// Checks the kernel/stride arithmetic for this kind.
    pub fn validate(&self) -> Result<()> {
        let [kh, kw] = self.kernel;
        let conv = |n: usize, k: usize| (n + 2 * self.pad).checked_sub(k).map(|v| v / self.stride + 1);
        let ok = match self.kind {
            LayerKind::Convolution | LayerKind::SeparableConvolution => {
                self.stride > 0 && conv(self.h_in, kh) == Some(self.h_out) && conv(self.w_in, kw) == Some(self.w_out)
            }
            LayerKind::Deconvolution => {
                let de = |n: usize, k: usize| ((n - 1) * self.stride + k).checked_sub(2 * self.pad);
                self.stride > 0 && de(self.h_in, kh) == Some(self.h_out) && de(self.w_in, kw) == Some(self.w_out)
            }
            LayerKind::BatchNormalization | LayerKind::Activation | LayerKind::Fusion => {
                (self.h_in, self.w_in, self.c_in) == (self.h_out, self.w_out, self.c_out)
            }
            LayerKind::BilinearUpsampling => self.c_in == self.c_out,
            LayerKind::Warp => (self.h_in, self.w_in, self.c_in) == (self.h_out, self.w_out, self.c_out),
            LayerKind::Cosine => (self.h_in, self.w_in) == (self.h_out, self.w_out) && self.c_out == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("layer {} ({:?}) has inconsistent geometry: {self:?}", self.name, self.kind)))
        }
    }

    /// Trainable parameter count implied by the description.
    pub fn params(&self) -> u64 {
        let [kh, kw] = self.kernel;
        let (ci, co, k) = (self.c_in as u64, self.c_out as u64, (kh * kw) as u64);
        match self.kind {
            LayerKind::Convolution => co * (ci * k + 1),
            LayerKind::SeparableConvolution => ci * (k + 1) + co * (ci + 1),
            LayerKind::Deconvolution => ci * co * k + co,
            LayerKind::BatchNormalization => 2 * ci,
            _ => 0,
        }
    }
}

/// FLOPs of one layer.
pub fn layer_flops(l: &LayerSpec) -> u64 {
    let [kh, kw] = l.kernel;
    let (ci, co, k) = (l.c_in as u64, l.c_out as u64, (kh * kw) as u64);
    let out_px = (l.h_out * l.w_out) as u64;
    let in_px = (l.h_in * l.w_in) as u64;
    let conv = |ci: u64, co: u64| 2 * out_px * (ci * k + 1) * co;
    match l.kind {
        LayerKind::Convolution | LayerKind::Deconvolution => conv(ci, co),
        LayerKind::SeparableConvolution => {
            let depthwise = conv(1, 1) * ci;
            let pointwise = 2 * out_px * (ci + 1) * co;
            depthwise + pointwise
        }
        LayerKind::BatchNormalization => 2 * in_px * ci,
        LayerKind::Activation => in_px * ci,
        LayerKind::BilinearUpsampling | LayerKind::Warp => 11 * out_px * co,
        LayerKind::Cosine => 6 * out_px * ci + 5 * out_px,
        LayerKind::Fusion => 3 * out_px * co + out_px,
    }
}

/// Ordered layer list of one network at a fixed input size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub output_stride: usize,
    pub output_channels: usize,
    pub input: [usize; 3],
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            l.validate()?;
        }
        let last = self.layers.last().ok_or_else(|| Error::Shape(format!("{} has no layers", self.name)))?;
        let [_, h, w] = self.input;
        let expect = (h / self.output_stride, w / self.output_stride, self.output_channels);
        if (last.h_out, last.w_out, last.c_out) != expect {
            return Err(Error::Shape(format!(
                "{} ends at {:?}, declared {:?}",
                self.name,
                (last.h_out, last.w_out, last.c_out),
                expect
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> u64 {
        self.layers.iter().map(LayerSpec::params).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub kind: LayerKind,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub network: String,
    pub input: [usize; 3],
    pub layers: Vec<LayerFlops>,
    pub total: u64,
}

pub fn describe_flops(net: &NetworkSpec) -> Result<FlopsReport> {
    net.validate()?;
    let layers: Vec<LayerFlops> = net
        .layers
        .iter()
        .map(|l| LayerFlops { name: l.name.clone(), kind: l.kind, flops: layer_flops(l) })
        .collect();
    let total = layers.iter().map(|l| l.flops).sum();
    Ok(FlopsReport { network: net.name.clone(), input: net.input, layers, total })
}

/// Incremental construction of a [`NetworkSpec`] that tracks the running
/// `(C, H, W)` shape.
#[derive(Debug, Clone)]
pub struct SpecBuilder {
    name: String,
    input: [usize; 3],
    shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

impl SpecBuilder {
    pub fn new(name: &str, c: usize, h: usize, w: usize) -> Self {
        Self { name: name.into(), input: [c, h, w], shape: [c, h, w], layers: Vec::new() }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Overrides the running shape, e.g. after a concatenation or to start a
    /// second branch.
    pub fn set_shape(&mut self, shape: [usize; 3]) -> &mut Self {
        self.shape = shape;
        self
    }

    fn push(&mut self, name: &str, kind: LayerKind, c_out: usize, kernel: usize, stride: usize, pad: usize, out_hw: [usize; 2]) -> &mut Self {
        let [c, h, w] = self.shape;
        self.layers.push(LayerSpec {
            name: name.into(),
            kind,
            c_in: c,
            c_out,
            kernel: [kernel, kernel],
            stride,
            pad,
            h_in: h,
            w_in: w,
            h_out: out_hw[0],
            w_out: out_hw[1],
        });
        self.shape = [c_out, out_hw[0], out_hw[1]];
        self
    }

    pub fn conv(&mut self, name: &str, c_out: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        let [_, h, w] = self.shape;
        let o = |n: usize| (n + 2 * pad - kernel) / stride + 1;
        self.push(name, LayerKind::Convolution, c_out, kernel, stride, pad, [o(h), o(w)])
    }

    pub fn separable(&mut self, name: &str, c_out: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        let [_, h, w] = self.shape;
        let o = |n: usize| (n + 2 * pad - kernel) / stride + 1;
        self.push(name, LayerKind::SeparableConvolution, c_out, kernel, stride, pad, [o(h), o(w)])
    }

    pub fn deconv(&mut self, name: &str, c_out: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        let [_, h, w] = self.shape;
        let o = |n: usize| (n - 1) * stride + kernel - 2 * pad;
        self.push(name, LayerKind::Deconvolution, c_out, kernel, stride, pad, [o(h), o(w)])
    }

    pub fn bn(&mut self, name: &str) -> &mut Self {
        let [c, h, w] = self.shape;
        self.push(name, LayerKind::BatchNormalization, c, 1, 1, 0, [h, w])
    }

    pub fn act(&mut self, name: &str) -> &mut Self {
        let [c, h, w] = self.shape;
        self.push(name, LayerKind::Activation, c, 1, 1, 0, [h, w])
    }

    pub fn resize(&mut self, name: &str, h_out: usize, w_out: usize) -> &mut Self {
        let c = self.shape[0];
        self.push(name, LayerKind::BilinearUpsampling, c, 1, 1, 0, [h_out, w_out])
    }

    pub fn op(&mut self, name: &str, kind: LayerKind, c_out: usize) -> &mut Self {
        let [_, h, w] = self.shape;
        self.push(name, kind, c_out, 1, 1, 0, [h, w])
    }

    pub fn build(self, output_stride: usize) -> NetworkSpec {
        let output_channels = self.shape[0];
        NetworkSpec { name: self.name, layers: self.layers, output_stride, output_channels, input: self.input }
    }

    pub fn into_layers(self) -> Vec<LayerSpec> {
        self.layers
    }
}
