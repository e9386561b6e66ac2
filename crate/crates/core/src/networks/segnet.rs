//! Image segmentation network: a small encoder-decoder at output stride 4
//! with a low-level skip, followed by the shared 1x1 segmentation head.

use ndarray::{s, Array4};

use dvss_nn::layers::{resize_bilinear, resize_bilinear_backward};
use dvss_nn::tensor::concat_channels;
use dvss_nn::{BatchNorm2d, Conv2d, Layer, Mode, Param, ParamSet, Relu, Sequential};

use super::{check_input_size, Network, NetworkConfig, NetworkSpec, SpecBuilder, FEATURE_STRIDE};
use crate::error::{ensure_shape, Result};

/// Stride of the deepest encoder stage relative to the feature grid.
const CONTEXT_FACTOR: usize = 8;
pub const SEGNET_MULTIPLE: usize = 32;

fn conv_bn_relu(seq: &mut Sequential<f32>, name: &str, ci: usize, co: usize, stride: usize) {
    seq.push(Conv2d::new(&format!("{name}.conv"), ci, co, 3, stride, 1));
    seq.push(BatchNorm2d::new(&format!("{name}.bn"), co));
    seq.push(Relu::new());
}

/// 1x1 convolution from features to class scores, shared by every feature
/// source.
pub struct SegHead {
    pub conv: Conv2d<f32>,
}

impl SegHead {
    pub fn new(feature_channels: usize, num_classes: usize) -> Self {
        Self { conv: Conv2d::new("head", feature_channels, num_classes, 1, 1, 0) }
    }

    pub fn num_classes(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&mut self, feature: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let c = feature.dim().1;
        ensure_shape!(c == self.conv.in_channels(), "head expects {} channels, got {c}", self.conv.in_channels());
        Ok(self.conv.forward(feature, mode))
    }

    /// Parameter gradients and input gradient of the last training forward.
    pub fn backward(&mut self, d_logits: &Array4<f32>) -> Array4<f32> {
        self.conv.backward(d_logits)
    }

    /// Input gradient only; leaves the head's parameters untouched.
    pub fn input_grad(&self, d_logits: &Array4<f32>) -> Array4<f32> {
        self.conv.backward_input_pointwise(d_logits)
    }
}

impl ParamSet<f32> for SegHead {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<f32>>) {
        self.conv.collect_params(out);
    }
}

pub struct SegNet {
    cfg: NetworkConfig,
    low: Sequential<f32>,
    context: Sequential<f32>,
    decoder: Sequential<f32>,
    pub head: SegHead,
    cache: Option<(usize, usize)>,
}

impl SegNet {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let b = cfg.segnet_base;
        let mut low = Sequential::new();
        conv_bn_relu(&mut low, "seg.e1", 3, b, 2);
        conv_bn_relu(&mut low, "seg.e2", b, b, 2);
        let mut context = Sequential::new();
        conv_bn_relu(&mut context, "seg.e3", b, 2 * b, 2);
        conv_bn_relu(&mut context, "seg.e4", 2 * b, 4 * b, 2);
        conv_bn_relu(&mut context, "seg.e5", 4 * b, 4 * b, 2);
        conv_bn_relu(&mut context, "seg.e6", 4 * b, 4 * b, 1);
        let mut decoder = Sequential::new();
        conv_bn_relu(&mut decoder, "seg.d1", 5 * b, cfg.segnet_decoder, 1);
        conv_bn_relu(&mut decoder, "seg.d2", cfg.segnet_decoder, cfg.feature_channels, 1);
        Self {
            cfg: cfg.clone(),
            low,
            context,
            decoder,
            head: SegHead::new(cfg.feature_channels, cfg.num_classes),
            cache: None,
        }
    }

    /// Feature map `f^S` at stride 4.
    pub fn features(&mut self, frames: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (_, c, h, w) = frames.dim();
        ensure_shape!(c == 3, "segnet expects 3 input channels, got {c}");
        check_input_size(h, w, SEGNET_MULTIPLE)?;
        let low = self.low.forward(frames, mode);
        let ctx = self.context.forward(&low, mode);
        let (fh, fw) = (h / FEATURE_STRIDE, w / FEATURE_STRIDE);
        let up = resize_bilinear(ctx.view(), fh, fw);
        let cat = concat_channels(up.view(), low.view());
        self.cache = mode.is_train().then_some((fh / CONTEXT_FACTOR, fw / CONTEXT_FACTOR));
        Ok(self.decoder.forward(&cat, mode))
    }

    /// Returns `(f^S, logits)`, both at stride 4.
    pub fn forward(&mut self, frames: &Array4<f32>, mode: Mode) -> Result<(Array4<f32>, Array4<f32>)> {
        let f = self.features(frames, mode)?;
        let logits = self.head.forward(&f, mode)?;
        Ok((f, logits))
    }

    /// Backward from logit gradients through head and body.
    pub fn backward(&mut self, d_logits: &Array4<f32>) {
        let d_feat = self.head.backward(d_logits);
        self.backward_features(&d_feat);
    }

    pub fn backward_features(&mut self, d_feat: &Array4<f32>) {
        let (ch, cw) = self.cache.take().expect("segnet backward without a training forward");
        let d_cat = self.decoder.backward(d_feat);
        let up_c = 4 * self.cfg.segnet_base;
        let d_up = d_cat.slice(s![.., ..up_c, .., ..]).to_owned();
        let d_low_skip = d_cat.slice(s![.., up_c.., .., ..]).to_owned();
        let d_ctx = resize_bilinear_backward(d_up.view(), ch, cw);
        let d_low = self.context.backward(&d_ctx) + d_low_skip;
        self.low.backward(&d_low);
    }
}

impl ParamSet<f32> for SegNet {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<f32>>) {
        Layer::collect_params(&mut self.low, out);
        Layer::collect_params(&mut self.context, out);
        Layer::collect_params(&mut self.decoder, out);
        self.head.collect_params(out);
    }
}

impl Network for SegNet {
    const NAME: &'static str = "segnet";

    fn spec(&self, h: usize, w: usize) -> NetworkSpec {
        let b = self.cfg.segnet_base;
        let mut s = SpecBuilder::new(Self::NAME, 3, h, w);
        let block = |s: &mut SpecBuilder, name: &str, co: usize, stride: usize| {
            s.conv(&format!("{name}.conv"), co, 3, stride, 1).bn(&format!("{name}.bn")).act(&format!("{name}.relu"));
        };
        block(&mut s, "e1", b, 2);
        block(&mut s, "e2", b, 2);
        let low = s.shape();
        block(&mut s, "e3", 2 * b, 2);
        block(&mut s, "e4", 4 * b, 2);
        block(&mut s, "e5", 4 * b, 2);
        block(&mut s, "e6", 4 * b, 1);
        s.resize("context_upsample", low[1], low[2]);
        s.set_shape([5 * b, low[1], low[2]]);
        block(&mut s, "d1", self.cfg.segnet_decoder, 1);
        block(&mut s, "d2", self.cfg.feature_channels, 1);
        s.conv("head", self.cfg.num_classes, 1, 1, 0);
        s.build(FEATURE_STRIDE)
    }

    fn init<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        dvss_nn::init::he_normal(&mut self.params_mut(), 1.0, rng);
        dvss_nn::init::he_normal(&mut self.head.params_mut(), 0.5, rng);
    }
}
