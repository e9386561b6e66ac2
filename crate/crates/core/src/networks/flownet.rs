//! Flow network: the two frames are stacked channel-wise, encoded to stride
//! 16, decoded to stride 4 with one skip connection, and the 2-channel
//! prediction is upsampled bilinearly to full resolution.
//!
//! The output lives on the grid of the second frame and points into the
//! first, so warping the first frame with it aligns it to the second.

use ndarray::{s, Array4, Axis};

use dvss_nn::layers::{resize_bilinear, resize_bilinear_backward};
use dvss_nn::tensor::concat_channels;
use dvss_nn::{Conv2d, ConvTranspose2d, Layer, LeakyRelu, Mode, Param, ParamSet, Sequential};

use super::{check_input_size, Network, NetworkConfig, NetworkSpec, SpecBuilder};
use crate::error::{ensure_shape, Result};
use crate::propagation::{FlowEstimator, FlowField, FrameRef};

const PRED_STRIDE: usize = 4;
pub const FLOWNET_MULTIPLE: usize = 16;

pub struct FlowNet {
    cfg: NetworkConfig,
    enc_fine: Sequential<f32>,
    enc_coarse: Sequential<f32>,
    pred: Conv2d<f32>,
    cache: Option<(usize, usize)>,
}

impl FlowNet {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let f = cfg.flownet_base;
        let slope = cfg.leaky_slope;
        let enc_fine = Sequential::new()
            .with(Conv2d::new("flow.c1", 6, f, 3, 2, 1))
            .with(LeakyRelu::new(slope))
            .with(Conv2d::new("flow.c2", f, 2 * f, 3, 2, 1))
            .with(LeakyRelu::new(slope));
        let enc_coarse = Sequential::new()
            .with(Conv2d::new("flow.c3", 2 * f, 4 * f, 3, 2, 1))
            .with(LeakyRelu::new(slope))
            .with(Conv2d::new("flow.c4", 4 * f, 4 * f, 3, 2, 1))
            .with(LeakyRelu::new(slope))
            .with(ConvTranspose2d::new("flow.dc3", 4 * f, 2 * f, 4, 2, 1))
            .with(LeakyRelu::new(slope))
            .with(ConvTranspose2d::new("flow.dc2", 2 * f, f, 4, 2, 1))
            .with(LeakyRelu::new(slope));
        Self {
            cfg: cfg.clone(),
            enc_fine,
            enc_coarse,
            pred: Conv2d::new("flow.pred", 3 * f, 2, 3, 1, 1),
            cache: None,
        }
    }

    /// Batched flow prediction, `(N, 2, H, W)`, from `frame_a` and `frame_b`
    /// batches of equal shape.
    pub fn forward(&mut self, frame_a: &Array4<f32>, frame_b: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        ensure_shape!(frame_a.dim() == frame_b.dim(), "flownet inputs {:?} vs {:?}", frame_a.dim(), frame_b.dim());
        let (_, c, h, w) = frame_a.dim();
        ensure_shape!(c == 3, "flownet expects 3-channel frames, got {c}");
        check_input_size(h, w, FLOWNET_MULTIPLE)?;
        let x = concat_channels(frame_a.view(), frame_b.view());
        let fine = self.enc_fine.forward(&x, mode);
        let up = self.enc_coarse.forward(&fine, mode);
        let cat = concat_channels(up.view(), fine.view());
        let pred = self.pred.forward(&cat, mode);
        self.cache = mode.is_train().then_some((h, w));
        Ok(resize_bilinear(pred.view(), h, w))
    }

    /// Single-pair convenience wrapper in eval mode.
    pub fn estimate(&mut self, frame_a: &ndarray::Array3<f32>, frame_b: &ndarray::Array3<f32>) -> Result<FlowField<f32>> {
        let a = frame_a.view().insert_axis(Axis(0)).to_owned();
        let b = frame_b.view().insert_axis(Axis(0)).to_owned();
        let flow = self.forward(&a, &b, Mode::Eval)?;
        FlowField::new(flow.index_axis_move(Axis(0), 0))
    }

    /// Backpropagates a full-resolution flow gradient into the parameters.
    pub fn backward(&mut self, d_flow: &Array4<f32>) {
        let (h, w) = self.cache.take().expect("flownet backward without a training forward");
        let d_pred = resize_bilinear_backward(d_flow.view(), h / PRED_STRIDE, w / PRED_STRIDE);
        let d_cat = self.pred.backward(&d_pred);
        let f = self.cfg.flownet_base;
        let d_up = d_cat.slice(s![.., ..f, .., ..]).to_owned();
        let d_fine_skip = d_cat.slice(s![.., f.., .., ..]).to_owned();
        let d_fine = self.enc_coarse.backward(&d_up) + d_fine_skip;
        self.enc_fine.backward(&d_fine);
    }
}

impl FlowEstimator for FlowNet {
    fn estimate(&mut self, prev: FrameRef<'_>, next: FrameRef<'_>) -> Result<FlowField<f32>> {
        FlowNet::estimate(self, &prev.image.to_owned(), &next.image.to_owned())
    }
}

impl ParamSet<f32> for FlowNet {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<f32>>) {
        Layer::collect_params(&mut self.enc_fine, out);
        Layer::collect_params(&mut self.enc_coarse, out);
        Layer::collect_params(&mut self.pred, out);
    }
}

impl Network for FlowNet {
    const NAME: &'static str = "flownet";

    fn spec(&self, h: usize, w: usize) -> NetworkSpec {
        let f = self.cfg.flownet_base;
        let mut s = SpecBuilder::new(Self::NAME, 6, h, w);
        s.conv("c1", f, 3, 2, 1).act("c1.lrelu");
        s.conv("c2", 2 * f, 3, 2, 1).act("c2.lrelu");
        let fine = s.shape();
        s.conv("c3", 4 * f, 3, 2, 1).act("c3.lrelu");
        s.conv("c4", 4 * f, 3, 2, 1).act("c4.lrelu");
        s.deconv("dc3", 2 * f, 4, 2, 1).act("dc3.lrelu");
        s.deconv("dc2", f, 4, 2, 1).act("dc2.lrelu");
        s.set_shape([f + fine[0], fine[1], fine[2]]);
        s.conv("pred", 2, 3, 1, 1);
        s.resize("flow_upsample", h, w);
        s.build(1)
    }

    fn init<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        dvss_nn::init::he_normal(&mut self.params_mut(), 1.0, rng);
        dvss_nn::init::he_normal(&mut [&mut self.pred.weight], 0.1, rng);
    }
}
