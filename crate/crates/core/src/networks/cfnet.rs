//! Correction network: a ten-layer convolutional encoder (BatchNorm and
//! LReLU after every layer, six stride-2 layers for a cumulative stride of
//! 64) and a four-layer deconvolutional decoder back to stride 4. The first
//! three decoder outputs are concatenated with the matching encoder
//! activations; the last decoder layer is linear.

use ndarray::{s, Array4};

use dvss_nn::tensor::concat_channels;
use dvss_nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Layer, LeakyRelu, Mode, Param, ParamSet, Sequential};

use super::{check_input_size, Network, NetworkConfig, NetworkSpec, SpecBuilder, FEATURE_STRIDE, INPUT_MULTIPLE};
use crate::error::{ensure_shape, Result};

/// Encoder layers (1-based) with stride 2.
const STRIDED: [usize; 6] = [1, 2, 4, 6, 8, 10];
/// Encoder layers whose output feeds decoder skips, deepest first.
const SKIPS: [usize; 3] = [9, 7, 5];

fn encoder_width(layer: usize, c: usize) -> usize {
    if layer == 1 {
        c
    } else {
        2 * c
    }
}

pub struct CfNet {
    cfg: NetworkConfig,
    /// Encoder split at the skip taps: layers 1-5, 6-7, 8-9, 10.
    enc: Vec<Sequential<f32>>,
    dec: Vec<Sequential<f32>>,
    trained_forward: bool,
}

impl CfNet {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let c = cfg.cfnet_base;
        let slope = cfg.leaky_slope;
        let bounds = [1..=5, 6..=7, 8..=9, 10..=10];
        let enc = bounds
            .iter()
            .map(|range| {
                let mut seq = Sequential::new();
                for l in range.clone() {
                    let ci = if l == 1 { 3 } else { encoder_width(l - 1, c) };
                    let co = encoder_width(l, c);
                    let stride = if STRIDED.contains(&l) { 2 } else { 1 };
                    seq.push(Conv2d::new(&format!("cf.l{l}.conv"), ci, co, 3, stride, 1));
                    seq.push(BatchNorm2d::new(&format!("cf.l{l}.bn"), co));
                    seq.push(LeakyRelu::new(slope));
                }
                seq
            })
            .collect();
        let mut dec = Vec::new();
        for i in 0..4 {
            let ci = if i == 0 { 2 * c } else { c + 2 * c };
            let co = if i == 3 { cfg.feature_channels } else { c };
            let mut seq = Sequential::new().with(ConvTranspose2d::new(&format!("cf.u{}", i + 1), ci, co, 4, 2, 1));
            if i < 3 {
                seq.push(LeakyRelu::new(slope));
            }
            dec.push(seq);
        }
        Self { cfg: cfg.clone(), enc, dec, trained_forward: false }
    }

    /// Correction cue `f^CC` at stride 4.
    pub fn forward(&mut self, frames: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (_, c, h, w) = frames.dim();
        ensure_shape!(c == 3, "cfnet expects 3 input channels, got {c}");
        check_input_size(h, w, INPUT_MULTIPLE)?;
        let mut taps = Vec::with_capacity(3);
        let mut x = frames.clone();
        for (i, seq) in self.enc.iter_mut().enumerate() {
            x = seq.forward(&x, mode);
            if i < 3 {
                taps.push(x.clone());
            }
        }
        for (i, seq) in self.dec.iter_mut().enumerate() {
            x = seq.forward(&x, mode);
            if i < 3 {
                x = concat_channels(x.view(), taps[2 - i].view());
            }
        }
        self.trained_forward = mode.is_train();
        Ok(x)
    }

    pub fn backward(&mut self, d_out: &Array4<f32>) {
        assert!(std::mem::take(&mut self.trained_forward), "cfnet backward without a training forward");
        let c = self.cfg.cfnet_base;
        let mut d_taps: Vec<Option<Array4<f32>>> = vec![None; 3];
        let mut d = d_out.clone();
        for i in (0..4).rev() {
            if i < 3 {
                d_taps[2 - i] = Some(d.slice(s![.., c.., .., ..]).to_owned());
                d = d.slice(s![.., ..c, .., ..]).to_owned();
            }
            d = self.dec[i].backward(&d);
        }
        for i in (0..4).rev() {
            if i < 3 {
                d += d_taps[i].as_ref().expect("tap gradient");
            }
            d = self.enc[i].backward(&d);
        }
    }
}

impl ParamSet<f32> for CfNet {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<f32>>) {
        for seq in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            Layer::collect_params(seq, out);
        }
    }
}

impl Network for CfNet {
    const NAME: &'static str = "cfnet";

    fn spec(&self, h: usize, w: usize) -> NetworkSpec {
        let c = self.cfg.cfnet_base;
        let mut s = SpecBuilder::new(Self::NAME, 3, h, w);
        let mut taps = std::collections::BTreeMap::new();
        for l in 1..=10 {
            let stride = if STRIDED.contains(&l) { 2 } else { 1 };
            s.conv(&format!("l{l}.conv"), encoder_width(l, c), 3, stride, 1)
                .bn(&format!("l{l}.bn"))
                .act(&format!("l{l}.lrelu"));
            taps.insert(l, s.shape());
        }
        for (i, skip) in SKIPS.iter().enumerate() {
            s.deconv(&format!("u{}", i + 1), c, 4, 2, 1).act(&format!("u{}.lrelu", i + 1));
            let [_, h, w] = s.shape();
            s.set_shape([c + taps[skip][0], h, w]);
        }
        s.deconv("u4", self.cfg.feature_channels, 4, 2, 1);
        s.build(FEATURE_STRIDE)
    }
}
