//! Siamese feature extractor of the distortion network: four separable
//! blocks (depthwise 3x3 then pointwise 1x1) with strides 2, 2, 1, 1.
//! BatchNorm and ReLU sit between blocks; the last block is linear.

use ndarray::Array4;

use dvss_nn::{BatchNorm2d, Conv2d, DepthwiseConv2d, Layer, Mode, Param, ParamSet, Relu, Sequential};

use super::{check_input_size, Network, NetworkConfig, NetworkSpec, SpecBuilder, FEATURE_STRIDE};
use crate::error::{ensure_shape, Result};

const STRIDES: [usize; 4] = [2, 2, 1, 1];

pub struct DmNet {
    cfg: NetworkConfig,
    body: Sequential<f32>,
}

impl DmNet {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let d = cfg.dmnet_channels;
        let mut body = Sequential::new();
        let mut c = 3;
        for (i, &stride) in STRIDES.iter().enumerate() {
            let name = format!("dm.b{}", i + 1);
            body.push(DepthwiseConv2d::new(&format!("{name}.dw"), c, 3, stride, 1));
            body.push(Conv2d::new(&format!("{name}.pw"), c, d, 1, 1, 0));
            if i + 1 < STRIDES.len() {
                body.push(BatchNorm2d::new(&format!("{name}.bn"), d));
                body.push(Relu::new());
            }
            c = d;
        }
        Self { cfg: cfg.clone(), body }
    }

    /// Features at stride 4 for a batch of frames.
    pub fn forward(&mut self, frames: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (_, c, h, w) = frames.dim();
        ensure_shape!(c == 3, "dmnet expects 3 input channels, got {c}");
        check_input_size(h, w, FEATURE_STRIDE)?;
        Ok(self.body.forward(frames, mode))
    }

    pub fn backward(&mut self, d_features: &Array4<f32>) {
        self.body.backward(d_features);
    }
}

impl ParamSet<f32> for DmNet {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<f32>>) {
        Layer::collect_params(&mut self.body, out);
    }
}

impl Network for DmNet {
    const NAME: &'static str = "dmnet";

    fn spec(&self, h: usize, w: usize) -> NetworkSpec {
        let d = self.cfg.dmnet_channels;
        let mut s = SpecBuilder::new(Self::NAME, 3, h, w);
        for (i, &stride) in STRIDES.iter().enumerate() {
            let name = format!("b{}", i + 1);
            s.separable(&name, d, 3, stride, 1);
            if i + 1 < STRIDES.len() {
                s.bn(&format!("{name}.bn")).act(&format!("{name}.relu"));
            }
        }
        s.build(FEATURE_STRIDE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> DmNet {
        let mut n = DmNet::new(&NetworkConfig::default());
        n.init(&mut ChaCha8Rng::seed_from_u64(2));
        n
    }

    #[test]
    fn shape_and_weight_sharing() {
        let mut n = net();
        let x = Array4::from_shape_fn((1, 3, 64, 64), |(_, c, y, x)| ((c + y * 3 + x) as f32 * 0.1).cos());
        let pair = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view()]).unwrap();
        let f = n.forward(&pair, Mode::Eval).unwrap();
        assert_eq!(f.dim(), (2, 16, 16, 16));
        assert_eq!(f.slice(s![0, .., .., ..]), f.slice(s![1, .., .., ..]));
    }

    #[test]
    fn spec_matches_parameters() {
        let mut n = net();
        let spec = n.spec(64, 64);
        spec.validate().unwrap();
        assert_eq!(spec.params() as usize, n.num_trainable());
    }

    /// Depthwise-then-pointwise evaluated directly from the definition.
    fn separable_direct(x: &Array3<f64>, dw: &Array4<f64>, dwb: &[f64], pw: &Array4<f64>, pwb: &[f64], stride: usize) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
        let mut mid = Array3::<f64>::zeros((c, oh, ow));
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = dwb[ch];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * stride + ky) as isize - 1;
                            let ix = (ox * stride + kx) as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += dw[[ch, 0, ky, kx]] * x[[ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                    mid[[ch, oy, ox]] = acc;
                }
            }
        }
        let co = pw.dim().0;
        Array3::from_shape_fn((co, oh, ow), |(o, y, xx)| pwb[o] + (0..c).map(|i| pw[[o, i, 0, 0]] * mid[[i, y, xx]]).sum::<f64>())
    }

    #[test]
    fn separable_block_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dw = DepthwiseConv2d::<f64>::new("dw", 3, 3, 2, 1);
        let mut pw = Conv2d::<f64>::new("pw", 3, 5, 1, 1, 0);
        dvss_nn::init::he_normal(&mut [&mut dw.weight, &mut pw.weight], 1.0, &mut rng);
        dw.bias.value.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
        pw.bias.value.iter_mut().enumerate().for_each(|(i, b)| *b = -0.05 * i as f64);
        let x = Array4::from_shape_fn((1, 3, 9, 7), |(_, c, y, x)| ((c * 17 + y * 7 + x) as f64 * 0.31).sin());
        let got = pw.forward(&dw.forward(&x, Mode::Eval), Mode::Eval);
        let dw_w = dw.weight.value.clone().into_dimensionality().unwrap();
        let pw_w = pw.weight.value.clone().into_dimensionality().unwrap();
        let want = separable_direct(
            &x.slice(s![0, .., .., ..]).to_owned(),
            &dw_w,
            dw.bias.value.as_slice().unwrap(),
            &pw_w,
            pw.bias.value.as_slice().unwrap(),
            2,
        );
        let diff = (&got.slice(s![0, .., .., ..]) - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff <= 1e-6, "max diff {diff}");
    }
}
