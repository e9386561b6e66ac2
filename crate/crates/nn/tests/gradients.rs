//! Finite-difference checks of every layer's backward pass (double precision).

use dvss_nn::layers::{resize_bilinear, resize_bilinear_backward, Upsample};
use dvss_nn::{
    BatchNorm2d, Conv2d, ConvTranspose2d, DepthwiseConv2d, Layer, LeakyRelu, Mode, Param, Relu,
    Sequential,
};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn randomize(layer: &mut dyn Layer<f64>, rng: &mut ChaCha8Rng) {
    let mut ps: Vec<&mut Param<f64>> = Vec::new();
    layer.collect_params(&mut ps);
    for p in ps {
        if p.trainable {
            p.value.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
}

fn objective(layer: &mut dyn Layer<f64>, x: &Array4<f64>, r: &Array4<f64>) -> f64 {
    // Train mode: BatchNorm must use batch statistics to match its backward.
    let y = layer.forward(x, Mode::Train);
    (&y * r).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-3)
}

fn check(layer: &mut dyn Layer<f64>, x: Array4<f64>, rng: &mut ChaCha8Rng) {
    let y = layer.forward(&x, Mode::Train);
    let r = random(y.dim(), rng);
    let dx = layer.backward(&r);

    let mut x_probe = x.clone();
    for idx in (0..x.len()).step_by(7) {
        let orig = x_probe.as_slice().unwrap()[idx];
        x_probe.as_slice_mut().unwrap()[idx] = orig + STEP;
        let up = objective(layer, &x_probe, &r);
        x_probe.as_slice_mut().unwrap()[idx] = orig - STEP;
        let down = objective(layer, &x_probe, &r);
        x_probe.as_slice_mut().unwrap()[idx] = orig;
        let fd = (up - down) / (2.0 * STEP);
        let an = dx.as_slice().unwrap()[idx];
        assert!(rel_err(fd, an) < TOL, "input grad {idx}: fd {fd} vs analytic {an}");
    }

    let mut ps: Vec<&mut Param<f64>> = Vec::new();
    layer.collect_params(&mut ps);
    let analytic: Vec<Vec<f64>> = ps.iter().map(|p| p.grad.iter().copied().collect()).collect();
    let trainable: Vec<bool> = ps.iter().map(|p| p.trainable).collect();
    drop(ps);
    for (pi, grads) in analytic.iter().enumerate() {
        if !trainable[pi] {
            continue;
        }
        for idx in (0..grads.len()).step_by(3) {
            let perturb = |layer: &mut dyn Layer<f64>, delta: f64| {
                let mut ps: Vec<&mut Param<f64>> = Vec::new();
                layer.collect_params(&mut ps);
                let v = ps[pi].value.as_slice_mut().unwrap();
                v[idx] += delta;
            };
            perturb(layer, STEP);
            let up = objective(layer, &x, &r);
            perturb(layer, -2.0 * STEP);
            let down = objective(layer, &x, &r);
            perturb(layer, STEP);
            let fd = (up - down) / (2.0 * STEP);
            assert!(rel_err(fd, grads[idx]) < TOL, "param {pi}[{idx}]: fd {fd} vs analytic {}", grads[idx]);
        }
    }
}

#[test]
fn conv3x3_stride2() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l = Conv2d::new("c", 3, 4, 3, 2, 1);
    randomize(&mut l, &mut rng);
    check(&mut l, random((2, 3, 7, 6), &mut rng), &mut rng);
}

#[test]
fn conv_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut l = Conv2d::new("c", 5, 3, 1, 1, 0);
    randomize(&mut l, &mut rng);
    check(&mut l, random((2, 5, 4, 4), &mut rng), &mut rng);
}

#[test]
fn pointwise_input_gradient_shortcut_matches_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut l = Conv2d::new("c", 5, 3, 1, 1, 0);
    randomize(&mut l, &mut rng);
    let x = random((2, 5, 4, 4), &mut rng);
    let y = l.forward(&x, Mode::Train);
    let r = random(y.dim(), &mut rng);
    let a = l.backward(&r);
    let b = l.backward_input_pointwise(&r);
    assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn deconv4_stride2() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut l = ConvTranspose2d::new("d", 3, 2, 4, 2, 1);
    randomize(&mut l, &mut rng);
    check(&mut l, random((2, 3, 3, 4), &mut rng), &mut rng);
}

#[test]
fn depthwise_stride2() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut l = DepthwiseConv2d::new("dw", 3, 3, 2, 1);
    randomize(&mut l, &mut rng);
    check(&mut l, random((2, 3, 6, 5), &mut rng), &mut rng);
}

#[test]
fn batchnorm_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut l = BatchNorm2d::new("bn", 3);
    randomize(&mut l, &mut rng);
    check(&mut l, random((3, 3, 3, 3), &mut rng), &mut rng);
}

#[test]
fn activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    check(&mut Relu::new(), random((2, 2, 3, 3), &mut rng), &mut rng);
    check(&mut LeakyRelu::new(0.1), random((2, 2, 3, 3), &mut rng), &mut rng);
}

#[test]
fn upsample_and_resize() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    check(&mut Upsample::new(4), random((1, 2, 3, 2), &mut rng), &mut rng);
    // adjoint identity for a downsampling resize
    let x = random((1, 2, 8, 8), &mut rng);
    let g = random((1, 2, 4, 4), &mut rng);
    let lhs = (&resize_bilinear(x.view(), 4, 4) * &g).sum();
    let rhs = (&x * &resize_bilinear_backward(g.view(), 8, 8)).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn sequential_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Sequential::new()
        .with(Conv2d::new("a", 2, 3, 3, 1, 1))
        .with(BatchNorm2d::new("b", 3))
        .with(LeakyRelu::new(0.1))
        .with(ConvTranspose2d::new("c", 3, 2, 4, 2, 1));
    randomize(&mut net, &mut rng);
    check(&mut net, random((2, 2, 4, 4), &mut rng), &mut rng);
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut l = Conv2d::new("c", 2, 3, 3, 2, 1);
    randomize(&mut l, &mut rng);
    let x = random((1, 2, 5, 5), &mut rng);
    let y = l.forward(&x, Mode::Eval);
    let w = l.weight.value.clone();
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = l.bias.value[[o]];
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += w[[o, c, ky, kx]] * x[[0, c, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                assert!((acc - y[[0, o, oy, ox]]).abs() < 1e-12);
            }
        }
    }
}
