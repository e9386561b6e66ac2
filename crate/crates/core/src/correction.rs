//! Feature correction: distortion-guided fusion of propagated features with
//! correction cues, and the distortion-weighted cross-entropy that trains
//! the correction network.

use ndarray::{Array3, Array4, ArrayView3, ArrayView4, Axis, Zip};

use dvss_nn::layers::{resize_bilinear, resize_bilinear_backward};
use dvss_nn::Real;

use crate::data::LabelMap;
use crate::error::{ensure_shape, Result};
use crate::Error;

/// `f_C = f_P * (1 - M) + f_CC * M` with `M` broadcast over channels.
///
/// Feature maps are `(N, C, h, w)`, the distortion map `(N, h, w)`.
pub fn fuse_features<T: Real>(f_p: ArrayView4<T>, f_cc: ArrayView4<T>, m: ArrayView3<T>) -> Result<Array4<T>> {
    check_fusion(&f_p, &f_cc, &m)?;
    let mut out = f_p.to_owned();
    for (((mut o, p), cc), mb) in out.outer_iter_mut().zip(f_p.outer_iter()).zip(f_cc.outer_iter()).zip(m.outer_iter()) {
        for ((mut oc, pc), ccc) in o.outer_iter_mut().zip(p.outer_iter()).zip(cc.outer_iter()) {
            Zip::from(&mut oc).and(&pc).and(&ccc).and(&mb).for_each(|o, &p, &cc, &w| {
                *o = if w == T::zero() {
                    p
                } else if w == T::one() {
                    cc
                } else {
                    p * (T::one() - w) + cc * w
                };
            });
        }
    }
    Ok(out)
}

/// Gradients of the fusion with respect to `f_P` and `f_CC`; `M` is a
/// constant.
pub fn fuse_features_backward<T: Real>(d_out: ArrayView4<T>, m: ArrayView3<T>) -> Result<(Array4<T>, Array4<T>)> {
    let (n, _, h, w) = d_out.dim();
    ensure_shape!(m.dim() == (n, h, w), "fusion weights {:?} vs gradient {:?}", m.dim(), d_out.dim());
    let mb = m.insert_axis(Axis(1));
    let d_cc = &d_out * &mb;
    let d_p = &d_out - &d_cc;
    Ok((d_p, d_cc))
}

fn check_fusion<T: Real>(f_p: &ArrayView4<T>, f_cc: &ArrayView4<T>, m: &ArrayView3<T>) -> Result<()> {
    ensure_shape!(f_p.dim() == f_cc.dim(), "f_P {:?} vs f_CC {:?}", f_p.dim(), f_cc.dim());
    let (n, _, h, w) = f_p.dim();
    ensure_shape!(m.dim() == (n, h, w), "distortion map {:?} vs features {:?}", m.dim(), f_p.dim());
    if m.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::InvalidArgument("distortion map outside [0, 1]".into()));
    }
    Ok(())
}

/// Value and logit gradient of a (weighted) cross-entropy.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: f64,
    /// Gradient with respect to the logits at their own resolution.
    pub d_logits: Array4<T>,
}

/// Cross-entropy of `(N, K, h, w)` logits against full-resolution labels,
/// optionally weighted per position by `(N, h, w)` weights.
///
/// Logits and weights are bilinearly upsampled to the label resolution. The
/// sum runs over all non-ignored label positions and is divided by their
/// count.
pub fn weighted_cross_entropy<T: Real>(
    logits: ArrayView4<T>,
    labels: &[&LabelMap],
    weights: Option<ArrayView3<T>>,
) -> Result<LossGrad<T>> {
    let (n, k, h, w) = logits.dim();
    ensure_shape!(labels.len() == n, "{} label maps for a batch of {n}", labels.len());
    let (lh, lw) = labels.first().map(|l| l.values.dim()).unwrap_or((h, w));
    for l in labels {
        ensure_shape!(l.values.dim() == (lh, lw), "label maps differ in size");
        ensure_shape!(l.num_classes as usize == k, "{} logit channels for {} classes", k, l.num_classes);
    }
    let up = resize_bilinear(logits, lh, lw);
    let up_w = match weights {
        Some(m) => {
            ensure_shape!(m.dim() == (n, h, w), "weights {:?} vs logits {:?}", m.dim(), logits.dim());
            Some(resize_bilinear(m.insert_axis(Axis(1)), lh, lw).index_axis_move(Axis(1), 0))
        }
        None => None,
    };
    let count = labels.iter().map(|l| l.values.iter().filter(|&&v| v != l.ignore_index).count()).sum::<usize>();
    if count == 0 {
        return Err(Error::InvalidArgument("every label position is ignored".into()));
    }
    let inv = 1.0 / count as f64;
    let mut d_up = Array4::<T>::zeros((n, k, lh, lw));
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for b in 0..n {
        let lab = labels[b];
        for y in 0..lh {
            for x in 0..lw {
                let g = lab.values[[y, x]];
                if g == lab.ignore_index {
                    continue;
                }
                let wgt = up_w.as_ref().map_or(1.0, |m| m[[b, y, x]].to_f64().unwrap_or(f64::NAN));
                let mut max = f64::NEG_INFINITY;
                for c in 0..k {
                    probs[c] = up[[b, c, y, x]].to_f64().unwrap_or(f64::NAN);
                    max = max.max(probs[c]);
                }
                let mut z = 0.0;
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    z += *p;
                }
                let log_p = up[[b, g as usize, y, x]].to_f64().unwrap_or(f64::NAN) - max - z.ln();
                if wgt != 0.0 {
                    total -= wgt * log_p;
                }
                if wgt != 0.0 {
                    for c in 0..k {
                        let onehot = if c == g as usize { 1.0 } else { 0.0 };
                        d_up[[b, c, y, x]] = T::c(wgt * (probs[c] / z - onehot) * inv);
                    }
                }
            }
        }
    }
    let d_logits = resize_bilinear_backward(d_up.view(), h, w);
    Ok(LossGrad { loss: total * inv, d_logits })
}

/// Distortion-guided feature learning loss: cross-entropy of the correction
/// cue's logits weighted by the distortion map.
pub fn dgfl_loss<T: Real>(logits_cc: ArrayView4<T>, labels: &[&LabelMap], m: ArrayView3<T>) -> Result<LossGrad<T>> {
    weighted_cross_entropy(logits_cc, labels, Some(m))
}

/// Class index of the largest logit at every position of a `(K, h, w)` map.
pub fn argmax_classes<T: Real>(logits: ArrayView3<T>) -> ndarray::Array2<u8> {
    let (k, h, w) = logits.dim();
    ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = 0;
        for c in 1..k {
            if logits[[c, y, x]] > logits[[best, y, x]] {
                best = c;
            }
        }
        best as u8
    })
}

/// Per-sample wrappers for `(C, h, w)` features and an `(h, w)` map.
pub fn fuse_single<T: Real>(f_p: &Array3<T>, f_cc: &Array3<T>, m: &ndarray::Array2<T>) -> Result<Array3<T>> {
    let out = fuse_features(
        f_p.view().insert_axis(Axis(0)),
        f_cc.view().insert_axis(Axis(0)),
        m.view().insert_axis(Axis(0)),
    )?;
    Ok(out.index_axis_move(Axis(0), 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn fusion_endpoints_and_midpoint() {
        let p = Array4::from_shape_fn((1, 3, 2, 2), |(_, c, y, x)| (c * 4 + y * 2 + x) as f64 * 0.3 - 1.0);
        let cc = p.mapv(|v| v * -2.0 + 0.7);
        let zero = Array3::zeros((1, 2, 2));
        let one = Array3::ones((1, 2, 2));
        assert_eq!(fuse_features(p.view(), cc.view(), zero.view()).unwrap(), p);
        assert_eq!(fuse_features(p.view(), cc.view(), one.view()).unwrap(), cc);
        let f = fuse_single(&array![[[2.0f64]]], &array![[[6.0]]], &array![[0.25]]).unwrap();
        assert_eq!(f[[0, 0, 0]], 3.0);
        assert!(fuse_features(p.view(), cc.view(), Array3::from_elem((1, 2, 2), 1.5).view()).is_err());
    }

    fn label(v: Array2<u8>, k: u8) -> LabelMap {
        LabelMap::new(v, k, 255).unwrap()
    }

    #[test]
    fn dgfl_reference_values() {
        // p(gt) = e^-2 with two classes: logit gap ln(e^2 - 1).
        let gap = (2.0f64.exp() - 1.0).ln();
        let logits = Array4::from_shape_vec((1, 2, 1, 1), vec![0.0, gap]).unwrap();
        let l = label(array![[0]], 2);
        let m = Array3::from_elem((1, 1, 1), 0.5);
        let r = dgfl_loss(logits.view(), &[&l], m.view()).unwrap();
        assert!((r.loss - 1.0).abs() < 1e-12);
        let zero = Array3::zeros((1, 1, 1));
        assert_eq!(dgfl_loss(logits.view(), &[&l], zero.view()).unwrap().loss, 0.0);
    }

    #[test]
    fn unweighted_reference_values() {
        let uniform = Array4::<f64>::zeros((1, 4, 2, 2));
        let l = label(array![[0, 1], [2, 3]], 4);
        let r = weighted_cross_entropy(uniform.view(), &[&l], None).unwrap();
        assert!((r.loss - 4.0f64.ln()).abs() < 1e-12);
        let gap = (1.0f64.exp() - 1.0).ln();
        let logits = Array4::from_shape_vec((1, 2, 1, 1), vec![gap, 0.0]).unwrap();
        let r = weighted_cross_entropy(logits.view(), &[&label(array![[1]], 2)], None).unwrap();
        assert!((r.loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ignore_handling() {
        let logits = Array4::<f64>::zeros((1, 2, 1, 2));
        let l = label(array![[255, 1]], 2);
        let r = weighted_cross_entropy(logits.view(), &[&l], None).unwrap();
        assert!((r.loss - 2.0f64.ln()).abs() < 1e-12);
        let all = label(array![[255, 255]], 2);
        assert!(weighted_cross_entropy(logits.view(), &[&all], None).is_err());
    }

    #[test]
    fn labels_at_higher_resolution() {
        let logits = Array4::from_shape_fn((1, 3, 2, 2), |(_, c, y, x)| (c + y + x) as f64);
        let l = label(Array2::from_shape_fn((8, 8), |(y, x)| ((y + x) % 3) as u8), 3);
        let r = weighted_cross_entropy(logits.view(), &[&l], None).unwrap();
        assert_eq!(r.d_logits.dim(), (1, 3, 2, 2));
        assert!(r.loss.is_finite() && r.loss > 0.0);
    }

    #[test]
    fn argmax() {
        let l = array![[[0.0f32, 1.0]], [[2.0, -1.0]], [[1.0, 1.0]]];
        assert_eq!(argmax_classes(l.view()), array![[1u8, 0]]);
    }
}
