//! Distortion maps: cosine similarity of siamese features, its affine map
//! to `[0, 1]`, the XOR ground truth, the training loss and average
//! precision.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};

use dvss_nn::{Mode, Real};

use crate::data::LabelMap;
use crate::error::{ensure_shape, Result};
use crate::networks::DmNet;
use crate::Error;

/// Guard added to feature norms so that zero vectors stay finite.
pub const NORM_EPS: f64 = 1e-8;
/// Probability clamp inside the logarithms of the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Per-position cosine similarity of the channel vectors of two `(C, H, W)`
/// feature maps, in `[-1, 1]`.
pub fn similarity_map<T: Real>(fa: ArrayView3<T>, fb: ArrayView3<T>) -> Result<Array2<T>> {
    ensure_shape!(fa.dim() == fb.dim(), "similarity of {:?} and {:?}", fa.dim(), fb.dim());
    let (c, h, w) = fa.dim();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..c {
            let a = fa[[k, y, x]].to_f64().unwrap_or(f64::NAN);
            let b = fb[[k, y, x]].to_f64().unwrap_or(f64::NAN);
            ab += a * b;
            aa += a * a;
            bb += b * b;
        }
        let s = ab / ((aa.sqrt() + NORM_EPS) * (bb.sqrt() + NORM_EPS));
        T::c(s.clamp(-1.0, 1.0))
    }))
}

/// Gradients of `sum(d_s * S)` with respect to both feature maps.
pub fn similarity_backward<T: Real>(
    fa: ArrayView3<T>,
    fb: ArrayView3<T>,
    d_s: ArrayView2<T>,
) -> Result<(Array3<T>, Array3<T>)> {
    ensure_shape!(fa.dim() == fb.dim(), "similarity of {:?} and {:?}", fa.dim(), fb.dim());
    let (c, h, w) = fa.dim();
    ensure_shape!(d_s.dim() == (h, w), "similarity gradient {:?} vs {h}x{w}", d_s.dim());
    let mut da = Array3::zeros((c, h, w));
    let mut db = Array3::zeros((c, h, w));
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    for y in 0..h {
        for x in 0..w {
            let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
            for k in 0..c {
                let (a, b) = (f(fa[[k, y, x]]), f(fb[[k, y, x]]));
                ab += a * b;
                aa += a * a;
                bb += b * b;
            }
            let (na, nb) = (aa.sqrt(), bb.sqrt());
            let (ea, eb) = (na + NORM_EPS, nb + NORM_EPS);
            let g = f(d_s[[y, x]]);
            let s = ab / (ea * eb);
            for k in 0..c {
                let (a, b) = (f(fa[[k, y, x]]), f(fb[[k, y, x]]));
                let ua = if na > 0.0 { a / na } else { 0.0 };
                let ub = if nb > 0.0 { b / nb } else { 0.0 };
                da[[k, y, x]] = T::c(g * (b / (ea * eb) - s * ua / ea));
                db[[k, y, x]] = T::c(g * (a / (ea * eb) - s * ub / eb));
            }
        }
    }
    Ok((da, db))
}

/// `M = (1 - S) / 2`.
pub fn distortion_from_similarity<T: Real>(s: &Array2<T>) -> Array2<T> {
    let half = T::c(0.5);
    s.mapv(|v| (T::one() - v) * half)
}

/// Distortion of the propagated frames against the current frames, both
/// `(N, 3, H, W)`, through the shared extractor in eval mode. Returns
/// `(N, H/4, W/4)`.
pub fn predict_distortion(dmnet: &mut DmNet, prop_frames: &Array4<f32>, cur_frames: &Array4<f32>) -> Result<Array3<f32>> {
    ensure_shape!(prop_frames.dim() == cur_frames.dim(), "propagated {:?} vs current {:?}", prop_frames.dim(), cur_frames.dim());
    let n = cur_frames.dim().0;
    let both = ndarray::concatenate(Axis(0), &[cur_frames.view(), prop_frames.view()]).expect("equal shapes");
    let feats = dmnet.forward(&both, Mode::Eval)?;
    let (_, _, h, w) = feats.dim();
    let mut out = Array3::zeros((n, h, w));
    for i in 0..n {
        let s = similarity_map(feats.index_axis(Axis(0), i), feats.index_axis(Axis(0), n + i))?;
        out.index_axis_mut(Axis(0), i).assign(&distortion_from_similarity(&s));
    }
    Ok(out)
}

/// Binary disagreement of two label maps and the mask of positions where
/// neither is the ignore index.
pub fn distortion_ground_truth(seg_a: &LabelMap, seg_b: &LabelMap) -> Result<(Array2<f32>, Array2<bool>)> {
    ensure_shape!(seg_a.values.dim() == seg_b.values.dim(), "XOR of {:?} and {:?}", seg_a.values.dim(), seg_b.values.dim());
    let valid = Zip::from(&seg_a.values)
        .and(&seg_b.values)
        .map_collect(|&a, &b| a != seg_a.ignore_index && b != seg_b.ignore_index);
    let gt = Zip::from(&seg_a.values)
        .and(&seg_b.values)
        .and(&valid)
        .map_collect(|&a, &b, &v| if v && a != b { 1.0 } else { 0.0 });
    Ok((gt, valid))
}

/// Class weighting of the distortion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveWeight {
    /// `#negatives / #positives` over the batch, clamped to `[1, 100]`.
    Balanced,
    Unweighted,
}

/// Weighted binary cross-entropy over the unmasked positions and its
/// gradient with respect to the predictions.
pub fn dmnet_loss<T: Real>(
    pred: ArrayView3<T>,
    gt: ArrayView3<T>,
    mask: ArrayView3<bool>,
    weighting: PositiveWeight,
) -> Result<(f64, Array3<T>)> {
    ensure_shape!(pred.dim() == gt.dim() && gt.dim() == mask.dim(), "dmnet loss shapes {:?} {:?} {:?}", pred.dim(), gt.dim(), mask.dim());
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let (mut pos, mut count) = (0usize, 0usize);
    for (&g, &m) in gt.iter().zip(mask.iter()) {
        if m {
            count += 1;
            if f(g) > 0.5 {
                pos += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("distortion loss over an empty region".into()));
    }
    let pos_weight = match weighting {
        PositiveWeight::Balanced if pos > 0 => ((count - pos) as f64 / pos as f64).clamp(1.0, 100.0),
        _ => 1.0,
    };
    let mut loss = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    Zip::from(&mut grad).and(&pred).and(&gt).and(&mask).for_each(|d, &p, &g, &m| {
        if !m {
            return;
        }
        let p = f(p).clamp(BCE_EPS, 1.0 - BCE_EPS);
        let y = f(g);
        let wpos = pos_weight * y;
        let wneg = 1.0 - y;
        loss -= wpos * p.ln() + wneg * (1.0 - p).ln();
        *d = T::c((-wpos / p + wneg / (1.0 - p)) / count as f64);
    });
    Ok((loss / count as f64, grad))
}

/// Average precision of `scores` against binary `labels` (ties share a
/// threshold). Returns `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}
