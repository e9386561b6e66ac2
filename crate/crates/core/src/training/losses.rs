//! Per-frame loss algebra and pseudo labels.

use ndarray::{Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use dvss_nn::layers::resize_bilinear;
use dvss_nn::{Mode, Real};

use crate::correction::{argmax_classes, weighted_cross_entropy, LossGrad};
use crate::data::{LabelMap, DEFAULT_IGNORE_INDEX};
use crate::error::Result;
use crate::networks::SegNet;

/// Losses of one supervised frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub propagation: f64,
    pub correction: f64,
    pub dgfl: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(propagation: f64, correction: f64, dgfl: f64) -> Self {
        Self { propagation, correction, dgfl, total: frame_loss(propagation, correction, dgfl) }
    }

    /// Component-wise mean of several bundles with the total recomputed from
    /// the means; `None` when empty.
    pub fn mean(bundles: &[LossBundle]) -> Option<LossBundle> {
        if bundles.is_empty() {
            return None;
        }
        let n = bundles.len() as f64;
        let sum = |f: fn(&LossBundle) -> f64| bundles.iter().map(f).sum::<f64>() / n;
        Some(LossBundle::new(sum(|b| b.propagation), sum(|b| b.correction), sum(|b| b.dgfl)))
    }
}

/// Mean of the three per-frame terms, computed as offsets from the first
/// term so that three equal terms return that term exactly.
pub fn frame_loss(propagation: f64, correction: f64, dgfl: f64) -> f64 {
    propagation + ((correction - propagation) + (dgfl - propagation)) / 3.0
}

/// Unweighted cross-entropy of the logits of the propagated feature.
pub fn propagation_loss<T: Real>(logits_p: ArrayView4<T>, labels: &[&LabelMap]) -> Result<LossGrad<T>> {
    weighted_cross_entropy(logits_p, labels, None)
}

/// Unweighted cross-entropy of the logits of the corrected feature.
pub fn correction_loss<T: Real>(logits_c: ArrayView4<T>, labels: &[&LabelMap]) -> Result<LossGrad<T>> {
    weighted_cross_entropy(logits_c, labels, None)
}

/// Upsamples `(N, K, h, w)` logits to `(oh, ow)` and takes the argmax.
pub fn labels_from_logits(logits: &Array4<f32>, oh: usize, ow: usize, num_classes: u8) -> Vec<LabelMap> {
    let up = resize_bilinear(logits.view(), oh, ow);
    up.outer_iter()
        .map(|l| LabelMap {
            values: argmax_classes(l),
            num_classes,
            ignore_index: DEFAULT_IGNORE_INDEX,
        })
        .collect()
}

/// Segmentation of full frames by the image network, at frame resolution.
pub fn pseudo_label(frames: &Array4<f32>, segnet: &mut SegNet) -> Result<Vec<LabelMap>> {
    let (_, _, h, w) = frames.dim();
    let (_, logits) = segnet.forward(frames, Mode::Eval)?;
    let k = logits.len_of(Axis(1)) as u8;
    Ok(labels_from_logits(&logits, h, w, k))
}
