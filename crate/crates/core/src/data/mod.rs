//! Video clips, label maps, the on-disk dataset layout and the synthetic
//! generator.

mod augment;
mod io;
mod sampling;
mod synth;

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

pub use augment::{hflip_flow, hflip_frame, hflip_map, random_crop_window, Augment};
pub use io::{
    load_clip, read_flo, read_label_png, read_mask_png, read_rgb_png, write_flo, write_label_png,
    write_mask_png, write_rgb_png, ClipEntry, Dataset, Manifest, Split,
};
pub use sampling::{sample_dmnet_pair, sample_training_triplet, triplet_from, TrainingTriplet, MAX_DISTANCE};
pub use synth::{generate_synthetic_dataset, render_clip, render_indexed_clip, Occluder, Outline, RenderedClip, Scene, Shape, SynthSpec, Texture};

use crate::error::{ensure_shape, Result};
use crate::propagation::FlowField;
use crate::Error;

pub const DEFAULT_IGNORE_INDEX: u8 = 255;

/// Dense class-index map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub values: Array2<u8>,
    pub num_classes: u8,
    pub ignore_index: u8,
}

impl LabelMap {
    pub fn new(values: Array2<u8>, num_classes: u8, ignore_index: u8) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v >= num_classes && v != ignore_index) {
            return Err(Error::DataIntegrity(format!(
                "label value {bad} outside [0, {num_classes}) and not the ignore index {ignore_index}"
            )));
        }
        Ok(Self { values, num_classes, ignore_index })
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_ignored(&self, y: usize, x: usize) -> bool {
        self.values[[y, x]] == self.ignore_index
    }

    /// Nearest-neighbour downsampling that keeps the centre pixel of every
    /// `factor x factor` block (`factor / 2` offset).
    pub fn downsample_nearest(&self, factor: usize) -> Result<Self> {
        let (h, w) = self.values.dim();
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::InvalidArgument(format!("factor {factor} does not divide {h}x{w}")));
        }
        let off = factor / 2;
        let values = Array2::from_shape_fn((h / factor, w / factor), |(y, x)| {
            self.values[[y * factor + off, x * factor + off]]
        });
        Ok(Self { values, num_classes: self.num_classes, ignore_index: self.ignore_index })
    }
}

/// Per-channel normalization applied to 8-bit frames on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

impl Normalization {
    /// `rgb` in `[0, 1]`, shape `(3, H, W)`.
    pub fn apply(&self, mut rgb: Array3<f32>) -> Array3<f32> {
        for (c, mut plane) in rgb.outer_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| (v - m) / s);
        }
        rgb
    }

    /// Inverse of [`Normalization::apply`].
    pub fn invert(&self, mut frame: Array3<f32>) -> Array3<f32> {
        for (c, mut plane) in frame.outer_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| v * s + m);
        }
        frame
    }
}

/// Ordered frames of one scene with optional dense annotations.
///
/// `gt_flows[t]` and `occlusion[t]` describe the transition `t -> t + 1` and
/// live on the grid of frame `t + 1`.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub clip_id: String,
    /// Normalized `(3, H, W)` frames.
    pub frames: Vec<Array3<f32>>,
    pub labels: BTreeMap<usize, LabelMap>,
    pub gt_flows: BTreeMap<usize, FlowField<f32>>,
    pub occlusion: BTreeMap<usize, Array2<bool>>,
}

impl VideoClip {
    pub fn new(
        clip_id: impl Into<String>,
        frames: Vec<Array3<f32>>,
        labels: BTreeMap<usize, LabelMap>,
        gt_flows: BTreeMap<usize, FlowField<f32>>,
        occlusion: BTreeMap<usize, Array2<bool>>,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        let Some(first) = frames.first() else {
            return Err(Error::DataIntegrity(format!("clip {clip_id} has no frames")));
        };
        let (c, h, w) = first.dim();
        ensure_shape!(c == 3, "clip {clip_id}: frames need 3 channels, got {c}");
        for (i, f) in frames.iter().enumerate() {
            ensure_shape!(f.dim() == (3, h, w), "clip {clip_id}: frame {i} is {:?}, expected {:?}", f.dim(), (3, h, w));
        }
        let n = frames.len();
        for (&i, l) in &labels {
            if i >= n {
                return Err(Error::DataIntegrity(format!("clip {clip_id}: label index {i} >= {n} frames")));
            }
            ensure_shape!(l.values.dim() == (h, w), "clip {clip_id}: label {i} is {:?}, frames are {h}x{w}", l.values.dim());
        }
        if !gt_flows.is_empty() {
            for t in 0..n.saturating_sub(1) {
                let f = gt_flows
                    .get(&t)
                    .ok_or_else(|| Error::DataIntegrity(format!("clip {clip_id}: missing flow for frame {t}")))?;
                ensure_shape!((f.height(), f.width()) == (h, w), "clip {clip_id}: flow {t} has wrong size");
            }
        }
        for (&t, m) in &occlusion {
            ensure_shape!(t + 1 < n && m.dim() == (h, w), "clip {clip_id}: bad occlusion mask {t}");
        }
        Ok(Self { clip_id, frames, labels, gt_flows, occlusion })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.frames[0].len_of(Axis(2))
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labels.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn label_validity() {
        assert!(LabelMap::new(array![[0, 3], [255, 1]], 4, 255).is_ok());
        assert!(matches!(LabelMap::new(array![[0, 4]], 4, 255), Err(Error::DataIntegrity(_))));
    }

    #[test]
    fn nearest_downsample_takes_block_centre() {
        let values = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as u8);
        let l = LabelMap::new(values, 16, 255).unwrap();
        let d = l.downsample_nearest(2).unwrap();
        assert_eq!(d.values, array![[5, 7], [13, 15]]);
    }

    #[test]
    fn clip_invariants() {
        let f = Array3::<f32>::zeros((3, 4, 4));
        let label = LabelMap::new(Array2::zeros((4, 4)), 2, 255).unwrap();
        let bad_index = BTreeMap::from([(5, label.clone())]);
        assert!(VideoClip::new("c", vec![f.clone(); 3], bad_index, BTreeMap::new(), BTreeMap::new()).is_err());
        let sizes = vec![f.clone(), Array3::zeros((3, 4, 5))];
        assert!(VideoClip::new("c", sizes, BTreeMap::new(), BTreeMap::new(), BTreeMap::new()).is_err());
        let partial_flow = BTreeMap::from([(0, FlowField::zeros(4, 4))]);
        assert!(VideoClip::new("c", vec![f.clone(); 3], BTreeMap::new(), partial_flow, BTreeMap::new()).is_err());
        let ok = VideoClip::new("c", vec![f; 3], BTreeMap::from([(2, label)]), BTreeMap::new(), BTreeMap::new()).unwrap();
        assert_eq!(ok.labeled_indices(), vec![2]);
    }

    #[test]
    fn normalization_roundtrip() {
        let n = Normalization::default();
        let x = Array3::from_elem((3, 2, 2), 0.75f32);
        let y = n.apply(x.clone());
        assert_eq!(y[[0, 0, 0]], 0.5);
        assert_eq!(n.invert(y), x);
    }
}
