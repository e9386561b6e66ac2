//! Key-frame scheduling and the per-clip segmentation pipeline.
//!
//! Key frames go through the segmentation network. Every other frame
//! receives the previous frame's feature warped along the estimated flow,
//! a distortion map, a correction cue, and the fusion of the two; the fused
//! feature is what the next frame warps.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};

use dvss_nn::Mode;

use crate::correction::{argmax_classes, fuse_single};
use crate::data::{write_label_png, LabelMap, VideoClip};
use crate::distortion::predict_distortion;
use crate::error::Result;
use crate::networks::{batch1, Networks, FEATURE_STRIDE};
use crate::propagation::{propagate_step, PropagationState};
use crate::training::labels_from_logits;
use crate::Error;

/// Fixed-interval key-frame schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub interval: usize,
    pub key: Vec<bool>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key.is_empty()
    }

    pub fn is_key(&self, index: usize) -> bool {
        self.key[index]
    }

    /// Number of warps separating `index` from its key frame.
    pub fn distance(&self, index: usize) -> usize {
        index % self.interval
    }
}

/// Marks frame `i` as key iff `i mod interval = 0`.
pub fn schedule_keyframes(num_frames: usize, interval: usize) -> Result<Schedule> {
    if interval < 1 {
        return Err(Error::InvalidArgument("key-frame interval must be at least 1".into()));
    }
    Ok(Schedule { interval, key: (0..num_frames).map(|i| i % interval == 0).collect() })
}

/// Where the fusion weights of non-key frames come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistortionSource {
    /// The distortion network on the propagated and current frames.
    Predicted,
    /// 1 where the propagated prediction disagrees with the annotation.
    Oracle,
    /// The same weight everywhere; `Constant(0.0)` disables correction.
    Constant(f32),
}

impl DistortionSource {
    /// Propagation only: fused feature equals the propagated one.
    pub const NONE: DistortionSource = DistortionSource::Constant(0.0);
    /// Naive fusion with equal weights.
    pub const NAIVE: DistortionSource = DistortionSource::Constant(0.5);
}

/// Feature-resolution maps of one non-key frame.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub distortion: Array2<f32>,
    pub propagated_argmax: Array2<u8>,
    pub corrected_argmax: Array2<u8>,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub index: usize,
    pub distance: usize,
    /// Final prediction at frame resolution.
    pub prediction: LabelMap,
    /// Prediction from the propagated feature alone (non-key frames).
    pub propagated: Option<LabelMap>,
    pub intermediates: Option<Intermediates>,
}

/// Segments `frame` with the image network alone.
pub fn segment_frame(nets: &mut Networks, frame: &Array3<f32>) -> Result<LabelMap> {
    let (_, h, w) = frame.dim();
    let (_, logits) = nets.segnet.forward(&batch1(frame), Mode::Eval)?;
    Ok(labels_from_logits(&logits, h, w, nets.config.num_classes as u8).remove(0))
}

/// Runs the pipeline over every frame of `clip`.
pub fn segment_clip(
    nets: &mut Networks,
    clip: &VideoClip,
    schedule: &Schedule,
    source: DistortionSource,
    emit_intermediates: bool,
) -> Result<Vec<FrameResult>> {
    segment_range(nets, clip, 0, schedule, source, emit_intermediates)
}

/// Upper-bound mode: the distortion map is the disagreement between the
/// propagated prediction and the annotation.
pub fn segment_clip_oracle(nets: &mut Networks, clip: &VideoClip, schedule: &Schedule) -> Result<Vec<FrameResult>> {
    segment_clip(nets, clip, schedule, DistortionSource::Oracle, false)
}

/// Like [`segment_clip`], for the frames `start..start + schedule.len()`;
/// frame `start + i` is a key frame when the schedule marks position `i`.
pub fn segment_range(
    nets: &mut Networks,
    clip: &VideoClip,
    start: usize,
    schedule: &Schedule,
    source: DistortionSource,
    emit_intermediates: bool,
) -> Result<Vec<FrameResult>> {
    if start + schedule.len() > clip.len() {
        return Err(Error::InvalidArgument(format!(
            "schedule of {} frames from {start} exceeds clip {} of {} frames",
            schedule.len(),
            clip.clip_id,
            clip.len()
        )));
    }
    if let DistortionSource::Constant(m) = source {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidArgument(format!("constant distortion {m} outside [0, 1]")));
        }
    }
    let k = nets.config.num_classes as u8;
    let (h, w) = (clip.height(), clip.width());
    let mut out = Vec::with_capacity(schedule.len());
    let mut state: Option<PropagationState> = None;
    for pos in 0..schedule.len() {
        let index = start + pos;
        let frame = &clip.frames[index];
        if schedule.is_key(pos) {
            let (feat, logits) = nets.segnet.forward(&batch1(frame), Mode::Eval)?;
            let prediction = labels_from_logits(&logits, h, w, k).remove(0);
            state = Some(PropagationState::at_key(index, frame.clone(), feat.index_axis_move(Axis(0), 0)));
            out.push(FrameResult { index, distance: 0, prediction, propagated: None, intermediates: None });
            continue;
        }
        let prev = state.take().expect("frame 0 of a schedule is a key frame");
        let (mut next, _) = propagate_step(&prev, frame.view(), &mut nets.flownet, FEATURE_STRIDE)?;
        let f_p = batch1(&next.prop_feature);
        let logits_p = nets.segnet.head.forward(&f_p, Mode::Eval)?;
        let (_, _, fh, fw) = logits_p.dim();
        let propagated_argmax = argmax_classes(logits_p.index_axis(Axis(0), 0));

        let m = match source {
            DistortionSource::Predicted => {
                predict_distortion(&mut nets.dmnet, &batch1(&next.prop_frame), &batch1(frame))?.index_axis_move(Axis(0), 0)
            }
            DistortionSource::Oracle => {
                let gt = clip.labels.get(&index).ok_or_else(|| {
                    Error::DataIntegrity(format!("oracle mode needs a label for frame {index} of clip {}", clip.clip_id))
                })?;
                let gt = gt.downsample_nearest(FEATURE_STRIDE)?;
                Array2::from_shape_fn((fh, fw), |(y, x)| {
                    let g = gt.values[[y, x]];
                    if g != gt.ignore_index && g != propagated_argmax[[y, x]] {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            DistortionSource::Constant(c) => Array2::from_elem((fh, fw), c),
        };

        let f_c = if m.iter().all(|&v| v == 0.0) {
            next.prop_feature.clone()
        } else {
            let cue = nets.cfnet.forward(&batch1(frame), Mode::Eval)?.index_axis_move(Axis(0), 0);
            fuse_single(&next.prop_feature, &cue, &m)?
        };
        let logits_c = nets.segnet.head.forward(&batch1(&f_c), Mode::Eval)?;
        let prediction = labels_from_logits(&logits_c, h, w, k).remove(0);
        let propagated = labels_from_logits(&logits_p, h, w, k).remove(0);
        let intermediates = emit_intermediates.then(|| Intermediates {
            distortion: m.clone(),
            propagated_argmax,
            corrected_argmax: argmax_classes(logits_c.index_axis(Axis(0), 0)),
        });
        next.prop_feature = f_c;
        out.push(FrameResult { index, distance: next.distance, prediction, propagated: Some(propagated), intermediates });
        state = Some(next);
    }
    Ok(out)
}

/// Writes `<out>/clips/<clip_id>/pred/%06d.png` and, for frames with
/// intermediates, `debug/%06d_distortion.png` (16-bit) and
/// `debug/%06d_{propagated,corrected}.png`.
pub fn write_predictions(out: &Path, clip_id: &str, results: &[FrameResult]) -> Result<()> {
    let dir = out.join("clips").join(clip_id);
    let pred = dir.join("pred");
    std::fs::create_dir_all(&pred).map_err(Error::io(&pred))?;
    for r in results {
        write_label_png(&pred.join(format!("{:06}.png", r.index)), &r.prediction.values)?;
        if let Some(i) = &r.intermediates {
            let debug = dir.join("debug");
            std::fs::create_dir_all(&debug).map_err(Error::io(&debug))?;
            write_unit_png16(&debug.join(format!("{:06}_distortion.png", r.index)), &i.distortion)?;
            write_label_png(&debug.join(format!("{:06}_propagated.png", r.index)), &i.propagated_argmax)?;
            write_label_png(&debug.join(format!("{:06}_corrected.png", r.index)), &i.corrected_argmax)?;
        }
    }
    Ok(())
}

/// Writes a `[0, 1]` map as 16-bit grayscale.
pub fn write_unit_png16(path: &Path, map: &Array2<f32>) -> Result<()> {
    let (h, w) = map.dim();
    let data: Vec<u16> = map.iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, data).expect("buffer size");
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
