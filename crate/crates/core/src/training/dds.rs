//! Dual deep supervision: a training sample is propagated from `F1` to `F3`
//! through the intermediate `F2` with two warps, and both `F2` (against a
//! pseudo label) and `F3` (against the annotation) are supervised.

use ndarray::{s, Array2, Array3, Array4, Axis};

use dvss_nn::Mode;

use super::losses::{correction_loss, propagation_loss, pseudo_label, LossBundle};
use super::Ablation;
use crate::correction::{dgfl_loss, fuse_features, fuse_features_backward};
use crate::data::LabelMap;
use crate::distortion::predict_distortion;
use crate::error::{ensure_shape, Result};
use crate::networks::{stack_batch, Networks, FEATURE_STRIDE};
use crate::propagation::{downscale_flow, downscale_flow_backward, warp_bilinear, warp_bilinear_backward, FlowField};

/// One training sample. Without `f2` only `F3` is supervised, after a single
/// warp from `F1`.
#[derive(Debug, Clone)]
pub struct DdsSample {
    pub f1: Array3<f32>,
    pub f2: Option<Array3<f32>>,
    pub f3: Array3<f32>,
    pub gt: LabelMap,
}

/// Batch-averaged losses at the intermediate and the annotated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DdsOutput {
    pub f2: Option<LossBundle>,
    pub f3: LossBundle,
    /// Mean of the per-frame totals over every supervised frame.
    pub total: f64,
    pub supervised_frames: usize,
}

struct Leg {
    /// Index into the batched flow and cue tensors.
    slot: usize,
    prev_feature: Array3<f32>,
    small_flow: FlowField<f32>,
    fusion_weights: Array2<f32>,
    d_prop: Array3<f32>,
    d_corr: Array3<f32>,
    d_cue: Array3<f32>,
}

/// What the backward pass needs from the forward pass.
pub struct DdsTape {
    samples: Vec<Vec<Leg>>,
    legs: usize,
    frame_hw: (usize, usize),
    feat_dim: (usize, usize, usize),
}

/// Runs the forward pass of a batch and records the loss gradients.
///
/// The segmentation network, its head and the distortion network run in
/// eval mode and receive no gradients. The flow and correction networks run
/// in `mode`; call [`dds_backward`] afterwards only in `Mode::Train`.
pub fn dds_forward(nets: &mut Networks, batch: &[DdsSample], ablation: Ablation, mode: Mode) -> Result<(DdsOutput, DdsTape)> {
    ensure_shape!(!batch.is_empty(), "empty DDS batch");
    let (_, h, w) = batch[0].f1.dim();
    for b in batch {
        ensure_shape!(b.f1.dim() == (3, h, w) && b.f3.dim() == (3, h, w), "DDS frames differ in size");
        ensure_shape!(b.f2.as_ref().is_none_or(|f| f.dim() == (3, h, w)), "DDS frames differ in size");
    }

    // Every leg is one (source, destination) frame pair.
    let mut sources = Vec::new();
    let mut dests = Vec::new();
    let mut plans = Vec::with_capacity(batch.len());
    for b in batch {
        let chain: Vec<&Array3<f32>> = match (&b.f2, ablation.dds) {
            (Some(f2), true) => vec![&b.f1, f2, &b.f3],
            _ => vec![&b.f1, &b.f3],
        };
        let start = sources.len();
        for pair in chain.windows(2) {
            sources.push(pair[0]);
            dests.push(pair[1]);
        }
        plans.push((start, chain.len() - 1));
    }
    let src_batch = stack_batch(&sources);
    let dst_batch = stack_batch(&dests);
    let flows = nets.flownet.forward(&src_batch, &dst_batch, mode)?;
    let cues = nets.cfnet.forward(&dst_batch, mode)?;

    let key_frames = stack_batch(&batch.iter().map(|b| &b.f1).collect::<Vec<_>>());
    let key_features = nets.segnet.features(&key_frames, Mode::Eval)?;

    // Pseudo labels for every intermediate destination.
    let intermediate: Vec<usize> = plans.iter().flat_map(|&(start, n)| start..start + n - 1).collect();
    let pseudo = if intermediate.is_empty() {
        Vec::new()
    } else {
        let frames = stack_batch(&intermediate.iter().map(|&i| dests[i]).collect::<Vec<_>>());
        pseudo_label(&frames, &mut nets.segnet)?
    };
    let mut pseudo_iter = pseudo.into_iter();

    let (c, fh, fw) = (key_features.dim().1, key_features.dim().2, key_features.dim().3);
    let total_frames: usize = plans.iter().map(|&(_, n)| n).sum();
    let scale = 1.0 / (3.0 * total_frames as f32);

    let mut bundles_f2 = Vec::new();
    let mut bundles_f3 = Vec::new();
    let mut tape_samples = Vec::with_capacity(batch.len());
    for (i, &(start, n)) in plans.iter().enumerate() {
        let mut feature = key_features.index_axis(Axis(0), i).to_owned();
        let mut prop_frame = batch[i].f1.clone();
        let mut legs = Vec::with_capacity(n);
        for leg in 0..n {
            let slot = start + leg;
            let flow = FlowField::new(flows.index_axis(Axis(0), slot).to_owned())?;
            let small = downscale_flow(&flow, FEATURE_STRIDE)?;
            let f_p = warp_bilinear(feature.view(), &small)?;
            prop_frame = warp_bilinear(prop_frame.view(), &flow)?;

            let m = if ablation.dgfc {
                let cur = dests[slot].view().insert_axis(Axis(0)).to_owned();
                let prop = prop_frame.view().insert_axis(Axis(0)).to_owned();
                predict_distortion(&mut nets.dmnet, &prop, &cur)?.index_axis_move(Axis(0), 0)
            } else {
                Array2::from_elem((fh, fw), 0.5)
            };
            let dgfl_weights = if ablation.dgfl { m.clone() } else { Array2::ones((fh, fw)) };

            let f_cc = cues.slice(s![slot, .., .., ..]).to_owned();
            let f_c = fuse_features(
                f_p.view().insert_axis(Axis(0)),
                f_cc.view().insert_axis(Axis(0)),
                m.view().insert_axis(Axis(0)),
            )?;
            let f_p4 = f_p.clone().insert_axis(Axis(0));
            let f_cc4 = f_cc.insert_axis(Axis(0));

            let label_owned;
            let label: &LabelMap = if leg + 1 == n {
                &batch[i].gt
            } else {
                label_owned = pseudo_iter.next().expect("pseudo label per intermediate frame");
                &label_owned
            };
            let logits_p = nets.segnet.head.forward(&f_p4, Mode::Eval)?;
            let logits_c = nets.segnet.head.forward(&f_c, Mode::Eval)?;
            let logits_cc = nets.segnet.head.forward(&f_cc4, Mode::Eval)?;
            let lp = propagation_loss(logits_p.view(), &[label])?;
            let lc = correction_loss(logits_c.view(), &[label])?;
            let ld = dgfl_loss(logits_cc.view(), &[label], dgfl_weights.view().insert_axis(Axis(0)))?;
            let bundle = LossBundle::new(lp.loss, lc.loss, ld.loss);
            if leg + 1 == n {
                bundles_f3.push(bundle);
            } else {
                bundles_f2.push(bundle);
            }

            let grad = |d: Array4<f32>, nets: &Networks| nets.segnet.head.input_grad(&(d * scale)).index_axis_move(Axis(0), 0);
            legs.push(Leg {
                slot,
                prev_feature: feature,
                small_flow: small,
                fusion_weights: m,
                d_prop: grad(lp.d_logits, nets),
                d_corr: grad(lc.d_logits, nets),
                d_cue: grad(ld.d_logits, nets),
            });
            feature = f_c.index_axis_move(Axis(0), 0);
        }
        tape_samples.push(legs);
    }

    let all: Vec<LossBundle> = bundles_f2.iter().chain(bundles_f3.iter()).copied().collect();
    let total = all.iter().map(|b| b.total).sum::<f64>() / all.len() as f64;
    let out = DdsOutput {
        f2: LossBundle::mean(&bundles_f2),
        f3: LossBundle::mean(&bundles_f3).expect("every sample supervises F3"),
        total,
        supervised_frames: all.len(),
    };
    let tape = DdsTape { samples: tape_samples, legs: sources.len(), frame_hw: (h, w), feat_dim: (c, fh, fw) };
    Ok((out, tape))
}

/// Accumulates parameter gradients of the flow and correction networks.
pub fn dds_backward(nets: &mut Networks, tape: DdsTape) -> Result<()> {
    let (h, w) = tape.frame_hw;
    let (c, fh, fw) = tape.feat_dim;
    let mut d_flows = Array4::<f32>::zeros((tape.legs, 2, h, w));
    let mut d_cues = Array4::<f32>::zeros((tape.legs, c, fh, fw));
    for legs in tape.samples {
        let mut carry = Array3::<f32>::zeros((c, fh, fw));
        for leg in legs.into_iter().rev() {
            let d_fc = &leg.d_corr + &carry;
            let (d_fp_fuse, d_cc_fuse) =
                fuse_features_backward(d_fc.view().insert_axis(Axis(0)), leg.fusion_weights.view().insert_axis(Axis(0)))?;
            let d_fp = d_fp_fuse.index_axis_move(Axis(0), 0) + &leg.d_prop;
            let d_cc = d_cc_fuse.index_axis_move(Axis(0), 0) + &leg.d_cue;
            d_cues.index_axis_mut(Axis(0), leg.slot).assign(&d_cc);
            let (d_src, d_small) = warp_bilinear_backward(leg.prev_feature.view(), &leg.small_flow, d_fp.view())?;
            let d_flow = downscale_flow_backward(&d_small, FEATURE_STRIDE, h, w);
            d_flows.index_axis_mut(Axis(0), leg.slot).assign(d_flow.as_array());
            carry = d_src;
        }
    }
    nets.flownet.backward(&d_flows);
    nets.cfnet.backward(&d_cues);
    Ok(())
}
