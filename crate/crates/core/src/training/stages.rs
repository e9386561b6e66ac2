//! Stage orchestration: sampling, optimization, metrics and checkpoints.

use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dvss_nn::{Adam, Mode, Param, ParamSet};

use super::dds::{dds_backward, dds_forward, DdsSample};
use super::losses::labels_from_logits;
use super::{Ablation, TrainConfig};
use crate::correction::weighted_cross_entropy;
use crate::data::{
    hflip_flow, hflip_frame, hflip_map, random_crop_window, sample_dmnet_pair, sample_training_triplet, Augment, Dataset,
    LabelMap, Split, VideoClip,
};
use crate::distortion::{dmnet_loss, distortion_from_similarity, distortion_ground_truth, similarity_backward, similarity_map};
use crate::error::Result;
use crate::networks::{
    check_input_size, stack_batch, Checkpoint, CheckpointWriter, NetworkConfig, Networks, Stage, FEATURE_STRIDE,
    INPUT_MULTIPLE,
};
use crate::propagation::{downscale_flow, warp_bilinear, FlowField};
use crate::Error;

/// Everything a stage needs besides the stage name.
#[derive(Debug, Clone)]
pub struct TrainContext<'a> {
    pub dataset: &'a Dataset,
    /// Root holding one sub-directory per stage.
    pub checkpoints: &'a Path,
    pub network: &'a NetworkConfig,
    pub train: &'a TrainConfig,
    pub seed: u64,
    pub ablation: Ablation,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub checkpoint: Checkpoint,
    pub metrics: PathBuf,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl StageReport {
    /// Mean step loss of the last epoch-sized window.
    pub fn final_loss(&self, window: usize) -> f64 {
        let n = self.step_losses.len();
        let tail = &self.step_losses[n.saturating_sub(window.max(1))..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// A random crop and flip applied identically to every map of one sample.
#[derive(Debug, Clone, Copy)]
struct View {
    flip: bool,
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

impl View {
    fn draw<R: Rng + ?Sized>(aug: &Augment, h: usize, w: usize, rng: &mut R) -> View {
        let flip = aug.hflip && rng.random_bool(0.5);
        match aug.crop {
            Some([ch, cw]) if ch < h || cw < w => {
                let (ch, cw) = (ch.min(h), cw.min(w));
                let (y, x) = random_crop_window(h, w, ch, cw, FEATURE_STRIDE, rng);
                View { flip, y, x, h: ch, w: cw }
            }
            _ => View { flip, y: 0, x: 0, h, w },
        }
    }

    fn frame(&self, f: &Array3<f32>) -> Array3<f32> {
        let c = f.slice(s![.., self.y..self.y + self.h, self.x..self.x + self.w]).to_owned();
        if self.flip {
            hflip_frame(&c)
        } else {
            c
        }
    }

    fn label(&self, l: &LabelMap) -> LabelMap {
        let c = l.values.slice(s![self.y..self.y + self.h, self.x..self.x + self.w]).to_owned();
        let values = if self.flip { hflip_map(&c) } else { c };
        LabelMap { values, num_classes: l.num_classes, ignore_index: l.ignore_index }
    }

    fn flow(&self, f: &FlowField<f32>) -> FlowField<f32> {
        let c = FlowField::new(f.as_array().slice(s![.., self.y..self.y + self.h, self.x..self.x + self.w]).to_owned())
            .expect("two channels");
        if self.flip {
            hflip_flow(&c)
        } else {
            c
        }
    }
}

enum Metrics {
    Simple(csv::Writer<std::fs::File>),
    Joint(csv::Writer<std::fs::File>),
}

impl Metrics {
    fn create(path: &Path, joint: bool) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        if joint {
            w.write_record(["step", "L_P@F2", "L_C@F2", "L_DGFL@F2", "L_P@F3", "L_C@F3", "L_DGFL@F3", "L_total", "lr"])?;
            Ok(Metrics::Joint(w))
        } else {
            w.write_record(["step", "epoch", "loss", "lr"])?;
            Ok(Metrics::Simple(w))
        }
    }

    fn simple(&mut self, step: usize, epoch: usize, loss: f64, lr: f64) -> Result<()> {
        if let Metrics::Simple(w) = self {
            w.write_record([step.to_string(), epoch.to_string(), loss.to_string(), lr.to_string()])?;
        }
        Ok(())
    }

    fn joint(&mut self, step: usize, out: &super::DdsOutput, lr: f64) -> Result<()> {
        if let Metrics::Joint(w) = self {
            let f2 = |f: fn(&super::LossBundle) -> f64| out.f2.as_ref().map(|b| f(b).to_string()).unwrap_or_default();
            w.write_record([
                step.to_string(),
                f2(|b| b.propagation),
                f2(|b| b.correction),
                f2(|b| b.dgfl),
                out.f3.propagation.to_string(),
                out.f3.correction.to_string(),
                out.f3.dgfl.to_string(),
                out.total.to_string(),
                lr.to_string(),
            ])?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let (Metrics::Simple(mut w) | Metrics::Joint(mut w)) = self;
        w.flush().map_err(|e| Error::Csv(e.into()))
    }
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + stage as u64);
    rng
}

/// Sample slots of one epoch: `(clip index)` repeated `samples_per_clip`
/// times and shuffled.
fn epoch_order<R: Rng + ?Sized>(clips: usize, per_clip: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..clips).flat_map(|c| std::iter::repeat_n(c, per_clip)).collect();
    order.shuffle(rng);
    order
}

fn adam_step(adam: &mut Adam<f32>, params: &mut [&mut Param<f32>], lr: f64) {
    adam.step(params, lr);
}

/// Trains one stage and writes its checkpoint under `ctx.checkpoints`.
pub fn train_stage(stage: Stage, ctx: &TrainContext<'_>) -> Result<StageReport> {
    ctx.network.validate()?;
    ctx.train.validate()?;
    for &p in stage.prerequisites() {
        Checkpoint::open(ctx.checkpoints, p, ctx.network)?;
    }
    let clips = ctx.dataset.load_split(Split::Train)?;
    if clips.is_empty() {
        return Err(Error::DataIntegrity("the dataset has no training clips".into()));
    }
    check_input_size(clips[0].height(), clips[0].width(), INPUT_MULTIPLE)?;
    if ctx.dataset.manifest.num_classes as usize != ctx.network.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, network config {}",
            ctx.dataset.manifest.num_classes, ctx.network.num_classes
        )));
    }

    let mut nets = Networks::initialized(ctx.network, ctx.seed);
    let mut rng = stage_rng(ctx.seed, stage);
    let variant = (stage == Stage::Joint && ctx.ablation != Ablation::FULL).then(|| ctx.ablation.label());
    let dir = Checkpoint::variant_dir(ctx.checkpoints, stage, variant.as_deref());
    std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let metrics_path = dir.join("metrics.csv");
    let mut metrics = Metrics::create(&metrics_path, stage == Stage::Joint)?;

    let step_losses = match stage {
        Stage::Segnet => train_segnet(ctx, &clips, &mut nets, &mut rng, &mut metrics)?,
        Stage::FlowPretrain => train_flow(ctx, &clips, &mut nets, &mut rng, &mut metrics)?,
        Stage::Dmnet => {
            let segnet = Checkpoint::open(ctx.checkpoints, Stage::Segnet, ctx.network)?;
            segnet.load(&mut nets.segnet)?;
            Checkpoint::open(ctx.checkpoints, Stage::FlowPretrain, ctx.network)?.load(&mut nets.flownet)?;
            train_dmnet(ctx, &clips, &mut nets, &mut rng, &mut metrics)?
        }
        Stage::Joint => {
            Checkpoint::open(ctx.checkpoints, Stage::Segnet, ctx.network)?.load(&mut nets.segnet)?;
            Checkpoint::open(ctx.checkpoints, Stage::FlowPretrain, ctx.network)?.load(&mut nets.flownet)?;
            Checkpoint::open(ctx.checkpoints, Stage::Dmnet, ctx.network)?.load(&mut nets.dmnet)?;
            train_joint(ctx, &clips, &mut nets, &mut rng, &mut metrics)?
        }
    };
    metrics.finish()?;

    let mut writer = CheckpointWriter::for_variant(ctx.checkpoints, stage, variant.as_deref(), ctx.seed, ctx.train.epochs, ctx.network)?;
    match stage {
        Stage::Segnet => writer.add(&mut nets.segnet)?,
        Stage::FlowPretrain => writer.add(&mut nets.flownet)?,
        Stage::Dmnet => writer.add(&mut nets.dmnet)?,
        Stage::Joint => {
            writer.add(&mut nets.segnet)?;
            writer.add(&mut nets.dmnet)?;
            writer.add(&mut nets.flownet)?;
            writer.add(&mut nets.cfnet)?;
        }
    }
    let checkpoint = writer.finish()?;
    Ok(StageReport { stage, checkpoint, metrics: metrics_path, step_losses })
}

fn log_epoch(ctx: &TrainContext<'_>, stage: Stage, epoch: usize, losses: &[f64], lr: f64) {
    if ctx.verbose && !losses.is_empty() {
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        eprintln!("[{stage}] epoch {epoch}/{} loss {mean:.4} lr {lr:.1e}", ctx.train.epochs);
    }
}

/// Drives the epoch loop; `step` consumes one batch of clip indices and
/// returns its loss.
fn run_epochs(
    ctx: &TrainContext<'_>,
    stage: Stage,
    num_clips: usize,
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&[usize], f64, usize, &mut ChaCha8Rng) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut all = Vec::new();
    for epoch in 1..=ctx.train.epochs {
        let lr = ctx.train.learning_rate_at(epoch);
        let order = epoch_order(num_clips, ctx.train.samples_per_clip, rng);
        let mut epoch_losses = Vec::new();
        for batch in order.chunks(ctx.train.batch_size) {
            let loss = step(batch, lr, epoch, rng)?;
            if !loss.is_finite() {
                return Err(Error::InvalidArgument(format!("{stage}: loss diverged at epoch {epoch}")));
            }
            epoch_losses.push(loss);
        }
        log_epoch(ctx, stage, epoch, &epoch_losses, lr);
        all.extend(epoch_losses);
    }
    Ok(all)
}

fn train_segnet(
    ctx: &TrainContext<'_>,
    clips: &[VideoClip],
    nets: &mut Networks,
    rng: &mut ChaCha8Rng,
    metrics: &mut Metrics,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(ctx.train.beta1, ctx.train.beta2);
    let mut steps = 0;
    run_epochs(ctx, Stage::Segnet, clips.len(), rng, |batch, lr, epoch, rng| {
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for &ci in batch {
            let clip = &clips[ci];
            let labeled = clip.labeled_indices();
            if labeled.is_empty() {
                return Err(Error::DataIntegrity(format!("clip {} has no labels", clip.clip_id)));
            }
            let t = labeled[rng.random_range(0..labeled.len())];
            let view = View::draw(&ctx.train.augment, clip.height(), clip.width(), rng);
            frames.push(view.frame(&clip.frames[t]));
            labels.push(view.label(&clip.labels[&t]));
        }
        let x = stack_batch(&frames.iter().collect::<Vec<_>>());
        let (_, logits) = nets.segnet.forward(&x, Mode::Train)?;
        let lg = weighted_cross_entropy(logits.view(), &labels.iter().collect::<Vec<_>>(), None)?;
        nets.segnet.backward(&lg.d_logits);
        adam_step(&mut adam, &mut nets.segnet.params_mut(), lr);
        steps += 1;
        metrics.simple(steps, epoch, lg.loss, lr)?;
        Ok(lg.loss)
    })
}

/// Mean endpoint error and its gradient.
pub(crate) fn endpoint_error(pred: &Array4<f32>, target: &Array4<f32>) -> (f64, Array4<f32>) {
    let (n, _, h, w) = pred.dim();
    let count = (n * h * w) as f64;
    let mut grad = Array4::zeros(pred.raw_dim());
    let mut total = 0.0;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let du = (pred[[b, 0, y, x]] - target[[b, 0, y, x]]) as f64;
                let dv = (pred[[b, 1, y, x]] - target[[b, 1, y, x]]) as f64;
                let e = (du * du + dv * dv).sqrt();
                total += e;
                let e = e.max(1e-6);
                grad[[b, 0, y, x]] = (du / e / count) as f32;
                grad[[b, 1, y, x]] = (dv / e / count) as f32;
            }
        }
    }
    (total / count, grad)
}

fn train_flow(
    ctx: &TrainContext<'_>,
    clips: &[VideoClip],
    nets: &mut Networks,
    rng: &mut ChaCha8Rng,
    metrics: &mut Metrics,
) -> Result<Vec<f64>> {
    if clips.iter().any(|c| c.gt_flows.is_empty()) {
        return Err(Error::DataIntegrity("flow pretraining needs ground-truth flow for every training clip".into()));
    }
    let mut adam = Adam::new(ctx.train.beta1, ctx.train.beta2);
    let mut steps = 0;
    run_epochs(ctx, Stage::FlowPretrain, clips.len(), rng, |batch, lr, epoch, rng| {
        let (mut a, mut b, mut target) = (Vec::new(), Vec::new(), Vec::new());
        for &ci in batch {
            let clip = &clips[ci];
            let t = rng.random_range(0..clip.len() - 1);
            let view = View::draw(&ctx.train.augment, clip.height(), clip.width(), rng);
            if rng.random_bool(ctx.train.identity_fraction) {
                a.push(view.frame(&clip.frames[t]));
                b.push(view.frame(&clip.frames[t]));
                target.push(Array3::zeros((2, view.h, view.w)));
            } else {
                a.push(view.frame(&clip.frames[t]));
                b.push(view.frame(&clip.frames[t + 1]));
                target.push(view.flow(&clip.gt_flows[&t]).into_array());
            }
        }
        let a = stack_batch(&a.iter().collect::<Vec<_>>());
        let b = stack_batch(&b.iter().collect::<Vec<_>>());
        let target = stack_batch(&target.iter().collect::<Vec<_>>());
        let pred = nets.flownet.forward(&a, &b, Mode::Train)?;
        let (loss, grad) = endpoint_error(&pred, &target);
        nets.flownet.backward(&grad);
        adam_step(&mut adam, &mut nets.flownet.params_mut(), lr);
        steps += 1;
        metrics.simple(steps, epoch, loss, lr)?;
        Ok(loss)
    })
}

/// Targets of the distortion network for pairs `(F_t, F_t+k)`: the current
/// frames, the frames warped along one long flow, the XOR ground truth at
/// feature resolution and its validity mask.
///
/// `earlier[i]` and `later[i]` form pair `i`; all networks run in eval mode.
pub struct DistortionTargets {
    pub current: Array4<f32>,
    pub propagated: Array4<f32>,
    pub gt: ndarray::Array3<f32>,
    pub mask: ndarray::Array3<bool>,
}

pub fn distortion_targets(nets: &mut Networks, earlier: &[Array3<f32>], later: &[Array3<f32>]) -> Result<DistortionTargets> {
    let n = earlier.len();
    let a = stack_batch(&earlier.iter().collect::<Vec<_>>());
    let b = stack_batch(&later.iter().collect::<Vec<_>>());
    let both = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("equal shapes");
    let (feats, logits) = nets.segnet.forward(&both, Mode::Eval)?;
    let flows = nets.flownet.forward(&a, &b, Mode::Eval)?;
    let (_, c, fh, fw) = feats.dim();
    let k = nets.config.num_classes as u8;
    let mut propagated = Array4::zeros(a.raw_dim());
    let mut prop_feats = Array4::zeros((n, c, fh, fw));
    for i in 0..n {
        let flow = FlowField::new(flows.index_axis(Axis(0), i).to_owned())?;
        propagated.index_axis_mut(Axis(0), i).assign(&warp_bilinear(a.index_axis(Axis(0), i), &flow)?);
        let small = downscale_flow(&flow, FEATURE_STRIDE)?;
        prop_feats.index_axis_mut(Axis(0), i).assign(&warp_bilinear(feats.index_axis(Axis(0), i), &small)?);
    }
    let prop_logits = nets.segnet.head.forward(&prop_feats, Mode::Eval)?;
    let seg_a = labels_from_logits(&prop_logits, fh, fw, k);
    let seg_b = labels_from_logits(&logits.slice(s![n.., .., .., ..]).to_owned(), fh, fw, k);
    let mut gt = ndarray::Array3::zeros((n, fh, fw));
    let mut mask = ndarray::Array3::from_elem((n, fh, fw), false);
    for i in 0..n {
        let (g, m) = distortion_ground_truth(&seg_a[i], &seg_b[i])?;
        gt.index_axis_mut(Axis(0), i).assign(&g);
        mask.index_axis_mut(Axis(0), i).assign(&m);
    }
    Ok(DistortionTargets { current: b, propagated, gt, mask })
}

fn train_dmnet(
    ctx: &TrainContext<'_>,
    clips: &[VideoClip],
    nets: &mut Networks,
    rng: &mut ChaCha8Rng,
    metrics: &mut Metrics,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(ctx.train.beta1, ctx.train.beta2);
    let mut steps = 0;
    let k_range = (1, ctx.train.max_distance);
    run_epochs(ctx, Stage::Dmnet, clips.len(), rng, |batch, lr, epoch, rng| {
        let (mut earlier, mut later) = (Vec::new(), Vec::new());
        for &ci in batch {
            let clip = &clips[ci];
            let (t, tk) = sample_dmnet_pair(clip.len(), rng, k_range)?;
            let view = View::draw(&ctx.train.augment, clip.height(), clip.width(), rng);
            earlier.push(view.frame(&clip.frames[t]));
            later.push(view.frame(&clip.frames[tk]));
        }
        let targets = distortion_targets(nets, &earlier, &later)?;
        let n = earlier.len();
        let both = ndarray::concatenate(Axis(0), &[targets.current.view(), targets.propagated.view()]).expect("equal shapes");
        let feats = nets.dmnet.forward(&both, Mode::Train)?;
        let (_, _, fh, fw) = feats.dim();
        let mut m = ndarray::Array3::zeros((n, fh, fw));
        for i in 0..n {
            let sim = similarity_map(feats.index_axis(Axis(0), i), feats.index_axis(Axis(0), n + i))?;
            m.index_axis_mut(Axis(0), i).assign(&distortion_from_similarity(&sim));
        }
        let (loss, d_m) = dmnet_loss(m.view(), targets.gt.view(), targets.mask.view(), ctx.train.positive_weight)?;
        let mut d_feats = Array4::zeros(feats.raw_dim());
        for i in 0..n {
            let d_s = d_m.index_axis(Axis(0), i).mapv(|v| -0.5 * v);
            let (da, db) = similarity_backward(feats.index_axis(Axis(0), i), feats.index_axis(Axis(0), n + i), d_s.view())?;
            d_feats.index_axis_mut(Axis(0), i).assign(&da);
            d_feats.index_axis_mut(Axis(0), n + i).assign(&db);
        }
        nets.dmnet.backward(&d_feats);
        adam_step(&mut adam, &mut nets.dmnet.params_mut(), lr);
        steps += 1;
        metrics.simple(steps, epoch, loss, lr)?;
        Ok(loss)
    })
}

fn train_joint(
    ctx: &TrainContext<'_>,
    clips: &[VideoClip],
    nets: &mut Networks,
    rng: &mut ChaCha8Rng,
    metrics: &mut Metrics,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(ctx.train.beta1, ctx.train.beta2);
    let mut steps = 0;
    run_epochs(ctx, Stage::Joint, clips.len(), rng, |batch, lr, _epoch, rng| {
        let mut samples = Vec::with_capacity(batch.len());
        for &ci in batch {
            let clip = &clips[ci];
            let t = sample_training_triplet(clip, rng)?;
            let view = View::draw(&ctx.train.augment, clip.height(), clip.width(), rng);
            samples.push(DdsSample {
                f1: view.frame(&clip.frames[t.f1]),
                f2: t.f2.map(|i| view.frame(&clip.frames[i])),
                f3: view.frame(&clip.frames[t.f3]),
                gt: view.label(&t.gt),
            });
        }
        let (out, tape) = dds_forward(nets, &samples, ctx.ablation, Mode::Train)?;
        dds_backward(nets, tape)?;
        let mut params = nets.flownet.params_mut();
        params.extend(nets.cfnet.params_mut());
        adam_step(&mut adam, &mut params, lr);
        steps += 1;
        metrics.joint(steps, &out, lr)?;
        Ok(out.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epe_reference() {
        let pred = Array4::from_shape_vec((1, 2, 1, 2), vec![3.0, 0.0, 4.0, 0.0]).unwrap();
        let target = Array4::zeros((1, 2, 1, 2));
        let (loss, grad) = endpoint_error(&pred, &target);
        assert!((loss - 2.5).abs() < 1e-12);
        assert!((grad[[0, 0, 0, 0]] - 0.3).abs() < 1e-6 && (grad[[0, 1, 0, 0]] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn epoch_order_covers_every_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut o = epoch_order(5, 3, &mut rng);
        o.sort();
        assert_eq!(o, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4]);
    }
}
