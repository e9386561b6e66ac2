//! Accuracy and cost measurement: confusion-matrix mIoU, accuracy per
//! propagation distance, the mean per-frame cost model, false-correction
//! counts, and report emission.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, VideoClip};
use crate::error::{ensure_shape, Result};
use crate::inference::{schedule_keyframes, segment_clip, DistortionSource};
use crate::networks::{
    describe_flops, layer_flops, CfNet, DmNet, FlopsReport, FlowNet, LayerFlops, LayerKind, Network, NetworkConfig, Networks,
    SegNet, SpecBuilder, FEATURE_STRIDE,
};
use crate::Error;

/// Dataset-wide confusion matrix; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { counts: Array2::zeros((num_classes, num_classes)) }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.nrows()
    }

    /// Adds every position whose ground truth is not ignored.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        ensure_shape!(pred.values.dim() == gt.values.dim(), "prediction {:?} vs label {:?}", pred.values.dim(), gt.values.dim());
        let k = self.num_classes();
        for (&p, &g) in pred.values.iter().zip(gt.values.iter()) {
            if g == gt.ignore_index || p == pred.ignore_index {
                continue;
            }
            let (g, p) = (g as usize, p as usize);
            if g >= k || p >= k {
                return Err(Error::InvalidArgument(format!("class {} outside {k} classes", g.max(p))));
            }
            self.counts[[g, p]] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.counts += &other.counts;
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Per-class IoU (`None` for classes absent from both prediction and
    /// ground truth) and their mean.
    pub fn miou(&self) -> Result<(f64, Vec<Option<f64>>)> {
        if self.total() == 0 {
            return Err(Error::InvalidArgument("no evaluated positions".into()));
        }
        let k = self.num_classes();
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.counts[[c, c]];
                let fn_ = self.counts.row(c).sum() - tp;
                let fp = self.counts.column(c).sum() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok((present.iter().sum::<f64>() / present.len() as f64, per_class))
    }
}

/// mIoU over a set of prediction/label pairs with one accumulated matrix.
pub fn miou(preds: &[LabelMap], gts: &[LabelMap], num_classes: usize) -> Result<(f64, Vec<Option<f64>>)> {
    ensure_shape!(preds.len() == gts.len(), "{} predictions for {} labels", preds.len(), gts.len());
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no maps to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (p, g) in preds.iter().zip(gts) {
        cm.add(p, g)?;
    }
    cm.miou()
}

/// Cost of a key frame and of a propagated frame, in FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_seg: f64,
    pub c_warp: f64,
}

impl CostModel {
    /// Average per-frame cost when every key frame is followed by `distance`
    /// propagated frames.
    pub fn mean_cost(&self, distance: usize) -> f64 {
        (self.c_seg + self.c_warp * distance as f64) / (distance as f64 + 1.0)
    }
}

/// Per-network and per-path FLOPs of the pipeline at one input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub input: [usize; 3],
    /// Reports summed into the key-frame cost.
    pub key: Vec<FlopsReport>,
    /// Reports summed into the propagated-frame cost.
    pub non_key: Vec<FlopsReport>,
    pub model: CostModel,
}

fn ops_report(name: &str, input: [usize; 3], builder: SpecBuilder) -> FlopsReport {
    let layers: Vec<LayerFlops> = builder
        .into_layers()
        .iter()
        .map(|l| LayerFlops { name: l.name.clone(), kind: l.kind, flops: layer_flops(l) })
        .collect();
    let total = layers.iter().map(|l| l.flops).sum();
    FlopsReport { network: name.into(), input, layers, total }
}

/// Key path: segmentation network with head, then upsampling of the class
/// scores. Propagated path: flow network, two warps, the distortion network
/// on both inputs, cosine similarity, correction network, fusion, head and
/// upsampling.
pub fn cost_breakdown(cfg: &NetworkConfig, h: usize, w: usize) -> Result<CostBreakdown> {
    let input = [3, h, w];
    let (fh, fw) = (h / FEATURE_STRIDE, w / FEATURE_STRIDE);
    let (c, k) = (cfg.feature_channels, cfg.num_classes);

    let segnet = describe_flops(&SegNet::new(cfg).spec(h, w))?;
    let mut key_ops = SpecBuilder::new("key-ops", k, fh, fw);
    key_ops.resize("score_upsample", h, w);
    let key = vec![segnet, ops_report("key-ops", input, key_ops)];

    let flownet = describe_flops(&FlowNet::new(cfg).spec(h, w))?;
    let dmnet = describe_flops(&DmNet::new(cfg).spec(h, w))?;
    let cfnet = describe_flops(&CfNet::new(cfg).spec(h, w))?;
    let mut ops = SpecBuilder::new("non-key-ops", 3, h, w);
    ops.op("frame_warp", LayerKind::Warp, 3);
    ops.set_shape([2, h, w]).resize("flow_downscale", fh, fw);
    ops.set_shape([c, fh, fw]).op("feature_warp", LayerKind::Warp, c);
    ops.set_shape([cfg.dmnet_channels, fh, fw]).op("cosine", LayerKind::Cosine, 1);
    ops.set_shape([c, fh, fw]).op("fusion", LayerKind::Fusion, c);
    ops.conv("head", k, 1, 1, 0);
    ops.resize("score_upsample", h, w);
    let dmnet_pair = FlopsReport {
        network: "dmnet-x2".into(),
        input,
        layers: dmnet.layers.iter().chain(dmnet.layers.iter()).cloned().collect(),
        total: 2 * dmnet.total,
    };
    let non_key = vec![flownet, dmnet_pair, cfnet, ops_report("non-key-ops", input, ops)];

    let sum = |r: &[FlopsReport]| r.iter().map(|r| r.total as f64).sum::<f64>();
    let model = CostModel { c_seg: sum(&key), c_warp: sum(&non_key) };
    Ok(CostBreakdown { input, key, non_key, model })
}

/// Points of a curve; `x` is strictly increasing for distance curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Accuracy per propagation distance for `distances`, from mIoU values keyed
/// by distance.
pub fn pda_curve(label: &str, miou_by_distance: &BTreeMap<usize, f64>, distances: std::ops::RangeInclusive<usize>) -> Result<CurveSeries> {
    let missing: Vec<usize> = distances.clone().filter(|d| !miou_by_distance.contains_key(d)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrerequisite(format!("{label}: no evaluation at distance(s) {missing:?}")));
    }
    Ok(CurveSeries { label: label.into(), points: distances.map(|d| (d as f64, miou_by_distance[&d])).collect() })
}

/// Replaces each distance with the mean per-frame cost, in GFLOPs.
pub fn cca_curve(pda: &CurveSeries, model: &CostModel) -> CurveSeries {
    let points = pda.points.iter().map(|&(d, y)| (model.mean_cost(d as usize) / 1e9, y)).collect();
    CurveSeries { label: pda.label.clone(), points }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioFlag {
    Defined,
    /// Neither kind of rectification happened.
    NoChange,
    /// Wrong rectifications without any right one.
    Unbounded,
}

/// Pixel counts comparing the propagated and the corrected prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FalseCorrectionStats {
    /// Correct when propagated, wrong after correction.
    pub wrong_rectified: u64,
    /// Wrong when propagated, correct after correction.
    pub right_rectified: u64,
    pub unchanged_correct: u64,
    pub unchanged_wrong: u64,
}

impl FalseCorrectionStats {
    pub fn total(&self) -> u64 {
        self.wrong_rectified + self.right_rectified + self.unchanged_correct + self.unchanged_wrong
    }

    pub fn merge(&mut self, o: &FalseCorrectionStats) {
        self.wrong_rectified += o.wrong_rectified;
        self.right_rectified += o.right_rectified;
        self.unchanged_correct += o.unchanged_correct;
        self.unchanged_wrong += o.unchanged_wrong;
    }

    /// `wrong / right`; infinite when only wrong rectifications occurred and
    /// 0 when none occurred.
    pub fn ratio(&self) -> (f64, RatioFlag) {
        match (self.wrong_rectified, self.right_rectified) {
            (0, 0) => (0.0, RatioFlag::NoChange),
            (_, 0) => (f64::INFINITY, RatioFlag::Unbounded),
            (w, r) => (w as f64 / r as f64, RatioFlag::Defined),
        }
    }
}

/// Counts over the non-ignored pixels of `gt`. Rectified pixels are those
/// whose correctness differs between the two predictions.
pub fn false_correction_stats(seg_p: &LabelMap, seg_c: &LabelMap, gt: &LabelMap) -> Result<FalseCorrectionStats> {
    ensure_shape!(
        seg_p.values.dim() == gt.values.dim() && seg_c.values.dim() == gt.values.dim(),
        "maps differ in size"
    );
    let mut s = FalseCorrectionStats::default();
    for ((&p, &c), &g) in seg_p.values.iter().zip(seg_c.values.iter()).zip(gt.values.iter()) {
        if g == gt.ignore_index {
            continue;
        }
        match (p == g, c == g) {
            (true, false) => s.wrong_rectified += 1,
            (false, true) => s.right_rectified += 1,
            (true, true) => s.unchanged_correct += 1,
            (false, false) => s.unchanged_wrong += 1,
        }
    }
    Ok(s)
}

/// Accumulated results of one pipeline configuration over a set of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEvaluation {
    /// Confusion matrix of the final prediction per distance (0 = key frames).
    pub corrected: BTreeMap<usize, ConfusionMatrix>,
    /// Confusion matrix of the propagated prediction per distance.
    pub propagated: BTreeMap<usize, ConfusionMatrix>,
    pub false_correction: FalseCorrectionStats,
    /// Pixels where the final prediction differs from the propagated one
    /// although the latter was correct and the distortion weight was 0.
    pub flipped_at_zero_weight: u64,
    /// Feature-resolution cells whose propagated class matched the
    /// nearest-downsampled label and changed after correction.
    pub flipped_correct_cells: u64,
}

impl DistanceEvaluation {
    pub fn new() -> Self {
        Self {
            corrected: BTreeMap::new(),
            propagated: BTreeMap::new(),
            false_correction: FalseCorrectionStats::default(),
            flipped_at_zero_weight: 0,
            flipped_correct_cells: 0,
        }
    }

    pub fn merge(&mut self, other: &DistanceEvaluation) {
        for (maps, theirs) in [(&mut self.corrected, &other.corrected), (&mut self.propagated, &other.propagated)] {
            for (d, cm) in theirs {
                maps.entry(*d).or_insert_with(|| ConfusionMatrix::new(cm.num_classes())).merge(cm);
            }
        }
        self.false_correction.merge(&other.false_correction);
        self.flipped_at_zero_weight += other.flipped_at_zero_weight;
        self.flipped_correct_cells += other.flipped_correct_cells;
    }

    /// mIoU of the final prediction per distance.
    pub fn miou_by_distance(&self) -> Result<BTreeMap<usize, f64>> {
        self.corrected.iter().map(|(&d, cm)| Ok((d, cm.miou()?.0))).collect()
    }

    /// Mean of the per-distance mIoU over `distances`.
    pub fn mean_miou(&self, distances: std::ops::RangeInclusive<usize>) -> Result<f64> {
        let by = self.miou_by_distance()?;
        let curve = pda_curve("mean", &by, distances)?;
        Ok(curve.points.iter().map(|p| p.1).sum::<f64>() / curve.points.len() as f64)
    }
}

impl Default for DistanceEvaluation {
    fn default() -> Self {
        Self::new()
    }
}

/// Runs the pipeline on every clip with key frames every `max_distance + 1`
/// frames, so each interval covers the distances `1..=max_distance`, and
/// accumulates every labeled frame by its distance. With `inspect` the
/// per-frame intermediates feed the flip counters.
pub fn evaluate_distances(
    nets: &mut Networks,
    clips: &[VideoClip],
    source: DistortionSource,
    max_distance: usize,
    inspect: bool,
) -> Result<DistanceEvaluation> {
    let k = nets.config.num_classes;
    let mut eval = DistanceEvaluation::new();
    for clip in clips {
        let schedule = schedule_keyframes(clip.len(), max_distance + 1)?;
        let results = segment_clip(nets, clip, &schedule, source, inspect)?;
        for r in results {
            let Some(gt) = clip.labels.get(&r.index) else { continue };
            eval.corrected.entry(r.distance).or_insert_with(|| ConfusionMatrix::new(k)).add(&r.prediction, gt)?;
            if let Some(p) = &r.propagated {
                eval.propagated.entry(r.distance).or_insert_with(|| ConfusionMatrix::new(k)).add(p, gt)?;
                eval.false_correction.merge(&false_correction_stats(p, &r.prediction, gt)?);
                if let Some(i) = &r.intermediates {
                    eval.flipped_at_zero_weight += flips_at_zero_weight(p, &r.prediction, gt, &i.distortion);
                    let small = gt.downsample_nearest(FEATURE_STRIDE)?;
                    eval.flipped_correct_cells += ndarray::Zip::from(&small.values)
                        .and(&i.propagated_argmax)
                        .and(&i.corrected_argmax)
                        .fold(0, |n, &g, &a, &b| n + u64::from(g != small.ignore_index && a == g && b != a));
                }
            }
        }
    }
    Ok(eval)
}

/// Correct propagated pixels that changed class where the feature-resolution
/// weight covering them is exactly 0.
fn flips_at_zero_weight(seg_p: &LabelMap, seg_c: &LabelMap, gt: &LabelMap, m: &Array2<f32>) -> u64 {
    let (mh, mw) = m.dim();
    let (h, w) = gt.values.dim();
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            let g = gt.values[[y, x]];
            if g == gt.ignore_index || seg_p.values[[y, x]] != g || seg_c.values[[y, x]] == g {
                continue;
            }
            // Bilinear support of the upsampled scores at this pixel.
            let fy = ((y as f64 + 0.5) * mh as f64 / h as f64 - 0.5).clamp(0.0, (mh - 1) as f64);
            let fx = ((x as f64 + 0.5) * mw as f64 / w as f64 - 0.5).clamp(0.0, (mw - 1) as f64);
            let ys = [fy.floor() as usize, (fy.ceil() as usize).min(mh - 1)];
            let xs = [fx.floor() as usize, (fx.ceil() as usize).min(mw - 1)];
            if ys.iter().all(|&yy| xs.iter().all(|&xx| m[[yy, xx]] == 0.0)) {
                n += 1;
            }
        }
    }
    n
}

/// `distance,miou,iou_0..iou_{K-1},variant` rows for each labeled evaluation.
pub fn write_pda_csv(path: &Path, runs: &[(&str, &DistanceEvaluation)], distances: std::ops::RangeInclusive<usize>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = runs.first().and_then(|(_, e)| e.corrected.values().next()).map_or(0, |cm| cm.num_classes());
    let mut header = vec!["distance".to_string(), "miou".to_string()];
    header.extend((0..k).map(|c| format!("iou_{c}")));
    header.push("variant".into());
    w.write_record(&header)?;
    for (label, eval) in runs {
        for d in distances.clone() {
            let cm = eval
                .corrected
                .get(&d)
                .ok_or_else(|| Error::MissingPrerequisite(format!("{label}: no evaluation at distance {d}")))?;
            let (m, per) = cm.miou()?;
            let mut row = vec![d.to_string(), m.to_string()];
            row.extend(per.iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
            row.push(label.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// `distance,mean_gflops,miou,variant` rows.
pub fn write_cca_csv(path: &Path, model: &CostModel, curves: &[CurveSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["distance", "mean_gflops", "miou", "variant"])?;
    for c in curves {
        for &(d, y) in &c.points {
            let x = model.mean_cost(d as usize) / 1e9;
            w.write_record([(d as usize).to_string(), x.to_string(), y.to_string(), c.label.clone()])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_false_correction_csv(path: &Path, runs: &[(&str, FalseCorrectionStats)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant",
        "wrong_rectified",
        "right_rectified",
        "unchanged_correct",
        "unchanged_wrong",
        "ratio",
        "ratio_flag",
    ])?;
    for (label, s) in runs {
        let (ratio, flag) = s.ratio();
        let flag = serde_json::to_value(flag)?.as_str().unwrap_or_default().to_string();
        w.write_record([
            label.to_string(),
            s.wrong_rectified.to_string(),
            s.right_rectified.to_string(),
            s.unchanged_correct.to_string(),
            s.unchanged_wrong.to_string(),
            ratio.to_string(),
            flag,
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = std::fs::File::create(path).map_err(Error::io(path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}

/// Reads `x,y` pairs of every variant from a curve CSV written by this
/// module, using the named columns.
pub fn read_curves(path: &Path, x: &str, y: &str) -> Result<Vec<CurveSeries>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::DataIntegrity(format!("{} has no column {name}", path.display())))
    };
    let (xi, yi, vi) = (col(x)?, col(y)?, col("variant")?);
    let mut curves: Vec<CurveSeries> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|e| Error::DataIntegrity(format!("{}: {e}", path.display())))
        };
        let point = (parse(xi)?, parse(yi)?);
        match curves.iter_mut().find(|c| c.label == rec[vi]) {
            Some(c) => c.points.push(point),
            None => curves.push(CurveSeries { label: rec[vi].to_string(), points: vec![point] }),
        }
    }
    Ok(curves)
}

/// Line chart of several curves as SVG.
pub fn plot_curves(path: &Path, title: &str, x_label: &str, y_label: &str, curves: &[CurveSeries]) -> Result<()> {
    use plotters::prelude::*;
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", path.display()));
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let pad = |a: f64, b: f64| if b > a { (b - a) * 0.05 } else { 0.5 };
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
        .map_err(|e| plot_err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| plot_err(&e))?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(c.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(c.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[u8], h: usize, w: usize) -> LabelMap {
        LabelMap::new(Array2::from_shape_vec((h, w), v.to_vec()).unwrap(), 2, 255).unwrap()
    }

    #[test]
    fn worked_miou() {
        let (m, per) = miou(&[map(&[0, 0, 1, 1], 2, 2)], &[map(&[0, 1, 1, 1], 2, 2)], 2).unwrap();
        assert!((m - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(per, vec![Some(0.5), Some(2.0 / 3.0)]);
        let p = map(&[0, 0, 0, 0], 2, 2);
        assert_eq!(miou(&[p.clone()], &[p], 2).unwrap().0, 1.0);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let gt = map(&[255; 4], 2, 2);
        assert!(miou(&[map(&[0; 4], 2, 2)], &[gt], 2).is_err());
        assert!(miou(&[], &[], 2).is_err());
    }

    #[test]
    fn eq8_examples() {
        let m = CostModel { c_seg: 826.378, c_warp: 212.910 };
        assert_eq!(m.mean_cost(0), m.c_seg);
        assert!((m.mean_cost(5) - 315.155).abs() < 1e-3);
        let c = cca_curve(&CurveSeries { label: "x".into(), points: vec![(5.0, 75.37)] }, &CostModel { c_seg: 826.378e9, c_warp: 212.910e9 });
        assert!((c.points[0].0 - 315.155).abs() < 1e-3 && c.points[0].1 == 75.37);
    }

    #[test]
    fn worked_false_correction() {
        let gt = map(&[0, 0, 1, 1], 2, 2);
        let p = map(&[0, 1, 1, 1], 2, 2);
        let c = map(&[1, 1, 0, 1], 2, 2);
        let s = false_correction_stats(&p, &c, &gt).unwrap();
        assert_eq!((s.wrong_rectified, s.right_rectified), (2, 0));
        assert_eq!(s.ratio(), (f64::INFINITY, RatioFlag::Unbounded));
        assert_eq!(s.total(), 4);
        let same = false_correction_stats(&p, &p, &gt).unwrap();
        assert_eq!(same.ratio(), (0.0, RatioFlag::NoChange));
        let fixed = false_correction_stats(&p, &gt, &gt).unwrap();
        assert_eq!((fixed.wrong_rectified, fixed.right_rectified, fixed.ratio().0), (0, 1, 0.0));
    }

    #[test]
    fn missing_distances_are_listed() {
        let by: BTreeMap<usize, f64> = [(1, 0.5), (3, 0.4)].into_iter().collect();
        let err = pda_curve("full", &by, 1..=4).unwrap_err().to_string();
        assert!(err.contains("[2, 4]"), "{err}");
    }

    #[test]
    fn pipeline_costs_scale_with_area() {
        let cfg = NetworkConfig::default();
        let a = cost_breakdown(&cfg, 64, 64).unwrap();
        let b = cost_breakdown(&cfg, 128, 128).unwrap();
        assert_eq!(b.model.c_seg, 4.0 * a.model.c_seg);
        assert_eq!(b.model.c_warp, 4.0 * a.model.c_warp);
        assert!(a.model.c_warp < a.model.c_seg);
    }
}
