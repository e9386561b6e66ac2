//! Acceptance gate: one pass/fail line per criterion.
//!
//! Criteria 1 to 5 check formulas and oracles and run in seconds. Criteria
//! 6 to 10 share one desk-scale pipeline run (synthesize, four training
//! stages, evaluation) in a temporary directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dvss::config::RunConfig;
use dvss::correction::{dgfl_loss, fuse_features, fuse_features_backward};
use dvss::data::{triplet_from, Dataset, LabelMap, Split};
use dvss::distortion::{average_precision, distortion_from_similarity, predict_distortion, similarity_map};
use dvss::evaluation::{miou, ConfusionMatrix, CostModel};
use dvss::experiment;
use dvss::inference::{schedule_keyframes, segment_clip, segment_frame, DistortionSource};
use dvss::networks::{layer_flops, Checkpoint, LayerKind, LayerSpec, Network, NetworkConfig, Networks, Stage};
use dvss::propagation::{warp_bilinear, warp_bilinear_backward, FlowField};
use dvss::training::{
    correction_loss, dds_backward, dds_forward, distortion_targets, frame_loss, propagation_loss, Ablation, DdsSample,
    LossBundle,
};
use dvss_nn::{Adam, Mode, ParamSet};

type Check = anyhow::Result<(bool, String)>;

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, name: &str, outcome: Check| {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        all &= ok;
        println!("criterion {n} ({name}): {}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    report(1, "warp oracle", warp_oracle());
    report(2, "gradient suite", gradient_suite());
    report(3, "formula exactness", formula_exactness());
    report(4, "FLOPs ledger", flops_ledger());
    report(5, "mIoU oracle", miou_oracle());

    let started = Instant::now();
    match Pipeline::run() {
        Ok(p) => {
            eprintln!("pipeline finished in {:.0} s", started.elapsed().as_secs_f64());
            report(6, "oracle no-harm", p.oracle_no_harm());
            report(7, "end-to-end ablation", p.ablation_gap());
            report(8, "false-correction direction", p.false_correction());
            report(9, "staging contracts", p.staging_contracts());
            report(10, "DMNet sanity", p.dmnet_sanity());
        }
        Err(e) => {
            for (n, name) in [
                (6, "oracle no-harm"),
                (7, "end-to-end ablation"),
                (8, "false-correction direction"),
                (9, "staging contracts"),
                (10, "DMNet sanity"),
            ] {
                report(n, name, Err(anyhow::anyhow!("pipeline failed: {e:#}")));
            }
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Criterion 1

/// Bilinear sample of `src` at `(x + u, y + v)` from the four surrounding
/// pixels, zero outside the image.
fn brute_force_warp(src: &Array3<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Array3<f64> {
    let (c, h, w) = src.dim();
    let px = |ch: usize, yy: i64, xx: i64| {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            src[[ch, yy as usize, xx as usize]]
        }
    };
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let sx = x as f64 + u[[y, x]];
        let sy = y as f64 + v[[y, x]];
        let (x0, y0) = (sx.floor(), sy.floor());
        let (ax, ay) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        px(ch, y0, x0) * (1.0 - ax) * (1.0 - ay)
            + px(ch, y0, x0 + 1) * ax * (1.0 - ay)
            + px(ch, y0 + 1, x0) * (1.0 - ax) * ay
            + px(ch, y0 + 1, x0 + 1) * ax * ay
    })
}

fn warp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let (c, h, w) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=16));
        let src = Array3::from_shape_fn((c, h, w), |_| rng.random_range(-2.0..2.0));
        // Mostly in-image displacements, some far outside, some integral.
        let reach = if trial % 10 == 0 { 20.0 } else { 4.0 };
        let integral = trial % 7 == 0;
        let mut draw = || {
            let d: f64 = rng.random_range(-reach..reach);
            if integral {
                d.round()
            } else {
                d
            }
        };
        let u = Array2::from_shape_fn((h, w), |_| draw());
        let v = Array2::from_shape_fn((h, w), |_| draw());
        let flow = FlowField::from_uv(u.clone(), v.clone())?;
        let got = warp_bilinear(src.view(), &flow)?;
        let want = brute_force_warp(&src, &u, &v);
        worst = worst.max((&got - &want).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    Ok((worst <= 1e-6, format!("1000 pairs, max abs error {worst:.2e}")))
}

// ---------------------------------------------------------------------------
// Criterion 2

const FD_STEP: f64 = 1e-4;

/// Largest relative error between analytic and central-difference gradients
/// of `f` at `x`.
fn fd_check<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>, analytic: &ndarray::Array<f64, D>, f: impl Fn(&ndarray::Array<f64, D>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for (i, a) in analytic.iter().enumerate() {
        let orig = x.as_slice_memory_order().expect("contiguous")[i];
        probe.as_slice_memory_order_mut().expect("contiguous")[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.as_slice_memory_order_mut().expect("contiguous")[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.as_slice_memory_order_mut().expect("contiguous")[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}

fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, k: u8) -> LabelMap {
    let values = Array2::from_shape_fn((h, w), |_| if rng.random_bool(0.1) { 255 } else { rng.random_range(0..k) });
    LabelMap::new(values, k, 255).expect("valid labels")
}

fn gradient_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut results: Vec<(&str, f64)> = Vec::new();

    // Warp, sampling strictly inside pixel cells.
    let src = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(-1.0..1.0));
    let offset = |rng: &mut ChaCha8Rng| rng.random_range(-3i32..3) as f64 + rng.random_range(0.1..0.9) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let flow = Array3::from_shape_fn((2, 8, 8), |_| offset(&mut rng));
    let r = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(-1.0..1.0));
    let objective = |s: &Array3<f64>, f: &Array3<f64>| {
        let out = warp_bilinear(s.view(), &FlowField::new(f.clone()).unwrap()).unwrap();
        (&out * &r).sum()
    };
    let (d_src, d_flow) = warp_bilinear_backward(src.view(), &FlowField::new(flow.clone())?, r.view())?;
    results.push(("warp/src", fd_check(&src, &d_src, |s| objective(s, &flow))));
    results.push(("warp/flow", fd_check(&flow, d_flow.as_array(), |f| objective(&src, f))));

    // Fusion.
    let f_p = Array4::from_shape_fn((1, 4, 8, 8), |_| rng.random_range(-1.0..1.0));
    let f_cc = Array4::from_shape_fn((1, 4, 8, 8), |_| rng.random_range(-1.0..1.0));
    let m = Array3::from_shape_fn((1, 8, 8), |_| rng.random_range(0.05..0.95));
    let r4 = Array4::from_shape_fn((1, 4, 8, 8), |_| rng.random_range(-1.0..1.0));
    let (d_p, d_cc) = fuse_features_backward(r4.view(), m.view())?;
    let fuse = |p: &Array4<f64>, cc: &Array4<f64>| (&fuse_features(p.view(), cc.view(), m.view()).unwrap() * &r4).sum();
    results.push(("fuse/f_P", fd_check(&f_p, &d_p, |p| fuse(p, &f_cc))));
    results.push(("fuse/f_CC", fd_check(&f_cc, &d_cc, |cc| fuse(&f_p, cc))));

    // Losses on 8x8 logits against 16x16 labels, so the upsampling is exercised.
    let logits = Array4::from_shape_fn((1, 4, 8, 8), |_| rng.random_range(-2.0..2.0));
    let labels = random_labels(&mut rng, 16, 16, 4);
    let l = [&labels];
    let g = dgfl_loss(logits.view(), &l, m.view())?;
    results.push(("dgfl", fd_check(&logits, &g.d_logits, |x| dgfl_loss(x.view(), &l, m.view()).unwrap().loss)));
    let g = propagation_loss(logits.view(), &l)?;
    results.push(("propagation loss", fd_check(&logits, &g.d_logits, |x| propagation_loss(x.view(), &l).unwrap().loss)));
    let g = correction_loss(logits.view(), &l)?;
    results.push(("correction loss", fd_check(&logits, &g.d_logits, |x| correction_loss(x.view(), &l).unwrap().loss)));

    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((worst <= 1e-4, format!("max relative error {worst:.1e} ({detail})")))
}

// ---------------------------------------------------------------------------
// Criterion 3

fn formula_exactness() -> Check {
    let mut failures = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let m = distortion_from_similarity(&ndarray::array![[1.0f64, -1.0, 0.0]]);
    expect(m == ndarray::array![[0.0, 1.0, 0.5]], "S -> M trivial cases");
    let a = ndarray::array![[[1.0f64]], [[0.0]]];
    let b = ndarray::array![[[0.0f64]], [[1.0]]];
    expect(similarity_map(a.view(), b.view())?[[0, 0]] == 0.0, "orthogonal features have S = 0");
    let neg = a.mapv(|v| -v);
    expect((similarity_map(a.view(), neg.view())?[[0, 0]] + 1.0).abs() < 1e-7, "opposite features have S = -1");
    expect((similarity_map(a.view(), a.view())?[[0, 0]] - 1.0).abs() < 1e-7, "identical features have S = 1");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f_p = Array4::from_shape_fn((1, 5, 4, 4), |_| rng.random_range(-3.0f32..3.0));
    let f_cc = Array4::from_shape_fn((1, 5, 4, 4), |_| rng.random_range(-3.0f32..3.0));
    let zeros = Array3::zeros((1, 4, 4));
    let ones = Array3::ones((1, 4, 4));
    expect(fuse_features(f_p.view(), f_cc.view(), zeros.view())? == f_p, "M = 0 returns f_P bit-exactly");
    expect(fuse_features(f_p.view(), f_cc.view(), ones.view())? == f_cc, "M = 1 returns f_CC bit-exactly");
    let two = Array4::from_elem((1, 1, 1, 1), 2.0f32);
    let six = Array4::from_elem((1, 1, 1, 1), 6.0f32);
    expect(fuse_features(two.view(), six.view(), Array3::from_elem((1, 1, 1), 0.25f32).view())?[[0, 0, 0, 0]] == 3.0, "fusion at M = 0.25");

    let identity = (0..1000).all(|_| {
        let x: f64 = rng.random_range(0.0..10.0);
        let (p, c, d) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let mean = LossBundle::mean(&[LossBundle::new(p, c, d), LossBundle::new(d, p, c)]).expect("non-empty");
        frame_loss(x, x, x) == x
            && LossBundle::new(p, c, d).total == frame_loss(p, c, d)
            && mean.total == frame_loss(mean.propagation, mean.correction, mean.dgfl)
    });
    expect(identity, "frame-loss mean identity on random terms and batch means");
    expect((frame_loss(0.3, 0.6, 0.9) - 0.6).abs() <= 1e-15, "frame loss of (0.3, 0.6, 0.9)");

    let paper = CostModel { c_seg: 826.378, c_warp: 212.910 };
    expect(paper.mean_cost(0) == paper.c_seg, "mean cost at distance 0 is the key-frame cost");
    let at5 = paper.mean_cost(5);
    expect((at5 - 315.155).abs() <= 1e-3, "mean cost at distance 5");
    let desk = dvss::evaluation::cost_breakdown(&NetworkConfig::default(), 64, 64)?.model;
    expect(desk.mean_cost(0) == desk.c_seg, "desk mean cost at distance 0");

    if failures.is_empty() {
        Ok((true, format!("all cases exact; C_mean(5) = {at5:.3} GFLOPs")))
    } else {
        Ok((false, failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// Criterion 4

fn layer(kind: LayerKind, c_in: usize, c_out: usize, k: usize, hw_in: usize, hw_out: usize) -> LayerSpec {
    LayerSpec {
        name: "probe".into(),
        kind,
        c_in,
        c_out,
        kernel: [k, k],
        stride: 1,
        pad: 1,
        h_in: hw_in,
        w_in: hw_in,
        h_out: hw_out,
        w_out: hw_out,
    }
}

fn network_totals(h: usize, w: usize) -> anyhow::Result<BTreeMap<String, u64>> {
    let cfg = NetworkConfig::default();
    let nets = Networks::initialized(&cfg, 0);
    let total = |spec: dvss::networks::NetworkSpec| dvss::networks::describe_flops(&spec).map(|r| r.total);
    Ok(BTreeMap::from([
        ("segnet".to_string(), total(nets.segnet.spec(h, w))?),
        ("flownet".to_string(), total(nets.flownet.spec(h, w))?),
        ("dmnet".to_string(), total(nets.dmnet.spec(h, w))?),
        ("cfnet".to_string(), total(nets.cfnet.spec(h, w))?),
    ]))
}

fn flops_ledger() -> Check {
    let hand = [
        layer_flops(&layer(LayerKind::Convolution, 3, 4, 3, 2, 2)),
        layer_flops(&layer(LayerKind::BilinearUpsampling, 2, 2, 1, 2, 4)),
        layer_flops(&layer(LayerKind::BatchNormalization, 3, 3, 1, 2, 2)),
        layer_flops(&layer(LayerKind::Activation, 3, 3, 1, 2, 2)),
    ];
    let hand_ok = hand == [896, 352, 24, 12];

    let fixture: BTreeMap<String, BTreeMap<String, u64>> = serde_json::from_str(include_str!("fixtures/flops_default.json"))?;
    let small = network_totals(64, 64)?;
    let large = network_totals(128, 128)?;
    let fixture_ok = fixture.get("64x64") == Some(&small) && fixture.get("128x128") == Some(&large);
    let scale_ok = small.iter().all(|(k, v)| large[k] == 4 * v);
    let cfg = NetworkConfig::default();
    let a = dvss::evaluation::cost_breakdown(&cfg, 64, 64)?.model;
    let b = dvss::evaluation::cost_breakdown(&cfg, 128, 128)?.model;
    let model_ok = b.c_seg == 4.0 * a.c_seg && b.c_warp == 4.0 * a.c_warp;

    Ok((
        hand_ok && fixture_ok && scale_ok && model_ok,
        format!(
            "hand cases {hand:?}; totals at 64x64 {small:?} {}; x4 on doubled size: networks {scale_ok}, cost model {model_ok}",
            if fixture_ok { "match the fixture" } else { "differ from the fixture" }
        ),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5

/// Mean IoU from a direct per-class tally of true positives, false
/// positives and false negatives.
fn brute_force_miou(pairs: &[(LabelMap, LabelMap)], k: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    for (pred, gt) in pairs {
        for (&p, &g) in pred.values.iter().zip(gt.values.iter()) {
            if g == gt.ignore_index {
                continue;
            }
            if p == g {
                tp[g as usize] += 1;
            } else {
                fp[p as usize] += 1;
                fn_[g as usize] += 1;
            }
        }
    }
    let ious: Vec<f64> = (0..k).filter(|&c| tp[c] + fp[c] + fn_[c] > 0).map(|c| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64).collect();
    ious.iter().sum::<f64>() / ious.len() as f64
}

fn miou_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 4u8;
    let mut pairs = Vec::new();
    let mut mismatches = 0;
    for _ in 0..100 {
        // Some maps use fewer classes so absent-class handling is exercised.
        let used = rng.random_range(2..=k);
        let pred = LabelMap::new(Array2::from_shape_fn((16, 16), |_| rng.random_range(0..used)), k, 255)?;
        let gt = LabelMap::new(
            Array2::from_shape_fn((16, 16), |_| if rng.random_bool(0.15) { 255 } else { rng.random_range(0..used) }),
            k,
            255,
        )?;
        let pair = (pred, gt);
        let (got, _) = miou(std::slice::from_ref(&pair.0), std::slice::from_ref(&pair.1), k as usize)?;
        if got != brute_force_miou(std::slice::from_ref(&pair), k as usize) {
            mismatches += 1;
        }
        pairs.push(pair);
    }
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
    let (pooled, _) = miou(&preds, &gts, k as usize)?;
    let pooled_ok = pooled == brute_force_miou(&pairs, k as usize);

    let pred = LabelMap::new(ndarray::array![[0, 0], [1, 1]], 2, 255)?;
    let gt = LabelMap::new(ndarray::array![[0, 1], [1, 1]], 2, 255)?;
    let mut cm = ConfusionMatrix::new(2);
    cm.add(&pred, &gt)?;
    let worked = cm.miou()?.0;
    let worked_ok = (worked - 7.0 / 12.0).abs() <= f64::EPSILON;

    let ignored = LabelMap::new(Array2::from_elem((2, 2), 255), 2, 255)?;
    let empty_is_error = miou(std::slice::from_ref(&pred), std::slice::from_ref(&ignored), 2).is_err();

    Ok((
        mismatches == 0 && pooled_ok && worked_ok && empty_is_error,
        format!(
            "{} of 100 pairs differ, pooled equal {pooled_ok}, worked example {worked} (7/12 {worked_ok}), all-ignored is an error {empty_is_error}",
            mismatches
        ),
    ))
}

// ---------------------------------------------------------------------------
// Criteria 6 to 10

struct Pipeline {
    _tmp: tempfile::TempDir,
    cfg: RunConfig,
    pda: Vec<(String, dvss::evaluation::DistanceEvaluation)>,
    false_correction: Vec<(String, dvss::evaluation::DistanceEvaluation)>,
    upper_bound: Vec<(experiment::UpperBoundRow, dvss::evaluation::DistanceEvaluation)>,
}

fn desk_config(root: &Path) -> anyhow::Result<RunConfig> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let mut cfg = RunConfig::load(&path)?;
    cfg.dataset = root.join("data");
    cfg.output = root.join("runs");
    cfg.jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Ok(cfg)
}

impl Pipeline {
    fn run() -> anyhow::Result<Self> {
        let tmp = tempfile::tempdir()?;
        let cfg = desk_config(tmp.path())?;
        experiment::synthesize(&cfg, false)?;
        for stage in Stage::ALL {
            let t = Instant::now();
            let report = experiment::train(&cfg, stage, Ablation::FULL, false)?;
            eprintln!("trained {} in {:.0} s, final loss {:.4}", stage.as_str(), t.elapsed().as_secs_f64(), report.final_loss(20));
        }
        let pda = experiment::eval_pda(&cfg, Ablation::FULL)?;
        let false_correction = experiment::eval_false_correction(&cfg, Ablation::FULL)?;
        let upper_bound = experiment::eval_upper_bound(&cfg, Ablation::FULL)?;
        Ok(Self { _tmp: tmp, cfg, pda, false_correction, upper_bound })
    }

    fn distances(&self) -> std::ops::RangeInclusive<usize> {
        self.cfg.evaluation.min_distance..=self.cfg.evaluation.max_distance
    }

    fn pda_of(&self, label: &str) -> anyhow::Result<&dvss::evaluation::DistanceEvaluation> {
        self.pda.iter().find(|(l, _)| l == label).map(|p| &p.1).ok_or_else(|| anyhow::anyhow!("no {label} evaluation"))
    }

    /// Networks as they stand after the dmnet stage, before joint training.
    fn staged_networks(&self) -> anyhow::Result<Networks> {
        let root = self.cfg.checkpoints();
        let mut nets = Networks::initialized(&self.cfg.network, self.cfg.seed);
        Checkpoint::open(&root, Stage::Segnet, &self.cfg.network)?.load(&mut nets.segnet)?;
        Checkpoint::open(&root, Stage::FlowPretrain, &self.cfg.network)?.load(&mut nets.flownet)?;
        Checkpoint::open(&root, Stage::Dmnet, &self.cfg.network)?.load(&mut nets.dmnet)?;
        Ok(nets)
    }

    fn oracle_no_harm(&self) -> Check {
        let row = |label: &str| {
            self.upper_bound.iter().find(|(r, _)| r.variant == label).ok_or_else(|| anyhow::anyhow!("no {label} row"))
        };
        let (oracle, oracle_eval) = row(experiment::ORACLE)?;
        let (predicted, _) = row(experiment::CORRECTED)?;
        let no_flip = oracle.flipped_correct_cells == 0 && oracle.flipped_at_zero_weight == 0;
        let ordered = oracle.mean_miou >= predicted.mean_miou;
        Ok((
            no_flip && ordered,
            format!(
                "oracle flips: {} correct feature cells, {} correct pixels at zero weight; full-resolution right-to-wrong pixels {} \
                 (next to corrected cells); mean mIoU oracle {:.4} vs predicted {:.4}",
                oracle.flipped_correct_cells,
                oracle.flipped_at_zero_weight,
                oracle_eval.false_correction.wrong_rectified,
                oracle.mean_miou,
                predicted.mean_miou
            ),
        ))
    }

    fn ablation_gap(&self) -> Check {
        let corrected = self.pda_of(experiment::CORRECTED)?;
        let propagated = self.pda_of(experiment::PROPAGATION_ONLY)?;
        let (a, b) = (corrected.mean_miou(self.distances())?, propagated.mean_miou(self.distances())?);
        let key = corrected.corrected.get(&0).map(|cm| cm.miou().map(|m| m.0)).transpose()?;
        let gap = 100.0 * (a - b);
        Ok((
            gap >= 2.0,
            format!(
                "mean mIoU over distances {:?}: corrected {:.4}, propagation-only {:.4}, gap {gap:.2} points; key-frame mIoU {}",
                self.distances(),
                a,
                b,
                key.map_or("n/a".into(), |k| format!("{k:.4}"))
            ),
        ))
    }

    fn false_correction(&self) -> Check {
        let stats = |label: &str| {
            self.false_correction
                .iter()
                .find(|(l, _)| l == label)
                .map(|p| p.1.false_correction)
                .ok_or_else(|| anyhow::anyhow!("no {label} evaluation"))
        };
        let (full, naive) = (stats(experiment::CORRECTED)?, stats(experiment::NAIVE_FUSION)?);
        let (rf, ff) = full.ratio();
        let (rn, fnv) = naive.ratio();
        Ok((
            rf <= rn,
            format!(
                "wrong/right: corrected {}/{} = {rf:.3} ({ff:?}), naive fusion {}/{} = {rn:.3} ({fnv:?})",
                full.wrong_rectified, full.right_rectified, naive.wrong_rectified, naive.right_rectified
            ),
        ))
    }

    fn staging_contracts(&self) -> Check {
        let root = self.cfg.checkpoints();
        let net = &self.cfg.network;
        let joint = Checkpoint::open(&root, Stage::Joint, net)?;
        let mut frozen = true;
        for (stage, name) in [(Stage::Segnet, "segnet"), (Stage::Dmnet, "dmnet")] {
            let before = std::fs::read(Checkpoint::open(&root, stage, net)?.params_path(name))?;
            frozen &= before == std::fs::read(joint.params_path(name))?;
        }

        let mut nets = experiment::load_networks(&self.cfg, Ablation::FULL)?;
        let mut differing = 0usize;
        let clips = experiment::validation_clips(&self.cfg)?;
        for clip in clips.iter().take(3) {
            let schedule = schedule_keyframes(clip.len(), 1)?;
            let results = segment_clip(&mut nets, clip, &schedule, DistortionSource::Predicted, false)?;
            for (r, frame) in results.iter().zip(&clip.frames) {
                let single = segment_frame(&mut nets, frame)?;
                differing += r.prediction.values.iter().zip(single.values.iter()).filter(|(a, b)| a != b).count();
            }
        }

        let (first, last) = self.overfit_single_batch()?;
        let overfits = last < first;
        Ok((
            frozen && differing == 0 && overfits,
            format!(
                "segnet and dmnet blobs identical {frozen}; interval-1 differing pixels {differing}; 200-step overfit {first:.4} -> {last:.4}"
            ),
        ))
    }

    /// Repeats joint-stage updates on one fixed batch from the training split.
    fn overfit_single_batch(&self) -> anyhow::Result<(f64, f64)> {
        let mut nets = self.staged_networks()?;
        let dataset = Dataset::open(&self.cfg.dataset)?;
        let entry = dataset.entries(Split::Train).next().ok_or_else(|| anyhow::anyhow!("no training clip"))?.clone();
        let clip = dataset.load(&entry, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let batch: Vec<DdsSample> = [(0, 6), (10, 19), (3, 9), (20, 25)]
            .into_iter()
            .map(|(f1, f3)| {
                let t = triplet_from(&clip, f1, f3, &mut rng)?;
                Ok(DdsSample {
                    f1: clip.frames[t.f1].clone(),
                    f2: t.f2.map(|i| clip.frames[i].clone()),
                    f3: clip.frames[t.f3].clone(),
                    gt: t.gt,
                })
            })
            .collect::<dvss::Result<_>>()?;
        let mut adam = Adam::new(0.9, 0.99);
        let lr = self.cfg.train.joint.learning_rate;
        let (mut first, mut last) = (None, 0.0);
        for _ in 0..200 {
            let (out, tape) = dds_forward(&mut nets, &batch, Ablation::FULL, Mode::Train)?;
            dds_backward(&mut nets, tape)?;
            let mut params = nets.flownet.params_mut();
            params.extend(nets.cfnet.params_mut());
            adam.step(&mut params, lr);
            first.get_or_insert(out.total);
            last = out.total;
        }
        Ok((first.unwrap_or(f64::NAN), last))
    }

    fn dmnet_sanity(&self) -> Check {
        let mut worst = 0.0f32;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut trained = self.staged_networks()?;
        for seed in 0..4u64 {
            let mut fresh = Networks::initialized(&self.cfg.network, 100 + seed);
            for _ in 0..2 {
                let f = Array4::from_shape_fn((2, 3, 64, 64), |_| rng.random_range(-1.0f32..1.0));
                for dm in [&mut fresh.dmnet, &mut trained.dmnet] {
                    let m = predict_distortion(dm, &f, &f)?;
                    worst = worst.max(m.iter().fold(0.0, |a, v| a.max(v.abs())));
                }
            }
        }

        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        for clip in experiment::validation_clips(&self.cfg)? {
            let max = self.cfg.evaluation.max_distance;
            let pairs: Vec<(usize, usize)> = (0..clip.len())
                .step_by(3)
                .enumerate()
                .map(|(i, t)| (t, t + 1 + i % max))
                .filter(|&(_, t2)| t2 < clip.len())
                .collect();
            let earlier: Vec<_> = pairs.iter().map(|&(a, _)| clip.frames[a].clone()).collect();
            let later: Vec<_> = pairs.iter().map(|&(_, b)| clip.frames[b].clone()).collect();
            let targets = distortion_targets(&mut trained, &earlier, &later)?;
            let m = predict_distortion(&mut trained.dmnet, &targets.propagated, &targets.current)?;
            for ((&score, &gt), &keep) in m.iter().zip(targets.gt.iter()).zip(targets.mask.iter()) {
                if keep {
                    scores.push(score as f64);
                    labels.push(gt > 0.5);
                }
            }
        }
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64;
        let ap = average_precision(&scores, &labels).ok_or_else(|| anyhow::anyhow!("no distorted positions on val"))?;
        Ok((
            worst <= 1e-6 && ap > prevalence,
            format!("max |M(F,F)| {worst:.1e} over random and trained DMNets; val AP {ap:.4} vs prevalence {prevalence:.4} ({} cells)", labels.len()),
        ))
    }
}
