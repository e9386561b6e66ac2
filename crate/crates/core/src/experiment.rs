//! Run orchestration on top of a [`RunConfig`]: dataset synthesis, staged
//! training, prediction output and the evaluation reports. The command-line
//! driver is a thin layer over these functions.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_synthetic_dataset, Dataset, Manifest, Split, VideoClip};
use crate::error::Result;
use crate::evaluation::{
    cca_curve, cost_breakdown, evaluate_distances, pda_curve, plot_curves, read_curves, write_cca_csv, write_false_correction_csv,
    write_json, write_pda_csv, CostBreakdown, CurveSeries, DistanceEvaluation,
};
use crate::inference::{schedule_keyframes, segment_clip, write_predictions, DistortionSource};
use crate::networks::{Networks, Stage};
use crate::training::{train_stage, Ablation, StageReport, TrainContext};
use crate::Error;

/// Label of the full method's rows in reports.
pub const CORRECTED: &str = "corrected";
pub const PROPAGATION_ONLY: &str = "propagation-only";
pub const NAIVE_FUSION: &str = "naive-fusion";
pub const ORACLE: &str = "oracle";

/// Writes the synthetic dataset of `cfg` to `cfg.dataset`. A non-empty
/// target is refused unless `force` is set, in which case it is replaced.
pub fn synthesize(cfg: &RunConfig, force: bool) -> Result<Manifest> {
    let out = &cfg.dataset;
    let non_empty = out.is_dir() && std::fs::read_dir(out).map_err(Error::io(out))?.next().is_some();
    if non_empty {
        if !force {
            return Err(Error::Config(format!("{} is not empty; pass --force to replace it", out.display())));
        }
        std::fs::remove_dir_all(out).map_err(Error::io(out))?;
    }
    generate_synthetic_dataset(&cfg.synth, out)
}

/// Trains one stage with the settings of `cfg`.
pub fn train(cfg: &RunConfig, stage: Stage, ablation: Ablation, verbose: bool) -> Result<StageReport> {
    let dataset = Dataset::open(&cfg.dataset)?;
    let checkpoints = cfg.checkpoints();
    let ctx = TrainContext {
        dataset: &dataset,
        checkpoints: &checkpoints,
        network: &cfg.network,
        train: cfg.train.get(stage),
        seed: cfg.seed,
        ablation,
        verbose,
    };
    let report = train_stage(stage, &ctx)?;
    cfg.write_effective(&report.checkpoint.dir)?;
    Ok(report)
}

/// Variant name of the joint checkpoint for an ablation; `None` for the
/// full method.
pub fn variant_of(ablation: Ablation) -> Option<String> {
    (ablation != Ablation::FULL).then(|| ablation.label())
}

pub fn load_networks(cfg: &RunConfig, ablation: Ablation) -> Result<Networks> {
    Networks::load_variant(&cfg.checkpoints(), &cfg.network, variant_of(ablation).as_deref())
}

pub fn validation_clips(cfg: &RunConfig) -> Result<Vec<VideoClip>> {
    let dataset = Dataset::open(&cfg.dataset)?;
    let clips = dataset.load_split(Split::Val)?;
    if clips.is_empty() {
        return Err(Error::DataIntegrity("the dataset has no validation clips".into()));
    }
    Ok(clips)
}

/// Runs `work` over contiguous chunks of `clips` on up to `jobs` threads,
/// each with its own copy of the networks.
fn parallel_clips<T: Send>(
    cfg: &RunConfig,
    ablation: Ablation,
    clips: &[VideoClip],
    jobs: usize,
    work: impl Fn(&mut Networks, &[VideoClip]) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, clips.len().max(1));
    if jobs == 1 {
        let mut nets = load_networks(cfg, ablation)?;
        return Ok(vec![work(&mut nets, clips)?]);
    }
    let chunk = clips.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .map(|part| {
                let work = &work;
                scope.spawn(move || -> Result<T> {
                    let mut nets = load_networks(cfg, ablation)?;
                    work(&mut nets, part)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    })
}

/// Accuracy by distance of one pipeline configuration on the validation
/// clips.
pub fn evaluate(cfg: &RunConfig, ablation: Ablation, clips: &[VideoClip], source: DistortionSource, inspect: bool) -> Result<DistanceEvaluation> {
    let max = cfg.evaluation.max_distance;
    let parts = parallel_clips(cfg, ablation, clips, cfg.jobs, |nets, part| evaluate_distances(nets, part, source, max, inspect))?;
    let mut total = DistanceEvaluation::new();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Directory for the reports of one training variant.
pub fn eval_dir(cfg: &RunConfig, ablation: Ablation) -> PathBuf {
    cfg.output.join("eval").join(ablation.label())
}

fn prepare(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    cfg.write_effective(dir)
}

/// Writes `pda.csv` with the corrected and propagation-only pipelines.
pub fn eval_pda(cfg: &RunConfig, ablation: Ablation) -> Result<Vec<(String, DistanceEvaluation)>> {
    let clips = validation_clips(cfg)?;
    let dir = eval_dir(cfg, ablation);
    prepare(&dir, cfg)?;
    let corrected = evaluate(cfg, ablation, &clips, DistortionSource::Predicted, false)?;
    let propagated = evaluate(cfg, ablation, &clips, DistortionSource::NONE, false)?;
    let range = cfg.evaluation.min_distance..=cfg.evaluation.max_distance;
    write_pda_csv(&dir.join("pda.csv"), &[(CORRECTED, &corrected), (PROPAGATION_ONLY, &propagated)], range)?;
    Ok(vec![(CORRECTED.into(), corrected), (PROPAGATION_ONLY.into(), propagated)])
}

/// Reads `pda.csv` and writes `cca.csv` with the cost model of the
/// configured networks at the dataset resolution.
pub fn eval_cca(cfg: &RunConfig, ablation: Ablation) -> Result<Vec<CurveSeries>> {
    let dir = eval_dir(cfg, ablation);
    let pda_path = dir.join("pda.csv");
    if !pda_path.is_file() {
        return Err(Error::MissingPrerequisite(format!("{} not found; run `eval pda` first", pda_path.display())));
    }
    let manifest = Manifest::read(&cfg.dataset)?;
    let costs = cost_breakdown(&cfg.network, manifest.height, manifest.width)?;
    let range = cfg.evaluation.min_distance..=cfg.evaluation.max_distance;
    let mut curves = Vec::new();
    for pda in read_curves(&pda_path, "distance", "miou")? {
        let by = pda.points.iter().map(|&(d, y)| (d as usize, y)).collect();
        curves.push(pda_curve(&pda.label, &by, range.clone())?);
    }
    write_cca_csv(&dir.join("cca.csv"), &costs.model, &curves)?;
    Ok(curves.iter().map(|c| cca_curve(c, &costs.model)).collect())
}

/// Writes `false_correction.csv` for the corrected pipeline and the naive
/// fusion baseline.
pub fn eval_false_correction(cfg: &RunConfig, ablation: Ablation) -> Result<Vec<(String, DistanceEvaluation)>> {
    let clips = validation_clips(cfg)?;
    let dir = eval_dir(cfg, ablation);
    prepare(&dir, cfg)?;
    let corrected = evaluate(cfg, ablation, &clips, DistortionSource::Predicted, false)?;
    let naive = evaluate(cfg, ablation, &clips, DistortionSource::NAIVE, false)?;
    write_false_correction_csv(
        &dir.join("false_correction.csv"),
        &[(CORRECTED, corrected.false_correction), (NAIVE_FUSION, naive.false_correction)],
    )?;
    Ok(vec![(CORRECTED.into(), corrected), (NAIVE_FUSION.into(), naive)])
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperBoundRow {
    pub variant: String,
    pub mean_miou: f64,
    pub flipped_correct_cells: u64,
    pub flipped_at_zero_weight: u64,
}

/// Writes `upper_bound.csv` comparing the oracle distortion map with the
/// predicted one.
pub fn eval_upper_bound(cfg: &RunConfig, ablation: Ablation) -> Result<Vec<(UpperBoundRow, DistanceEvaluation)>> {
    let clips = validation_clips(cfg)?;
    let dir = eval_dir(cfg, ablation);
    prepare(&dir, cfg)?;
    let range = cfg.evaluation.min_distance..=cfg.evaluation.max_distance;
    let mut rows = Vec::new();
    for (label, source) in [(ORACLE, DistortionSource::Oracle), (CORRECTED, DistortionSource::Predicted)] {
        let eval = evaluate(cfg, ablation, &clips, source, true)?;
        let row = UpperBoundRow {
            variant: label.into(),
            mean_miou: eval.mean_miou(range.clone())?,
            flipped_correct_cells: eval.flipped_correct_cells,
            flipped_at_zero_weight: eval.flipped_at_zero_weight,
        };
        rows.push((row, eval));
    }
    let mut w = csv::Writer::from_path(dir.join("upper_bound.csv"))?;
    for (row, _) in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(rows)
}

/// Writes `flops.json` for the configured networks at the dataset
/// resolution, or at `size` when given.
pub fn eval_flops(cfg: &RunConfig, size: Option<(usize, usize)>) -> Result<CostBreakdown> {
    let (h, w) = match size {
        Some(s) => s,
        None => {
            let m = Manifest::read(&cfg.dataset)?;
            (m.height, m.width)
        }
    };
    let costs = cost_breakdown(&cfg.network, h, w)?;
    let dir = cfg.output.join("eval");
    prepare(&dir, cfg)?;
    write_json(&dir.join("flops.json"), &costs)?;
    Ok(costs)
}

/// Renders `pda.svg` and `cca.svg` from the CSVs of every evaluated
/// variant. Returns the written files.
pub fn plot(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let root = cfg.output.join("eval");
    let mut written = Vec::new();
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(&root) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    for dir in entries {
        let pda = dir.join("pda.csv");
        if pda.is_file() {
            let out = dir.join("pda.svg");
            plot_curves(&out, "Accuracy vs propagation distance", "distance", "mIoU", &read_curves(&pda, "distance", "miou")?)?;
            written.push(out);
        }
        let cca = dir.join("cca.csv");
        if cca.is_file() {
            let out = dir.join("cca.svg");
            plot_curves(&out, "Accuracy vs mean cost", "mean GFLOPs per frame", "mIoU", &read_curves(&cca, "mean_gflops", "miou")?)?;
            written.push(out);
        }
    }
    if written.is_empty() {
        return Err(Error::MissingPrerequisite(format!("no pda.csv or cca.csv under {}; run `eval` first", root.display())));
    }
    Ok(written)
}

/// Options of [`infer`].
#[derive(Debug, Clone, Default)]
pub struct InferOptions {
    /// Clip ids; all validation clips when empty.
    pub clips: Vec<String>,
    pub interval: Option<usize>,
    pub oracle: bool,
    pub dump_intermediates: bool,
    pub ablation: Option<Ablation>,
}

/// Segments clips and writes `<out>/clips/<id>/pred/*.png`.
pub fn infer(cfg: &RunConfig, out: &Path, opts: &InferOptions) -> Result<usize> {
    let dataset = Dataset::open(&cfg.dataset)?;
    let entries: Vec<_> = if opts.clips.is_empty() {
        dataset.entries(Split::Val).cloned().collect()
    } else {
        opts.clips
            .iter()
            .map(|id| {
                dataset.manifest.clips.iter().find(|e| &e.id == id).cloned().ok_or_else(|| Error::DataIntegrity(format!("no clip {id} in the dataset")))
            })
            .collect::<Result<_>>()?
    };
    let ablation = opts.ablation.unwrap_or(Ablation::FULL);
    let mut nets = load_networks(cfg, ablation)?;
    let interval = opts.interval.unwrap_or(cfg.inference.interval);
    let source = if opts.oracle { DistortionSource::Oracle } else { DistortionSource::Predicted };
    cfg.write_effective(out)?;
    for e in &entries {
        let clip = dataset.load(e, None)?;
        if opts.oracle && clip.labels.is_empty() {
            return Err(Error::DataIntegrity(format!("oracle mode needs labels, clip {} has none", clip.clip_id)));
        }
        let schedule = schedule_keyframes(clip.len(), interval)?;
        let results = segment_clip(&mut nets, &clip, &schedule, source, opts.dump_intermediates)?;
        write_predictions(out, &clip.clip_id, &results)?;
    }
    Ok(entries.len())
}
