//! Command-line driver: dataset synthesis, staged training, inference,
//! evaluation reports and plots.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dvss::config::RunConfig;
use dvss::experiment::{self, InferOptions};
use dvss::networks::Stage;
use dvss::training::Ablation;

#[derive(Parser)]
#[command(name = "dvss", version, about = "Distortion-aware video semantic segmentation at desk scale")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the run (the dataset seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (the dataset root for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-clip work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset root, overriding the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth {
        /// Replace a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one stage: segnet, flow-pretrain, dmnet, then joint.
    Train {
        stage: Stage,
        /// Disable a component of the joint stage (no-dds, no-dgfl, no-dgfc).
        #[arg(long = "ablate")]
        ablate: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Segment clips and write class-index PNGs.
    Infer {
        /// Clip id; every validation clip when omitted.
        #[arg(long = "clip")]
        clips: Vec<String>,
        #[arg(long)]
        interval: Option<usize>,
        /// Replace the distortion map by the disagreement with the labels.
        #[arg(long)]
        oracle: bool,
        /// Also write distortion maps and feature argmax maps.
        #[arg(long)]
        dump_intermediates: bool,
        /// Use the joint checkpoint trained with these ablations.
        #[arg(long = "ablate")]
        ablate: Vec<String>,
    },
    /// Write an evaluation report.
    Eval {
        kind: EvalKind,
        /// Evaluate the joint checkpoint trained with these ablations.
        #[arg(long = "ablate")]
        ablate: Vec<String>,
    },
    /// Render SVG charts from the evaluation CSVs.
    Plot,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Pda,
    Cca,
    FalseCorrection,
    Flops,
    UpperBound,
}

fn load_config(g: &Global, synth: bool) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        if synth {
            cfg.synth.seed = seed;
        } else {
            cfg.seed = seed;
        }
    }
    if let Some(d) = &g.data {
        cfg.dataset = d.clone();
    }
    if let Some(out) = &g.out {
        if synth {
            cfg.dataset = out.clone();
        } else {
            cfg.output = out.clone();
        }
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { force } => {
            let cfg = load_config(&cli.global, true)?;
            let m = experiment::synthesize(&cfg, force)?;
            println!("wrote {} clips to {}", m.clips.len(), cfg.dataset.display());
        }
        Command::Train { stage, ablate, quiet } => {
            let cfg = load_config(&cli.global, false)?;
            let ablation = Ablation::from_switches(&ablate)?;
            let report = experiment::train(&cfg, stage, ablation, !quiet)?;
            println!(
                "{stage}: {} steps, final loss {:.4}, checkpoint {}",
                report.step_losses.len(),
                report.final_loss(10),
                report.checkpoint.dir.display()
            );
        }
        Command::Infer { clips, interval, oracle, dump_intermediates, ablate } => {
            let cfg = load_config(&cli.global, false)?;
            let out = cfg.output.join("predictions");
            let opts = InferOptions {
                clips,
                interval,
                oracle,
                dump_intermediates,
                ablation: Some(Ablation::from_switches(&ablate)?),
            };
            let n = experiment::infer(&cfg, &out, &opts)?;
            println!("segmented {n} clips into {}", out.display());
        }
        Command::Eval { kind, ablate } => {
            let cfg = load_config(&cli.global, false)?;
            let ablation = Ablation::from_switches(&ablate)?;
            let range = cfg.evaluation.min_distance..=cfg.evaluation.max_distance;
            match kind {
                EvalKind::Pda => {
                    for (label, eval) in experiment::eval_pda(&cfg, ablation)? {
                        println!("{label}: mean mIoU {:.4}", eval.mean_miou(range.clone())?);
                    }
                }
                EvalKind::Cca => {
                    for c in experiment::eval_cca(&cfg, ablation)? {
                        let (x0, x1) = (c.points[0].0, c.points[c.points.len() - 1].0);
                        println!("{}: {} points, {x0:.4} -> {x1:.4} GFLOPs", c.label, c.points.len());
                    }
                }
                EvalKind::FalseCorrection => {
                    for (label, eval) in experiment::eval_false_correction(&cfg, ablation)? {
                        let s = eval.false_correction;
                        let (ratio, _) = s.ratio();
                        println!("{label}: wrong {} right {} ratio {ratio:.4}", s.wrong_rectified, s.right_rectified);
                    }
                }
                EvalKind::Flops => {
                    let c = experiment::eval_flops(&cfg, None)?;
                    println!("key {} FLOPs, non-key {} FLOPs", c.model.c_seg, c.model.c_warp);
                }
                EvalKind::UpperBound => {
                    for (row, _) in experiment::eval_upper_bound(&cfg, ablation)? {
                        println!("{}: mean mIoU {:.4}", row.variant, row.mean_miou);
                    }
                }
            }
        }
        Command::Plot => {
            let cfg = load_config(&cli.global, false)?;
            for p in experiment::plot(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("dvss failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<dvss::Error>()).map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
