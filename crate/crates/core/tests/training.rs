//! Staged training on a tiny synthetic dataset.

use std::path::Path;

use dvss::data::{generate_synthetic_dataset, Dataset, SynthSpec};
use dvss::networks::{Checkpoint, NetworkConfig, Stage};
use dvss::training::{train_stage, Ablation, TrainConfig, TrainContext};
use dvss::Error;

fn tiny_dataset(root: &Path) -> Dataset {
    let spec = SynthSpec { num_clips: 4, val_clips: 1, frames_per_clip: 12, ..SynthSpec::default() };
    generate_synthetic_dataset(&spec, root).unwrap();
    Dataset::open(root).unwrap()
}

fn short_schedule() -> TrainConfig {
    TrainConfig { epochs: 2, drop_after: 1, batch_size: 2, learning_rate: 1e-3, final_learning_rate: 1e-4, ..TrainConfig::default() }
}

#[test]
fn stages_run_in_order_and_freeze_their_predecessors() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tiny_dataset(&tmp.path().join("data"));
    let ckpt = tmp.path().join("ckpt");
    let network = NetworkConfig::default();
    let train = short_schedule();
    let ctx = TrainContext {
        dataset: &dataset,
        checkpoints: &ckpt,
        network: &network,
        train: &train,
        seed: 1,
        ablation: Ablation::FULL,
        verbose: false,
    };

    assert!(matches!(train_stage(Stage::Joint, &ctx), Err(Error::MissingPrerequisite(_))));
    for stage in [Stage::Segnet, Stage::FlowPretrain, Stage::Dmnet] {
        let report = train_stage(stage, &ctx).unwrap();
        assert_eq!(report.step_losses.len(), 4);
        assert!(report.step_losses.iter().all(|l| l.is_finite()));
        let csv = std::fs::read_to_string(&report.metrics).unwrap();
        assert!(csv.starts_with("step,epoch,loss,lr\n"));
    }
    let joint = train_stage(Stage::Joint, &ctx).unwrap();
    let csv = std::fs::read_to_string(&joint.metrics).unwrap();
    assert!(csv.starts_with("step,L_P@F2,L_C@F2,L_DGFL@F2,L_P@F3,L_C@F3,L_DGFL@F3,L_total,lr\n"));
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(joint.checkpoint.manifest.variant, None);

    for (stage, name) in [(Stage::Segnet, "segnet"), (Stage::Dmnet, "dmnet")] {
        let before = std::fs::read(Checkpoint::open(&ckpt, stage, &network).unwrap().params_path(name)).unwrap();
        let after = std::fs::read(joint.checkpoint.params_path(name)).unwrap();
        assert!(before == after, "{name} changed during the joint stage");
    }
    let flow_before = std::fs::read(Checkpoint::open(&ckpt, Stage::FlowPretrain, &network).unwrap().params_path("flownet")).unwrap();
    assert!(flow_before != std::fs::read(joint.checkpoint.params_path("flownet")).unwrap());
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tiny_dataset(&tmp.path().join("data"));
    let network = NetworkConfig::default();
    let train = short_schedule();
    let run = |dir: &str| {
        let ckpt = tmp.path().join(dir);
        let ctx = TrainContext {
            dataset: &dataset,
            checkpoints: &ckpt,
            network: &network,
            train: &train,
            seed: 5,
            ablation: Ablation::FULL,
            verbose: false,
        };
        train_stage(Stage::Segnet, &ctx).unwrap().step_losses
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn mismatched_network_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tiny_dataset(&tmp.path().join("data"));
    let ckpt = tmp.path().join("ckpt");
    let network = NetworkConfig::default();
    let train = TrainConfig { epochs: 1, drop_after: 1, ..short_schedule() };
    let ctx = TrainContext {
        dataset: &dataset,
        checkpoints: &ckpt,
        network: &network,
        train: &train,
        seed: 1,
        ablation: Ablation::FULL,
        verbose: false,
    };
    train_stage(Stage::Segnet, &ctx).unwrap();
    let other = NetworkConfig { feature_channels: 16, ..NetworkConfig::default() };
    let ctx = TrainContext { network: &other, ..ctx };
    assert!(matches!(train_stage(Stage::Dmnet, &ctx), Err(Error::Config(_))));
}
