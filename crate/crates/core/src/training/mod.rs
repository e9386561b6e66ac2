//! Loss algebra, dual deep supervision and the staged training protocol:
//! segmentation network, flow pretraining, distortion network, then the
//! flow and correction networks jointly with the others frozen.

mod dds;
mod losses;
mod stages;

use serde::{Deserialize, Serialize};

pub use dds::{dds_backward, dds_forward, DdsOutput, DdsSample, DdsTape};
pub use losses::{correction_loss, frame_loss, labels_from_logits, propagation_loss, pseudo_label, LossBundle};
pub use stages::{distortion_targets, train_stage, DistortionTargets, StageReport, TrainContext};

use crate::data::Augment;
use crate::distortion::PositiveWeight;
use crate::error::Result;
use crate::networks::INPUT_MULTIPLE;
use crate::Error;

/// Optimizer, schedule and sampling settings of one stage.
///
/// The learning rate is `learning_rate` for epochs `1..=drop_after` and
/// `final_learning_rate` afterwards. One epoch draws `samples_per_clip`
/// samples from every training clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub epochs: usize,
    pub drop_after: usize,
    pub batch_size: usize,
    pub samples_per_clip: usize,
    pub augment: Augment,
    /// Longest warp used to generate distortion-network targets.
    pub max_distance: usize,
    pub positive_weight: PositiveWeight,
    /// Share of flow-pretraining pairs that show the same frame twice.
    pub identity_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            learning_rate: 1e-4,
            final_learning_rate: 1e-5,
            epochs: 100,
            drop_after: 50,
            batch_size: 4,
            samples_per_clip: 1,
            augment: Augment::default(),
            max_distance: 9,
            positive_weight: PositiveWeight::Balanced,
            identity_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.epochs == 0 || self.drop_after == 0 {
            return bad("epoch counts must be positive");
        }
        if self.batch_size == 0 || self.samples_per_clip == 0 {
            return bad("batch_size and samples_per_clip must be positive");
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)");
        }
        if self.max_distance == 0 {
            return bad("max_distance must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.identity_fraction) {
            return bad("identity_fraction must be in [0, 1]");
        }
        if let Some([h, w]) = self.augment.crop {
            if h == 0 || w == 0 || h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
                return bad("crop sizes must be positive multiples of 64");
            }
        }
        Ok(())
    }

    /// Learning rate of a 1-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch <= self.drop_after {
            self.learning_rate
        } else {
            self.final_learning_rate
        }
    }
}

/// Which parts of the method are active in the joint stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Supervise the intermediate frame (two warps) rather than `F3` only.
    pub dds: bool,
    /// Weight the correction-cue loss by the distortion map (else by 1).
    pub dgfl: bool,
    /// Fuse with the predicted distortion map (else a constant 0.5).
    pub dgfc: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation { dds: true, dgfl: true, dgfc: true };

    /// Parses switches such as `no-dds`; several may be combined.
    pub fn from_switches<S: AsRef<str>>(switches: &[S]) -> Result<Self> {
        let mut a = Self::FULL;
        for s in switches {
            match s.as_ref() {
                "no-dds" => a.dds = false,
                "no-dgfl" => a.dgfl = false,
                "no-dgfc" => a.dgfc = false,
                other => {
                    return Err(Error::Config(format!("unknown ablation {other:?}; expected no-dds, no-dgfl or no-dgfc")))
                }
            }
        }
        Ok(a)
    }

    pub fn label(&self) -> String {
        let off: Vec<&str> = [(self.dds, "no-dds"), (self.dgfl, "no-dgfl"), (self.dgfc, "no-dgfc")]
            .into_iter()
            .filter(|(on, _)| !on)
            .map(|(_, n)| n)
            .collect();
        if off.is_empty() {
            "full".into()
        } else {
            off.join("+")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_once() {
        let t = TrainConfig { epochs: 4, drop_after: 2, learning_rate: 1e-3, final_learning_rate: 1e-4, ..Default::default() };
        let lrs: Vec<f64> = (1..=4).map(|e| t.learning_rate_at(e)).collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-4, 1e-4]);
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ablation_switches() {
        assert_eq!(Ablation::from_switches::<&str>(&[]).unwrap(), Ablation::FULL);
        let a = Ablation::from_switches(&["no-dds", "no-dgfc"]).unwrap();
        assert_eq!(a, Ablation { dds: false, dgfl: true, dgfc: false });
        assert_eq!(a.label(), "no-dds+no-dgfc");
        assert!(matches!(Ablation::from_switches(&["no-flow"]), Err(Error::Config(_))));
    }
}
