//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::error::Result;
use crate::networks::{NetworkConfig, Stage};
use crate::training::TrainConfig;
use crate::Error;

/// Per-stage training settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
pub struct StageConfigs {
    pub segnet: TrainConfig,
    pub flow_pretrain: TrainConfig,
    pub dmnet: TrainConfig,
    pub joint: TrainConfig,
}

impl StageConfigs {
    pub fn get(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::Segnet => &self.segnet,
            Stage::FlowPretrain => &self.flow_pretrain,
            Stage::Dmnet => &self.dmnet,
            Stage::Joint => &self.joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Key-frame interval.
    pub interval: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { interval: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub min_distance: usize,
    pub max_distance: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { min_distance: 1, max_distance: 9 }
    }
}

/// Everything a run reads. Unknown keys are rejected.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset root (manifest plus `clips/`).
    pub dataset: PathBuf,
    /// Output root; checkpoints, predictions and reports go below it.
    pub output: PathBuf,
    /// Upper bound on worker threads for per-clip work.
    pub jobs: usize,
    pub synth: SynthSpec,
    pub network: NetworkConfig,
    pub train: StageConfigs,
    pub inference: InferenceConfig,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dataset: PathBuf::from("data"),
            output: PathBuf::from("runs"),
            jobs: 1,
            synth: SynthSpec::default(),
            network: NetworkConfig::default(),
            train: StageConfigs::default(),
            inference: InferenceConfig::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a TOML file, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.network.validate()?;
        for stage in Stage::ALL {
            self.train.get(stage).validate().map_err(|e| Error::Config(format!("train.{stage}: {e}")))?;
        }
        if self.inference.interval < 1 {
            return Err(Error::Config("inference.interval must be at least 1".into()));
        }
        let e = &self.evaluation;
        if e.min_distance < 1 || e.min_distance > e.max_distance {
            return Err(Error::Config(format!("evaluation distances {}..={} are empty", e.min_distance, e.max_distance)));
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.network.num_classes != self.synth.num_classes as usize {
            return Err(Error::Config(format!(
                "network.num_classes = {} but synth.num_classes = {}",
                self.network.num_classes, self.synth.num_classes
            )));
        }
        Ok(())
    }

    /// The effective configuration with defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.output.join("checkpoints")
    }

    /// Writes the effective configuration as `config.toml` into `dir`.
    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(Error::io(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 3", "[train.segnet]\nepoch = 3", "[network]\nwidth = 3", "[train.flow_pretrain]\nepochs = 1"] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
        let cfg = RunConfig::from_toml_str("[train.flow-pretrain]\nepochs = 3\ndrop_after = 2").unwrap();
        assert_eq!(cfg.train.flow_pretrain.epochs, 3);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml_str("[inference]\ninterval = 0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[synth]\nframes_per_clip = 5"), Err(Error::Config(_))));
    }
}
