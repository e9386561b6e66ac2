//! Checkpoint directories: one `<network>.params` file per network plus a
//! `manifest.json` with stage, seed, config hash, epoch and parameter shapes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use dvss_nn::{read_params, write_params, Param};

use super::{Network, NetworkConfig};
use crate::error::Result;
use crate::Error;

/// Training stages in the order they must run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Segnet,
    FlowPretrain,
    Dmnet,
    Joint,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Segnet, Stage::FlowPretrain, Stage::Dmnet, Stage::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Segnet => "segnet",
            Stage::FlowPretrain => "flow-pretrain",
            Stage::Dmnet => "dmnet",
            Stage::Joint => "joint",
        }
    }

    /// Stages whose checkpoints must exist before this one runs.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Segnet => &[],
            Stage::FlowPretrain => &[],
            Stage::Dmnet => &[Stage::Segnet, Stage::FlowPretrain],
            Stage::Joint => &[Stage::Segnet, Stage::FlowPretrain, Stage::Dmnet],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}; expected one of segnet, flow-pretrain, dmnet, joint")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub stage: Stage,
    pub seed: u64,
    pub config_hash: String,
    pub epoch: usize,
    /// Training variant of the joint stage, e.g. an ablation label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub networks: BTreeMap<String, Vec<ParamShape>>,
}

/// A stage's checkpoint directory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub manifest: CheckpointManifest,
}

impl Checkpoint {
    pub const MANIFEST: &'static str = "manifest.json";

    pub fn stage_dir(root: &Path, stage: Stage) -> PathBuf {
        root.join(stage.as_str())
    }

    /// Directory of a named training variant of `stage`, e.g. an ablation
    /// of the joint stage; `None` is the stage directory itself.
    pub fn variant_dir(root: &Path, stage: Stage, variant: Option<&str>) -> PathBuf {
        match variant {
            Some(v) => root.join(format!("{}-{v}", stage.as_str())),
            None => Self::stage_dir(root, stage),
        }
    }

    /// Opens the checkpoint of `stage` under `root` and checks its config hash.
    pub fn open(root: &Path, stage: Stage, cfg: &NetworkConfig) -> Result<Self> {
        Self::open_variant(root, stage, None, cfg)
    }

    pub fn open_variant(root: &Path, stage: Stage, variant: Option<&str>, cfg: &NetworkConfig) -> Result<Self> {
        let dir = Self::variant_dir(root, stage, variant);
        let path = dir.join(Self::MANIFEST);
        if !path.is_file() {
            return Err(Error::MissingPrerequisite(format!(
                "no {stage} checkpoint at {}; run `train {stage}` first",
                dir.display()
            )));
        }
        let file = File::open(&path).map_err(Error::io(&path))?;
        let manifest: CheckpointManifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::DataIntegrity(format!("{}: {e}", path.display())))?;
        if manifest.stage != stage {
            return Err(Error::DataIntegrity(format!("{} holds stage {}, expected {stage}", dir.display(), manifest.stage)));
        }
        let hash = cfg.hash();
        if manifest.config_hash != hash {
            return Err(Error::Config(format!(
                "{stage} checkpoint was trained with network config {}, current config is {hash}",
                manifest.config_hash
            )));
        }
        Ok(Self { dir, manifest })
    }

    pub fn has(&self, network: &str) -> bool {
        self.manifest.networks.contains_key(network)
    }

    /// Loads the parameters of `net` from this checkpoint.
    pub fn load<N: Network>(&self, net: &mut N) -> Result<()> {
        if !self.has(N::NAME) {
            return Err(Error::MissingPrerequisite(format!(
                "{} checkpoint does not contain {}",
                self.manifest.stage,
                N::NAME
            )));
        }
        let path = self.dir.join(format!("{}.params", N::NAME));
        let file = File::open(&path).map_err(Error::io(&path))?;
        read_params(BufReader::new(file), &mut net.params_mut()).map_err(|source| Error::Params { path, source })
    }

    /// Path of a network's parameter file.
    pub fn params_path(&self, network: &str) -> PathBuf {
        self.dir.join(format!("{network}.params"))
    }
}

/// Collects what a checkpoint write needs.
pub struct CheckpointWriter {
    dir: PathBuf,
    manifest: CheckpointManifest,
}

impl CheckpointWriter {
    pub fn new(root: &Path, stage: Stage, seed: u64, epoch: usize, cfg: &NetworkConfig) -> Result<Self> {
        Self::for_variant(root, stage, None, seed, epoch, cfg)
    }

    pub fn for_variant(root: &Path, stage: Stage, variant: Option<&str>, seed: u64, epoch: usize, cfg: &NetworkConfig) -> Result<Self> {
        let dir = Checkpoint::variant_dir(root, stage, variant);
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let manifest = CheckpointManifest {
            stage,
            seed,
            config_hash: cfg.hash(),
            epoch,
            variant: variant.map(str::to_string),
            networks: BTreeMap::new(),
        };
        Ok(Self { dir, manifest })
    }

    pub fn add<N: Network>(&mut self, net: &mut N) -> Result<()> {
        self.add_params(N::NAME, &net.params())
    }

    pub fn add_params(&mut self, name: &str, params: &[&Param<f32>]) -> Result<()> {
        let path = self.dir.join(format!("{name}.params"));
        let mut w = BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
        write_params(&mut w, params).map_err(Error::io(&path))?;
        w.flush().map_err(Error::io(&path))?;
        let shapes = params.iter().map(|p| ParamShape { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect();
        self.manifest.networks.insert(name.to_string(), shapes);
        Ok(())
    }

    pub fn finish(self) -> Result<Checkpoint> {
        let path = self.dir.join(Checkpoint::MANIFEST);
        let mut w = BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n").map_err(Error::io(&path))?;
        w.flush().map_err(Error::io(&path))?;
        Ok(Checkpoint { dir: self.dir, manifest: self.manifest })
    }
}
