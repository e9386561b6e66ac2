//! Desk-scale networks: the segmentation network with its shared head, the
//! flow network, the siamese distortion network and the correction network.
//!
//! All feature maps live at stride [`FEATURE_STRIDE`]. Inputs must be
//! multiples of [`INPUT_MULTIPLE`] because the correction encoder reaches
//! stride 64.

mod cfnet;
mod checkpoint;
mod dmnet;
mod flops;
mod flownet;
mod segnet;

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dvss_nn::{init::he_normal, Param, ParamSet};

pub use cfnet::CfNet;
pub use checkpoint::{Checkpoint, CheckpointManifest, CheckpointWriter, ParamShape, Stage};
pub use dmnet::DmNet;
pub use flops::{describe_flops, layer_flops, FlopsReport, LayerFlops, LayerKind, LayerSpec, NetworkSpec, SpecBuilder};
pub use flownet::FlowNet;
pub use segnet::{SegHead, SegNet};

use crate::error::Result;
use crate::Error;

pub const FEATURE_STRIDE: usize = 4;
pub const INPUT_MULTIPLE: usize = 64;

/// Widths of all networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub num_classes: usize,
    /// Channels of every fusable feature map.
    pub feature_channels: usize,
    pub segnet_base: usize,
    pub segnet_decoder: usize,
    pub flownet_base: usize,
    pub dmnet_channels: usize,
    pub cfnet_base: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            feature_channels: 32,
            segnet_base: 32,
            segnet_decoder: 64,
            flownet_base: 16,
            dmnet_channels: 16,
            cfnet_base: 16,
            leaky_slope: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.num_classes,
            self.feature_channels,
            self.segnet_base,
            self.segnet_decoder,
            self.flownet_base,
            self.dmnet_channels,
            self.cfnet_base,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.num_classes > 254 {
            return Err(Error::Config(format!("num_classes {} does not fit an 8-bit label map", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!("leaky_slope {} outside [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Rejects inputs that are not a positive multiple of `multiple`.
pub fn check_input_size(h: usize, w: usize, multiple: usize) -> Result<()> {
    if h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
        return Err(Error::Shape(format!("input {h}x{w} must be a positive multiple of {multiple}")));
    }
    Ok(())
}

/// Common surface of the four networks.
pub trait Network: ParamSet<f32> {
    /// File stem used in checkpoints.
    const NAME: &'static str;

    /// Layer description at input size `h x w`.
    fn spec(&self, h: usize, w: usize) -> NetworkSpec;

    /// He initialization with small gain for the output layers.
    fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        he_normal(&mut self.params_mut(), 1.0, rng);
    }

    fn params(&mut self) -> Vec<&Param<f32>> {
        self.params_mut().into_iter().map(|p| &*p).collect()
    }
}

/// The four networks of the pipeline.
pub struct Networks {
    pub config: NetworkConfig,
    pub segnet: SegNet,
    pub flownet: FlowNet,
    pub dmnet: DmNet,
    pub cfnet: CfNet,
}

impl Networks {
    /// Freshly initialized networks; each draws from its own stream of `seed`.
    pub fn initialized(cfg: &NetworkConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let rng = |stream: u64| {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        let mut nets = Self {
            config: cfg.clone(),
            segnet: SegNet::new(cfg),
            flownet: FlowNet::new(cfg),
            dmnet: DmNet::new(cfg),
            cfnet: CfNet::new(cfg),
        };
        nets.segnet.init(&mut rng(1));
        nets.flownet.init(&mut rng(2));
        nets.dmnet.init(&mut rng(3));
        nets.cfnet.init(&mut rng(4));
        nets
    }

    /// Loads all four networks from the final (joint) checkpoint under `root`.
    pub fn load(root: &std::path::Path, cfg: &NetworkConfig) -> Result<Self> {
        Self::load_variant(root, cfg, None)
    }

    /// Loads all four networks from a joint-stage variant under `root`.
    pub fn load_variant(root: &std::path::Path, cfg: &NetworkConfig, variant: Option<&str>) -> Result<Self> {
        let ck = Checkpoint::open_variant(root, Stage::Joint, variant, cfg)?;
        let mut nets = Self::initialized(cfg, 0);
        ck.load(&mut nets.segnet)?;
        ck.load(&mut nets.flownet)?;
        ck.load(&mut nets.dmnet)?;
        ck.load(&mut nets.cfnet)?;
        Ok(nets)
    }
}

/// Adds a batch axis: `(C, H, W) -> (1, C, H, W)`.
pub fn batch1(x: &Array3<f32>) -> Array4<f32> {
    x.clone().insert_axis(Axis(0))
}

/// Stacks equally shaped `(C, H, W)` arrays into a batch.
pub fn stack_batch(xs: &[&Array3<f32>]) -> Array4<f32> {
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal shapes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = NetworkConfig::default();
        assert_eq!(a.hash(), a.clone().hash());
        let b = NetworkConfig { cfnet_base: 8, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn input_size_rule() {
        assert!(check_input_size(64, 128, INPUT_MULTIPLE).is_ok());
        assert!(check_input_size(32, 64, INPUT_MULTIPLE).is_err());
        assert!(check_input_size(32, 64, 32).is_ok());
    }
}
