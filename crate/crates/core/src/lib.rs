//! Distortion-aware video semantic segmentation on synthetic video.
//!
//! Key frames go through a segmentation network; the frames in between reuse
//! the key frame's features, warped frame by frame along estimated optical
//! flow. A distortion map predicts where the warped features went wrong and
//! a light correction network repairs those regions.

pub mod config;
pub mod correction;
pub mod data;
pub mod distortion;
pub mod evaluation;
pub mod experiment;
pub mod inference;
pub mod networks;
mod error;
pub mod propagation;
pub mod training;

pub use error::{Error, Result};
