//! Multimodal encoder-decoder semantic segmentation of orthoimagery.
//!
//! The crate covers the network itself, raster preparation, the phased
//! training schedule, overlap-tile inference with evaluation, and the
//! checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod inference;
pub mod network;
pub mod params;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{DataConfig, NetworkConfig, NoiseTable, RunConfig, SccbConfig, TrainerConfig};
pub use error::{Error, Result};
pub use inference::{infer_full_raster, Model, SegmentationModel, StitchPlan, Stitched};
pub use network::{
    build_network, ForwardOptions, ForwardOutput, Network, NoiseScale, Stage, Trace,
};
pub use params::{ImportReport, ModelParams, Param, ParamCount};
pub use trainer::{Dataset, Trainer};
