//! Position- and orientation-aided beam selection for indoor mmWave links.
//!
//! The crate covers the whole pipeline: an image-method channel surrogate for a
//! shoebox room, uniform planar array codebooks, labeled dataset generation,
//! three neural recommenders (single-task, multi-task, extended multi-task),
//! the fingerprinting and hierarchical-search baselines, and the evaluation
//! metrics used to compare them.

pub mod channel;
pub mod codebook;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod neuralnet;
pub mod rng;
pub mod scenario;
pub mod selectors;

pub use channel::{ArrayDims, BlockageConfig, ChannelMatrix, PropagationPath, Room};
pub use codebook::{Codebook, GainMatrix, PairIndex, RssMatrix};
pub use dataset::{Dataset, LabelMatrix, Sample};
pub use error::{Error, Result};
pub use eval::{Method, ScanOutcome, SweepRow};
pub use geometry::{ArrayAngles, Orientation, Pose, RotationMatrix};
pub use neuralnet::{CandidateList, HeadKind, MlpModel, TrainConfig};
pub use scenario::ScenarioConfig;
pub use selectors::{GifpTable, HbsResult};

/// Convert a power in dBm to linear watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}
