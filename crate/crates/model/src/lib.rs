//! Learned components: the conditioning encoder, the diffusion decoder,
//! training losses and optimizer, the guided sampler and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod kinematics;
pub mod layers;
pub mod losses;
pub mod network;
pub mod optim;
pub mod params;
pub mod sampler;
pub mod train;

use thiserror::Error;

pub use config::{ConfigError, RunConfig};
pub use losses::LossReport;
pub use network::HamosModel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("tensor shapes {left:?} and {right:?} differ")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("{what} has {got} frames, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("non-finite loss at step {step}: {report:?}")]
    NonFiniteLoss { step: u64, report: LossReport },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Geometry(#[from] hamos_core::geometry::GeometryError),
    #[error(transparent)]
    Conditioning(#[from] hamos_core::conditioning::ConditioningError),
    #[error(transparent)]
    Augmentation(#[from] hamos_core::augmentation::AugmentationError),
    #[error(transparent)]
    Guidance(#[from] hamos_core::guidance::GuidanceError),
    #[error(transparent)]
    Schedule(#[from] hamos_core::schedule::ScheduleError),
}
