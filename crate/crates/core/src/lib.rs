//! Channel/spatial attention bilinear pooling (CSAB) image classifier on a
//! small VGG-style backbone, with the tensor/autodiff core it trains on.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod kernels;
pub mod model;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use augment::{AugmentConfig, Draw};
pub use config::RunConfig;
pub use dataset::{DatasetManifest, LabelMap, SampleRecord, SplitSpec};
pub use error::{CheckpointError, Error, Result};
pub use infer::{InferenceResult, LatencyStats, Segment, TemporalSmoother};
pub use kernels::Padding;
pub use model::{HeadKind, ModelSpec};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
pub use train::{Checkpoint, ConfusionMatrix, EpochStats, TrainConfig};
