//! AdaFSNet: a time-series classifier built on prime-sized convolution kernels.
//!
//! The crate contains everything needed to plan, train and evaluate the network:
//!
//! * [`tape`], [`param`], [`gradcheck`]: a small reverse-mode tensor engine with Adam.
//! * [`plan`]: prime kernel sets whose stacked receptive fields cover every scale.
//! * [`targetdrop`]: channel attention and attention-targeted structured dropout.
//! * [`model`]: the OS-Block, dense blocks, residual path and classification head.
//! * [`data`]: UCR/UEA file parsing and preprocessing.
//! * [`train`]: training loop, metrics, ablation driver and reports.

pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod param;
pub mod plan;
pub mod real;
pub mod tape;
pub mod targetdrop;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use param::{Adam, Parameter};
pub use real::Real;
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
pub use data::{Split, TimeSeriesDataset};
pub use model::{AdaFsNet, ModelConfig};
pub use plan::{KernelPlan, PlannerConfig};
pub use targetdrop::TargetDropConfig;
pub use train::{ExperimentConfig, RunReport, TrainConfig};
