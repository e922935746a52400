//! Staged training for decoder-only transformer language models.
//!
//! The crate grows an entire training state (parameters, Adam moments and
//! the learning-rate clock) from a small model into a larger one without
//! changing the loss, and plans when to grow using either scaling-law
//! optimization or loss-curve slope thresholds.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the laboratory runs on.

pub mod autograd;
pub mod error;
pub mod growth;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod scaling;
pub mod schedule;
pub mod simplex;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autograd::{Graph, Reduction, Var};
pub use error::{Error, Result};
pub use growth::{GrowthKind, GrowthOp, LrPolicy, OptimizerPolicy};
pub use model::{ModelConfig, ParamRole, TokenBatch};
pub use optim::{AdamConfig, DecayShape, LrSchedule};
pub use scalar::Scalar;
pub use scaling::{ScalingLawConstants, StageSchedule};
pub use schedule::{LossCurve, PracticalConstants, StagePlan};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Model64 = model::Model<f64>;
pub type Parameters64 = model::Parameters<f64>;
pub type AdamState64 = optim::AdamState<f64>;
pub type TrainingState64 = optim::TrainingState<f64>;
pub type Graph64 = autograd::Graph<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Model32 = model::Model<f32>;
