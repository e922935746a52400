//! Everything around the math: byte corpora and a synthetic source,
//! checkpoints, the experiment runner and reports.

pub mod checkpoint;
pub mod corpus;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod report;
pub mod synthetic;

pub use error::{HarnessError, Result};
