//! TSCNet: salient object detection for remote sensing images with a
//! texture-semantic collaboration module.
//!
//! The crate builds the network on top of `tscnet-tensor`, and provides
//! the hybrid loss, the evaluation metrics, synthetic data, checkpoints and
//! the training harness behind the `tscnet` binary.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;

pub use config::{ModelConfig, RunConfig, TrainConfig, Units};
pub use error::{Error, Result};
pub use params::{Bindings, ParamStore};
