//! Video action recognition with a temporal shift module.
//!
//! The crate covers the whole pipeline: a small tensor engine with analytic
//! gradients, the temporal shift operator and the residual TSM classifier,
//! a deterministic synthetic multi-modal clip generator, two-phase training
//! with checkpoints, and a weighted softmax ensemble with top-k evaluation.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;

pub mod model;
pub mod nn;
pub mod ops;
pub mod pipeline;

pub mod tensor;

pub mod seed;
pub mod train;
pub mod tsm;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
