//! Stage-aware class-incremental learning in feature space.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod protocol;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
