//! Eye-movement biometric authentication toolkit.

pub mod batcher;
pub mod config;
pub mod error;
pub mod eval;
pub mod folds;
pub mod hpo;
pub mod ingest;
pub mod model;
pub mod msloss;
pub mod numeric;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
