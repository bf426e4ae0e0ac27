pub mod dataset;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod features;
pub mod harness;
pub mod model;
pub mod simulators;
pub mod stats;

pub use error::{Error, Result};
