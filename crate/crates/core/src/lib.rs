pub mod baselines;
pub mod cli;
pub mod data;
pub mod decoding;
pub mod diffmath;
pub mod error;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
