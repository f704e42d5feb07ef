//! Multivariate time-series anomaly detection with attention-based time-lagged
//! causal discovery, disentangled variational representations, POT
//! thresholding and root-cause ranking.

pub mod autograd;
pub mod cli;
pub mod cdr;
pub mod data;
pub mod error;
pub mod graphs;
pub mod metrics;
pub mod model;
pub mod necr;
pub mod params;
pub mod pipeline;
pub mod scoring;
pub mod tdr;

pub use error::{Error, Result};
