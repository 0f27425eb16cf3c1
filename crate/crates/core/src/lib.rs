//! Filtering for jump Markov systems: switching state-space models, classical
//! model-based filters, and a learned mode-aware Kalman filter.

pub mod baselines;
pub mod error;
pub mod jmfnet;
pub mod filters;
pub mod linalg;
pub mod neural;
pub mod scenarios;
pub mod ssm;

pub use error::{Error, Result};
