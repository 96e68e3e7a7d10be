//! Regime identification for multivariate non-stationary time series.
//!
//! The pipeline pools non-overlapping windowed covariance matrices, clusters
//! them on the SPD manifold, turns the cluster labels into contiguous regimes
//! and runs VAR Granger-causal discovery per regime.

pub mod clustering;
pub mod defaults;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod reproduce;
pub mod rng;
pub mod series;
pub mod spd;
pub mod synth;
pub mod var;
pub mod windows;

pub use error::{Error, Result};
