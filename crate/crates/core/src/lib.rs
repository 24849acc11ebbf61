//! Battery state-of-health prognostics from pack telemetry.
//!
//! The crate turns minute-level pack telemetry into a regular daily series,
//! derives charging features and state of health, decomposes the health
//! signal with empirical mode decomposition and the Hilbert transform, fits
//! regression-tree ensembles over windowed supervised frames, and evaluates
//! them with a rolled walk-forward backtest that reports point-wise 95%
//! confidence intervals.

pub mod backtest;
pub mod config;
pub mod emd;
pub mod error;
pub mod hilbert;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod preprocess;
pub mod reframe;
pub mod series;
pub mod stats;
pub mod svg;
pub mod synth;
pub mod trees;

pub use error::{Error, Result};
