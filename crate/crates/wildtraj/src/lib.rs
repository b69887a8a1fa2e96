//! Wildlife species classification from daily GPS movement trajectories.
//!
//! The pipeline turns raw telemetry CSV exports into fixed-grid daily
//! sequences, derives kinematic features on the unit sphere, builds
//! leakage-safe train/val/test splits (whole-study holdout for test,
//! animal-level partition for train/val), and trains masked sequence
//! classifiers (transformer, LSTM, 1D CNN, TCN) on a small reverse-mode
//! autodiff engine. A synthetic correlated-random-walk generator provides
//! labeled data for end-to-end verification without any external download.

pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod resample;
pub mod split;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
