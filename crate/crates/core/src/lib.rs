//! Comorbidity-informed transfer learning on dynamic functional connectivity.
//!
//! The pipeline, stage by stage:
//!
//! 1. [`dfc`] turns each subject's `T x R` regional time series into sliding-window
//!    Pearson correlation matrices.
//! 2. [`transfer`] trains the edge-to-node convolutional [`classifier`] on a source
//!    cohort, freezes the best epoch and uses it to pseudo-label every window of
//!    the target cohort.
//! 3. [`erg`] keeps each target subject's majority pseudo-label set, average-pools
//!    it into one matrix and refines it with an autoencoder trained jointly with
//!    the downstream classifier.
//! 4. [`pipeline`] orchestrates the run, generates synthetic cohorts, runs
//!    subject-level k-fold cross-validation and the ablation modes.
//!
//! Everything is `f64`, single-threaded and bitwise reproducible for a fixed seed.

pub mod classifier;
pub mod dfc;
pub mod erg;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
