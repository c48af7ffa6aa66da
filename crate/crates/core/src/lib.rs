//! Dynamic mode decomposition under dither-quantized measurements.
//!
//! Dithered quantization of the snapshot matrices acts, on average, like a
//! ridge penalty of strength `eps^2 / 12` on the DMD least-squares problem.
//! This crate provides the quantizer, full and reduced DMD, the matching
//! ridge estimator and its negative-regularizer recovery, the benchmark
//! systems, and a deterministic Monte-Carlo harness for word-length sweeps.

// `!(x > y)` is used on purpose so NaN lands in the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod dmd;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod preprocessing;
pub mod quantizer;
pub mod systems;

pub use dmd::{
    build_snapshots, dmd_full, dmd_reduced, objective_decomposition_check, predict_full, predict_reduced,
    recover_regularized, ridge_dmd, FullDmd, RankRule, ReducedDmd, SnapshotPair,
};
pub use error::{Error, Result};
pub use experiment::{run_recovery_study, run_sweep, ExperimentConfig, SweepReport};
pub use quantizer::{DitherStream, QuantizerSpec};
pub use systems::{simulate, SystemSpec, TrajectoryConfig};
