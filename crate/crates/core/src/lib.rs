//! Deterministic simulator for distributed SGD with periodic model
//! averaging and lazily updated adaptive denominators.
//!
//! The crate is organized bottom-up:
//!
//! * [`math`]: dense vectors and fixed-order reductions;
//! * [`problems`]: synthetic objectives and per-worker shards;
//! * [`optimizers`]: pure single-step update rules;
//! * [`cluster`]: the multi-worker loop, synchronization and traffic ledger;
//! * [`analysis`]: the log-sum inequality, the explicit convergence bound and
//!   trace reductions;
//! * [`config`] and [`experiment`]: run configuration, sweeps, comparisons.

// Validation uses `!(x > 0.0)` and friends on purpose so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cluster;
pub mod config;
pub mod error;
pub mod experiment;
pub mod math;
pub mod optimizers;
pub mod problems;

pub use cluster::{run, synchronize, Algorithm, CommLedger, SimOptions, SyncMode, SyncSchedule, Trace};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use math::ParamVector;
pub use problems::{Problem, ProblemKind, ProblemSpec};
