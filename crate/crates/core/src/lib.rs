//! Simulation and co-tuning of communication/computation overlap on a
//! modeled GPU.
//!
//! The crate models how communication channels steal SMs and memory
//! bandwidth from concurrently running kernels, simulates one compute stream
//! against one comm stream, and tunes the communication configurations with a
//! priority-guided search. An exhaustive grid search and a naive sequential
//! tuner serve as baselines.

pub mod cli;
pub mod commperf;
pub mod contention;
pub mod error;
pub mod model;
pub mod oracle;
pub mod simulator;
pub mod tuner;
pub mod workloads;

pub use error::{Error, Result};
