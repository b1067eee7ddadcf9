//! Multi-agent driving simulator with a MAPPO trainer, per-episode actuation
//! randomization, a rule-based RSS/lane-change baseline and an evaluation
//! harness that compares clean-simulator and perturbed ("pseudo-real") runs.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod config;
pub mod env;
pub mod error;
pub mod geom;
pub mod harness;
pub mod mappo;
pub mod randomization;
pub mod rng;
pub mod track;
pub mod vehicle;

pub use error::{CheckpointError, Error, Result};
