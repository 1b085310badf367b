//! Transient analysis of the time-inhomogeneous M_t/M_t/1 queue with
//! balking, catastrophes, server failures and repairs: truncated generators,
//! a fixed-step forward Kolmogorov solver, logarithmic-norm ergodicity rates
//! and perturbation bounds, each checked against integrated trajectories.

pub mod cli;
pub mod csvfmt;
pub mod error;
pub mod generator;
pub mod lognorm;
pub mod perturbation;
pub mod rates;
pub mod transient;

pub use error::{Error, Result};
