//! Desk-scale laboratory for the noise in stochastic gradient descent.
//!
//! The crate bundles everything needed to study how learning rate, batch
//! size and compute budget interact:
//!
//! * [`numkit`]: dense vectors, symmetric matrices, a seeded reproducible RNG,
//!   dominant-eigenpair estimation and a finite-difference gradient oracle.
//! * [`models`]: a per-example quadratic loss with an exact gradient-noise
//!   covariance, a small MLP classifier with ghost batch normalization on
//!   synthetic label-noise data, and minibatch samplers.
//! * [`optim`]: SGD and heavy-ball momentum, effective learning rate,
//!   temperature and the half-then-tenths step-decay schedule.
//! * [`sde`]: noise-covariance estimation, the discretized SDE simulator and
//!   the Monte-Carlo checks built on it.
//! * [`sweep`]: budgeted training runs, best-k-of-n aggregation, optimal
//!   learning-rate selection and the experiment templates.
//! * [`report`]: Table-style text reports and plot-ready CSV.
//! * [`config`]: the versioned sweep configuration schema used by the CLI.

pub mod config;
pub mod error;
pub mod models;
pub mod numkit;
pub mod optim;
pub mod report;
pub mod sde;
pub mod sweep;

pub use error::{Error, Result};
