//! Federated non-smooth optimization with multiple local steps: the MOPES
//! solver, the FedMLS protocol built on it, FedAvg/Scaffold/Scaffnew
//! baselines, a hinge-loss SVM problem model and an experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
mod clock;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod fedmls;
pub mod linalg;
pub mod metrics;
pub mod mopes;
pub mod problem;
pub mod reference;
pub mod rng;

pub use error::{Error, Result};
