//! Simulation lab for one-dimensional McKean-Vlasov SDEs with common noise.
//!
//! The crate covers the coefficient model and its assumption checks
//! ([`model`]), the reflection coupling and concave distance ([`coupling`]),
//! closed-form rates ([`rates`]), particle simulation ([`simulate`]),
//! Monte Carlo estimators ([`metrics`]) and the experiment driver behind the
//! `mkvlab` binary ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rates;
pub mod report;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use report::VerificationReport;
