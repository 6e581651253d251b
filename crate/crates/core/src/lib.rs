//! Ideal-mixture (droplet) approximation of a dilute classical gas with
//! stable, compactly supported pair interactions.
//!
//! Modules follow the pipeline: pair potentials, cluster decomposition,
//! ground-state energies, cluster partition functions, the ideal-mixture
//! solver, Monte Carlo samplers, and low-temperature Saha checks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod groundstate;
pub mod ideal;
pub mod io;
pub mod partfun;
pub mod potential;
pub mod saha;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
