//! Simulation and verification lab for nodal measures of stationary Gaussian
//! fields.

pub mod cli;
pub mod config;
pub mod covariance;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kac_rice;
pub mod nodal;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod sheet;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
