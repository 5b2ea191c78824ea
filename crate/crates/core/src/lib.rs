//! Numerical laboratory for the heat equation with transport noise on bounded
//! domains: vortex-patch noise, covariance diagnostics, eddy diffusivity
//! operators, principal eigenvalues and Monte Carlo checks of the averaged
//! equation.

pub mod config;
pub mod covariance;
pub mod eigen;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kraichnan;
pub mod quad;
pub mod sparse;
pub mod spde;
pub mod vortex;

pub use error::{Error, Result};
