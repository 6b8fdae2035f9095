//! Multilevel Monte Carlo ensemble forecasts for scalar SDE observables.
//!
//! A multilevel hierarchy of ensembles (a large coarse level-0 ensemble plus
//! positively coupled fine/coarse pair ensembles on finer levels) is fused
//! into one ensemble forecast by inverse transform sampling on per-level
//! order statistics. The forecast can then be verified with ordinary
//! ensemble tools; this crate provides PIT histograms and a calibration
//! classifier, and an Ornstein–Uhlenbeck experiment driver.

pub mod error;
pub mod experiment;
pub mod forecast;
pub mod mlmc;
pub mod rng;
pub mod sde;
pub mod verification;

pub use error::{Error, Result};
