//! Bayesian models of long-term annual maximum temperature dynamics.
//!
//! The crate fits two competing models to an annual maximum temperature
//! series and compares them:
//!
//! - a coupled jump-wait random walk ([`ctrw`]), where each year-over-year
//!   change is the product of a normally distributed jump size and a gamma
//!   distributed waiting time;
//! - a semiparametric regression with a monotone spectral trend ([`bsar`]),
//!   a linear year term plus a non-decreasing function built from a squared
//!   Gaussian process.
//!
//! Both posteriors are sampled with the adaptive Metropolis-within-Gibbs
//! engine in [`mcmc`], checked with the diagnostics in [`diagnostics`],
//! and ranked with DIC, PSIS-LOO, RMSE, and MAE from [`compare`]. Data
//! ingestion and descriptive statistics live in [`series`].
//!
//! Everything is deterministic: samplers, predictions, and simulations are
//! pure functions of their inputs including the seed.

pub mod bsar;
pub mod compare;
pub mod ctrw;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod rng;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
