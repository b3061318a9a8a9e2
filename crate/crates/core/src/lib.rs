//! Credit portfolio risk under fluctuating asset correlations.
//!
//! The library is organized around the pipeline:
//! - [`market`]: price ingestion, returns, rolling correlation/covariance
//!   estimation and the effective-correlation reduction,
//! - [`wishart`]: the random-covariance ensemble, its analytically averaged
//!   heavy-tailed return density, the variance-mixture sampler, return
//!   aggregation and fitting of the fluctuation strength `N`,
//! - [`merton`]: Merton-style contract losses and the ensemble-averaged
//!   portfolio loss density, including the infinite-portfolio limit,
//! - [`monte_carlo`]: seed-deterministic loss simulation with VaR/ETL,
//! - [`copula`]: concurrent losses of two portfolios on one market,
//!   empirical loss copulas and Gaussian-copula deviation maps.
//!
//! All stochastic entry points take explicit 64-bit seeds and derive
//! per-trial substreams, so results are reproducible regardless of call
//! order or scheduling.

pub mod copula;
pub mod error;
pub mod linalg;
pub mod market;
pub mod merton;
pub mod monte_carlo;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod wishart;

pub use error::{Error, Result};
