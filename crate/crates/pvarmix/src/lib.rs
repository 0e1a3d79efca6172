//! Bayesian estimation of panel vector autoregressions with cross-country
//! pooling and factor stochastic volatility.
//!
//! Each country's domestic lag coefficients are treated as a draw from a
//! deliberately overfitted finite mixture of Gaussians whose superfluous
//! components are emptied by shrinkage priors on the weights, so country
//! groups and their number are estimated rather than imposed. Coefficients on
//! other countries' lags carry a country-level normal-gamma prior (a global
//! scale per country, a local scale per coefficient) that decides whether
//! cross-country lagged dependencies are supported by the data. Reduced-form
//! errors follow a factor stochastic volatility model, keeping the
//! time-varying covariance matrix parsimonious.
//!
//! The crate provides:
//!
//! - [`dist`] / [`bessel`]: exact samplers (generalized inverse Gaussian,
//!   Dirichlet, gamma family) and the log Bessel-K special function;
//! - [`panel`]: data layout, design matrices, conditional likelihood;
//! - [`regression`], [`factor_sv`], [`mixture`], [`shrinkage`]: the Gibbs
//!   blocks;
//! - [`sampler`]: sweep orchestration, chain management and diagnostics;
//! - [`simlab`]: synthetic data generation and the estimator benchmark
//!   harness;
//! - [`forecast`]: predictive simulation and recursive out-of-sample scoring;
//! - [`cli`]: the command-line front end used by the `pvarmix` binary.
//!
//! Runnable walkthroughs for every capability live under `examples/`; start
//! with `cargo run --release --example simulate_panel`.

pub mod bessel;
pub mod cli;
pub mod config;
pub mod dist;
pub mod error;
pub mod factor_sv;
pub mod forecast;
pub mod io;
pub mod mixture;
pub mod panel;
pub mod regression;
pub mod rng;
pub mod sampler;
pub mod shrinkage;
pub mod simlab;
pub mod state;
pub mod store;

pub use error::{Error, Result};
pub use panel::{ModelConfig, PanelData};
pub use rng::RngStream;
pub use sampler::run_chain;
pub use state::ParameterState;
pub use store::DrawStore;
