//! Realized local volatility surfaces from high-frequency prices.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`] loads or synthesizes a session of ticks and maps time and
//!    price onto the unit interval.
//! 2. [`grid`] partitions the (time, price) plane, records which cells the
//!    path visited, and collects per-cell log-returns.
//! 3. [`model`] defines a truncated stick-breaking Gaussian mixture per cell
//!    whose component means are linear in time and log-price, together with
//!    its priors, masked log-posterior and analytic gradient.
//! 4. [`sampler`] fits the model with Hamiltonian Monte Carlo.
//! 5. [`surface`] turns the retained draws into an annualized volatility
//!    surface with credible intervals, including cells the path never visited.
//!
//! [`voltools`] holds the Black-Scholes, implied-volatility and Dupire tools
//! used to compare the realized surface with option markets, and
//! [`pipeline`] wires everything together behind a single [`config::RunConfig`].

pub mod config;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod surface;
pub mod voltools;

pub use error::{Error, Result};
