//! Stick-breaking Gaussian mixture over the time-price grid.
//!
//! Each cell `(i, j)` carries a `K`-component mixture with unit-free weights
//! from a truncated stick-breaking process and component means linear in the
//! cell's time and log-price. Coefficients are shared across cells, which is
//! what lets unvisited cells borrow strength from the observed path.

mod mixture;
mod params;
mod posterior;

pub use mixture::{
    log_stick_weights, log_sum_exp, mixture_logpdf, mixture_moments, standard_normal_logpdf, stick_break,
    MixtureSpec, LOG_INV_SQRT_2PI,
};
pub use params::{log1m_logistic, log_logistic, logistic, softplus, Dims, ModelParams, ParamsCheckpoint};
pub use posterior::{
    cell_mixture, check_dims, component_means, grad_log_posterior, grad_log_prior, log_likelihood, log_posterior,
    log_prior, Posterior,
};
