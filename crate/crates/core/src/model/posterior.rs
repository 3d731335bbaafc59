//! Masked log-posterior of the stick-breaking mixture and its gradient.
//!
//! Priors, in the constrained space:
//!
//! * `time_effect`, `price_effect`, `alpha` ~ N(0, 1)
//! * concentration `α_ij` ~ Beta(1, 1)
//! * stick fraction `γ_ijk | α_ij` ~ Beta(1, α_ij)
//!
//! `γ` and `α` are sampled on the logit scale, so the density carries the
//! logistic Jacobian `σ(x)(1 − σ(x))` for each of those coordinates. Only
//! visited cells contribute likelihood; returns stored in a masked-off cell are
//! ignored.

use super::mixture::{log_stick_weights, standard_normal_logpdf, MixtureSpec, LOG_INV_SQRT_2PI};
use super::params::{log1m_logistic, log_logistic, logistic, Dims, ModelParams};
use crate::error::{Error, Result};
use crate::grid::GridData;
use crate::sampler::LogDensity;

pub fn check_dims(params: &ModelParams, grid: &GridData) -> Result<()> {
    let d = params.dims;
    if d.n_time != grid.n_time() || d.n_price != grid.n_price() {
        return Err(Error::Dimension(format!(
            "parameters are {}x{} but grid is {}x{}",
            d.n_time,
            d.n_price,
            grid.n_time(),
            grid.n_price()
        )));
    }
    if params.coords.len() != d.len() {
        return Err(Error::Dimension(format!(
            "expected {} coordinates, got {}",
            d.len(),
            params.coords.len()
        )));
    }
    Ok(())
}

#[inline]
fn cell_mean(coords: &[f64], dims: &Dims, grid: &GridData, i: usize, j: usize, k: usize) -> f64 {
    let kk = dims.n_comp;
    let te = coords[dims.time_effect_range().start + i * kk + k];
    let pe = coords[dims.price_effect_range().start + j * kk + k];
    let a = coords[dims.alpha_range().start + k];
    te * grid.cell_time[i] + pe * grid.cell_logprice[j] + a
}

/// `μ_ijk = time_effect[i,k]·t_i + price_effect[j,k]·log S_j + alpha[k]`,
/// flattened as `[(i * J + j) * K + k]`.
pub fn component_means(params: &ModelParams, grid: &GridData) -> Result<Vec<f64>> {
    check_dims(params, grid)?;
    let d = params.dims;
    let mut out = Vec::with_capacity(d.n_cells() * d.n_comp);
    for i in 0..d.n_time {
        for j in 0..d.n_price {
            for k in 0..d.n_comp {
                out.push(cell_mean(&params.coords, &d, grid, i, j, k));
            }
        }
    }
    Ok(out)
}

/// The mixture of cell `(i, j)` under `params`.
pub fn cell_mixture(params: &ModelParams, grid: &GridData, i: usize, j: usize) -> Result<MixtureSpec> {
    check_dims(params, grid)?;
    let d = params.dims;
    let mut log_w = vec![0.0; d.n_comp];
    log_stick_weights(params.cell_sticks(i, j), &mut log_w);
    let weights = normalized_weights(&log_w);
    let means = (0..d.n_comp)
        .map(|k| cell_mean(&params.coords, &d, grid, i, j, k))
        .collect();
    MixtureSpec::new(weights, means, params.component_scale)
}

/// Weights from log weights, renormalized against rounding so they sum to one.
pub(crate) fn normalized_weights(log_w: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Log-density of Beta(1, b) at `x` in (0, 1), given `log(1 - x)`.
#[inline]
fn beta_1_b_logpdf(log_b: f64, b: f64, log1m_x: f64) -> f64 {
    log_b + (b - 1.0) * log1m_x
}

fn prior_into(coords: &[f64], dims: &Dims, mut grad: Option<&mut [f64]>) -> f64 {
    let mut lp = 0.0;
    let n_gauss = dims.alpha_range().end;
    for (d, &x) in coords[..n_gauss].iter().enumerate() {
        lp += standard_normal_logpdf(x);
        if let Some(g) = grad.as_deref_mut() {
            g[d] -= x;
        }
    }

    let kk = dims.n_comp;
    let stick0 = dims.stick_range().start;
    let conc0 = dims.conc_range().start;
    for cell in 0..dims.n_cells() {
        let c = coords[conc0 + cell];
        let conc = logistic(c);
        let log_conc = log_logistic(c);
        let log1m_conc = log1m_logistic(c);
        // Beta(1, 1) on α is flat; only the logistic Jacobian remains.
        lp += log_conc + log1m_conc;
        let mut d_conc = 1.0 - 2.0 * conc;

        for k in 0..kk {
            let s = coords[stick0 + cell * kk + k];
            let gamma = logistic(s);
            let log_g = log_logistic(s);
            let log1m_g = log1m_logistic(s);
            lp += beta_1_b_logpdf(log_conc, conc, log1m_g) + log_g + log1m_g;
            if let Some(g) = grad.as_deref_mut() {
                g[stick0 + cell * kk + k] += (1.0 - gamma) - conc * gamma;
            }
            // d/dc [ln α + (α − 1) ln(1 − γ)] with dα/dc = α(1 − α)
            d_conc += (1.0 - conc) + conc * (1.0 - conc) * log1m_g;
        }
        if let Some(g) = grad.as_deref_mut() {
            g[conc0 + cell] += d_conc;
        }
    }
    lp
}

fn likelihood_into(
    coords: &[f64],
    dims: &Dims,
    scale: f64,
    grid: &GridData,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let kk = dims.n_comp;
    let log_norm = LOG_INV_SQRT_2PI - scale.ln();
    let inv_var = 1.0 / (scale * scale);
    let te0 = dims.time_effect_range().start;
    let pe0 = dims.price_effect_range().start;
    let a0 = dims.alpha_range().start;
    let stick0 = dims.stick_range().start;

    let mut log_w = vec![0.0; kk];
    let mut mu = vec![0.0; kk];
    let mut terms = vec![0.0; kk];
    let mut resp_sum = vec![0.0; kk];
    let mut mean_grad = vec![0.0; kk];

    let mut ll = 0.0;
    for i in 0..dims.n_time {
        for j in 0..dims.n_price {
            let cell = i * dims.n_price + j;
            if !grid.mask[cell] {
                continue;
            }
            let sticks = &coords[stick0 + cell * kk..stick0 + (cell + 1) * kk];
            log_stick_weights(sticks, &mut log_w);
            for (k, m) in mu.iter_mut().enumerate() {
                *m = cell_mean(coords, dims, grid, i, j, k);
            }
            resp_sum.iter_mut().for_each(|x| *x = 0.0);
            mean_grad.iter_mut().for_each(|x| *x = 0.0);

            for &x in &grid.returns[cell] {
                let mut m = f64::NEG_INFINITY;
                for k in 0..kk {
                    let z = (x - mu[k]) / scale;
                    terms[k] = log_w[k] + log_norm - 0.5 * z * z;
                    m = m.max(terms[k]);
                }
                let mut total = 0.0;
                for t in terms.iter_mut() {
                    *t = (*t - m).exp();
                    total += *t;
                }
                ll += m + total.ln();
                if grad.is_some() {
                    for k in 0..kk {
                        let r = terms[k] / total;
                        resp_sum[k] += r;
                        mean_grad[k] += r * (x - mu[k]) * inv_var;
                    }
                }
            }

            if let Some(g) = grad.as_deref_mut() {
                let t = grid.cell_time[i];
                let lp = grid.cell_logprice[j];
                for k in 0..kk {
                    g[te0 + i * kk + k] += mean_grad[k] * t;
                    g[pe0 + j * kk + k] += mean_grad[k] * lp;
                    g[a0 + k] += mean_grad[k];
                }
                // ∂ log w_k / ∂ s_l = (1 − γ_l) if k = l, −γ_l if k > l, 0 otherwise;
                // the last fraction never enters the weights.
                let mut tail = 0.0;
                for l in (0..kk.saturating_sub(1)).rev() {
                    tail += resp_sum[l + 1];
                    let gamma = logistic(sticks[l]);
                    g[stick0 + cell * kk + l] += resp_sum[l] * (1.0 - gamma) - gamma * tail;
                }
            }
        }
    }
    ll
}

pub fn log_prior(params: &ModelParams) -> f64 {
    prior_into(&params.coords, &params.dims, None)
}

pub fn grad_log_prior(params: &ModelParams) -> Vec<f64> {
    let mut g = vec![0.0; params.coords.len()];
    prior_into(&params.coords, &params.dims, Some(&mut g));
    g
}

/// Sum of mixture log-densities over returns in visited cells.
pub fn log_likelihood(params: &ModelParams, grid: &GridData) -> Result<f64> {
    check_dims(params, grid)?;
    Ok(likelihood_into(&params.coords, &params.dims, params.component_scale, grid, None))
}

pub fn log_posterior(params: &ModelParams, grid: &GridData) -> Result<f64> {
    check_dims(params, grid)?;
    Ok(log_prior(params)
        + likelihood_into(&params.coords, &params.dims, params.component_scale, grid, None))
}

/// Analytic gradient of [`log_posterior`] in the flat unconstrained layout.
pub fn grad_log_posterior(params: &ModelParams, grid: &GridData) -> Result<Vec<f64>> {
    check_dims(params, grid)?;
    let mut g = vec![0.0; params.coords.len()];
    Posterior::new(grid, params.dims, params.component_scale)?.log_density_grad(&params.coords, &mut g);
    Ok(g)
}

/// The posterior as a target density over flat coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    grid: &'a GridData,
    dims: Dims,
    component_scale: f64,
}

impl<'a> Posterior<'a> {
    pub fn new(grid: &'a GridData, dims: Dims, component_scale: f64) -> Result<Self> {
        if dims.n_time != grid.n_time() || dims.n_price != grid.n_price() {
            return Err(Error::Dimension(format!(
                "model is {}x{} but grid is {}x{}",
                dims.n_time,
                dims.n_price,
                grid.n_time(),
                grid.n_price()
            )));
        }
        if !(component_scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "component scale must be positive, got {component_scale}"
            )));
        }
        Ok(Self {
            grid,
            dims,
            component_scale,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn grid(&self) -> &GridData {
        self.grid
    }

    pub fn component_scale(&self) -> f64 {
        self.component_scale
    }
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.dims.len()
    }

    fn log_density(&self, q: &[f64]) -> f64 {
        prior_into(q, &self.dims, None) + likelihood_into(q, &self.dims, self.component_scale, self.grid, None)
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lp = prior_into(q, &self.dims, Some(grad));
        lp + likelihood_into(q, &self.dims, self.component_scale, self.grid, Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::mixture::mixture_logpdf;
    use crate::rng;
    use rand::Rng;

    fn toy_grid(n_time: usize, n_price: usize) -> GridData {
        GridData::empty(GridSpec {
            n_time,
            n_price,
            price_min: 400.0,
            price_max: 450.0,
            session_length: 23_400.0,
        })
        .unwrap()
    }

    /// 3x3 grid with a diagonal path and a few returns per visited cell.
    fn path_grid(rng: &mut rng::Rng) -> GridData {
        let mut g = toy_grid(3, 3);
        for (i, j) in [(0, 0), (1, 1), (1, 2), (2, 2)] {
            for _ in 0..3 {
                g.push_return(i, j, rng.random_range(-2.0..2.0));
            }
        }
        g
    }

    fn central_difference(params: &ModelParams, grid: &GridData, h: f64) -> Vec<f64> {
        (0..params.coords.len())
            .map(|d| {
                let mut up = params.clone();
                let mut dn = params.clone();
                up.coords[d] += h;
                dn.coords[d] -= h;
                (log_posterior(&up, grid).unwrap() - log_posterior(&dn, grid).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn constant_and_single_factor_means() {
        let grid = toy_grid(3, 2);
        let d = Dims::new(3, 2, 2).unwrap();
        let mut p = ModelParams::zeros(d, 1.0);
        p.alpha_mut().copy_from_slice(&[0.7, 0.7]);
        assert!(component_means(&p, &grid).unwrap().iter().all(|&m| m == 0.7));

        let mut p = ModelParams::zeros(d, 1.0);
        p.time_effect_mut().iter_mut().for_each(|x| *x = 1.0);
        let mu = component_means(&p, &grid).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(mu[(i * 2 + j) * 2 + k], grid.cell_time[i]);
                }
            }
        }
    }

    #[test]
    fn mean_spot_check() {
        let grid = toy_grid(3, 2);
        let d = Dims::new(3, 2, 2).unwrap();
        let p = ModelParams::init_standard_normal(d, 1.0, &mut rng::seeded(4));
        let mu = component_means(&p, &grid).unwrap();
        // cell (2, 1), component 1: t = 5/6, log S = log(437.5)
        let hand = p.time_effect()[2 * 2 + 1] * (5.0 / 6.0) + p.price_effect()[2 + 1] * 437.5f64.ln() + p.alpha()[1];
        assert!((mu[(2 * 2 + 1) * 2 + 1] - hand).abs() < 1e-12);
    }

    #[test]
    fn prior_at_origin() {
        let d = Dims::new(1, 1, 1).unwrap();
        let p = ModelParams::zeros(d, 1.0);
        // three N(0,1) coordinates at zero, α = γ = 0.5:
        // conc Jacobian ln 0.25; stick Beta(1, 0.5) at 0.5 plus Jacobian ln 0.25
        let expected = 3.0 * LOG_INV_SQRT_2PI
            + 0.25f64.ln()
            + (0.5f64.ln() + (0.5 - 1.0) * 0.5f64.ln())
            + 0.25f64.ln();
        assert!((log_prior(&p) - expected).abs() < 1e-14);
        // Beta(1, 1) density is uniform
        assert_eq!(beta_1_b_logpdf(0.0, 1.0, 0.3f64.ln()), 0.0);
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let d = Dims::new(2, 2, 3).unwrap();
        let mut rng = rng::seeded(21);
        for _ in 0..5 {
            let p = ModelParams::init_standard_normal(d, 1.0, &mut rng);
            let g = grad_log_prior(&p);
            let h = 1e-5;
            for k in 0..p.coords.len() {
                let mut up = p.clone();
                let mut dn = p.clone();
                up.coords[k] += h;
                dn.coords[k] -= h;
                let fd = (log_prior(&up) - log_prior(&dn)) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "coord {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn empty_grid_posterior_is_prior() {
        let grid = toy_grid(2, 2);
        let p = ModelParams::init_standard_normal(Dims::new(2, 2, 2).unwrap(), 1.0, &mut rng::seeded(1));
        assert_eq!(log_posterior(&p, &grid).unwrap(), log_prior(&p));
    }

    #[test]
    fn masked_returns_are_ignored() {
        let mut rng = rng::seeded(2);
        let grid = path_grid(&mut rng);
        let p = ModelParams::init_standard_normal(Dims::new(3, 3, 2).unwrap(), 1.0, &mut rng);
        let before = log_posterior(&p, &grid).unwrap();
        let grad_before = grad_log_posterior(&p, &grid).unwrap();
        let mut dirty = grid.clone();
        dirty.returns[dirty.spec.index(2, 0)].extend([0.3, -5.0, 8.0]);
        assert!(!dirty.mask[dirty.spec.index(2, 0)]);
        assert_eq!(log_posterior(&p, &dirty).unwrap(), before);
        assert_eq!(grad_log_posterior(&p, &dirty).unwrap(), grad_before);
    }

    #[test]
    fn single_return_composes_prior_and_mixture() {
        let mut grid = toy_grid(2, 2);
        grid.push_return(1, 0, 0.37);
        let p = ModelParams::init_standard_normal(Dims::new(2, 2, 3).unwrap(), 0.8, &mut rng::seeded(9));
        let mix = cell_mixture(&p, &grid, 1, 0).unwrap();
        let expected = log_prior(&p) + mixture_logpdf(0.37, &mix);
        assert!((log_posterior(&p, &grid).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::seeded(17);
        let grid = path_grid(&mut rng);
        let d = Dims::new(3, 3, 2).unwrap();
        for _ in 0..10 {
            let p = ModelParams::init_standard_normal(d, 1.0, &mut rng);
            let g = grad_log_posterior(&p, &grid).unwrap();
            let fd = central_difference(&p, &grid, 1e-5);
            for (k, (a, b)) in g.iter().zip(&fd).enumerate() {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "coord {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn unvisited_coefficients_see_only_the_prior() {
        let mut rng = rng::seeded(8);
        let mut grid = toy_grid(3, 3);
        // only row i = 0, column j = 0 visited
        grid.push_return(0, 0, 0.4);
        grid.push_return(0, 0, -1.1);
        let d = Dims::new(3, 3, 2).unwrap();
        let p = ModelParams::init_standard_normal(d, 1.0, &mut rng);
        let g = grad_log_posterior(&p, &grid).unwrap();
        let gp = grad_log_prior(&p);
        let te = d.time_effect_range().start;
        let pe = d.price_effect_range().start;
        for k in 0..2 {
            for i in 1..3 {
                assert_eq!(g[te + i * 2 + k], gp[te + i * 2 + k]);
            }
            for j in 1..3 {
                assert_eq!(g[pe + j * 2 + k], gp[pe + j * 2 + k]);
            }
        }
        for cell in 1..9 {
            for k in 0..2 {
                let idx = d.stick_range().start + cell * 2 + k;
                assert_eq!(g[idx], gp[idx]);
            }
        }
    }

    #[test]
    fn stationary_point_of_one_cell_problem() {
        // One cell, K = 1, one return x. The likelihood touches only the mean
        // coefficients: with c = t² + (log S)² + 1, the stationary point is
        // te = m·t, pe = m·log S, alpha = m where m = x / (s² + c).
        // Stick and concentration coordinates are prior-only: γ = 1/(1 + α),
        // and α solves (1 − α) + α(1 − α) ln(1 − γ) + (1 − 2α) = 0.
        let mut grid = toy_grid(1, 1);
        let x = 0.8;
        grid.push_return(0, 0, x);
        let s = 1.0;
        let t = grid.cell_time[0];
        let ls = grid.cell_logprice[0];
        let m = x / (s * s + t * t + ls * ls + 1.0);

        let f = |a: f64| {
            let g = 1.0 / (1.0 + a);
            (1.0 - a) + a * (1.0 - a) * (1.0 - g).ln() + (1.0 - 2.0 * a)
        };
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        let gamma = 1.0 / (1.0 + a);

        let d = Dims::new(1, 1, 1).unwrap();
        let p = ModelParams::from_coords(
            d,
            vec![m * t, m * ls, m, (gamma / (1.0 - gamma)).ln(), (a / (1.0 - a)).ln()],
            s,
        )
        .unwrap();
        let g = grad_log_posterior(&p, &grid).unwrap();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn permuting_returns_within_a_cell_is_harmless() {
        let mut rng = rng::seeded(30);
        let grid = path_grid(&mut rng);
        let p = ModelParams::init_standard_normal(Dims::new(3, 3, 2).unwrap(), 1.0, &mut rng);
        let mut shuffled = grid.clone();
        for r in shuffled.returns.iter_mut() {
            r.reverse();
        }
        let a = log_posterior(&p, &grid).unwrap();
        let b = log_posterior(&p, &shuffled).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn posterior_finite_for_extreme_coordinates() {
        let mut rng = rng::seeded(31);
        let grid = path_grid(&mut rng);
        let d = Dims::new(3, 3, 2).unwrap();
        for big in [50.0, 500.0, -500.0] {
            let p = ModelParams::from_coords(d, vec![big; d.len()], 1.0).unwrap();
            assert!(log_posterior(&p, &grid).unwrap().is_finite());
            assert!(grad_log_posterior(&p, &grid).unwrap().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let grid = toy_grid(2, 2);
        let p = ModelParams::zeros(Dims::new(3, 2, 1).unwrap(), 1.0);
        assert!(matches!(log_posterior(&p, &grid), Err(Error::Dimension(_))));
    }
}
