//! Static-path Hamiltonian Monte Carlo with a diagonal mass matrix.
//!
//! The potential is `U(q) = −log π(q)` and the kinetic energy is
//! `K(p) = ½ pᵀ M⁻¹ p`. Each step draws `p ~ N(0, M)`, integrates `L`
//! leapfrog steps of size `ε`, and accepts with probability
//! `min(1, exp(−ΔH))`. Temperature is fixed at one.
//!
//! During burn-in the step size can be tuned by dual averaging toward a target
//! acceptance probability; it is frozen before the first retained draw.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// A differentiable log-density over `R^dim`.
pub trait LogDensity {
    fn dim(&self) -> usize;

    fn log_density(&self, q: &[f64]) -> f64;

    /// Overwrites `grad` with `∇ log π(q)` and returns `log π(q)`.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Diagonal of the mass matrix; `None` means identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_diag: Option<Vec<f64>>,
    pub n_burn: usize,
    pub n_draws: usize,
    pub seed: u64,
    /// Tune the step size by dual averaging during burn-in.
    #[serde(default)]
    pub adapt_step_size: bool,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
}

fn default_target_accept() -> f64 {
    0.75
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            n_leapfrog: 20,
            mass_diag: None,
            n_burn: 1000,
            n_draws: 5000,
            seed: 0,
            adapt_step_size: true,
            target_accept: default_target_accept(),
        }
    }
}

impl HmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.n_leapfrog == 0 {
            return Err(Error::InvalidInput("leapfrog path length must be at least 1".into()));
        }
        if let Some(m) = &self.mass_diag {
            if m.len() != dim {
                return Err(Error::Dimension(format!(
                    "mass matrix has {} entries for a {dim}-dimensional target",
                    m.len()
                )));
            }
            if m.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput("mass entries must be positive and finite".into()));
            }
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidInput(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }

    pub fn mass(&self, dim: usize) -> Vec<f64> {
        self.mass_diag.clone().unwrap_or_else(|| vec![1.0; dim])
    }
}

/// `½ Σ p_d² / m_d`
pub fn kinetic(p: &[f64], mass_diag: &[f64]) -> f64 {
    0.5 * p.iter().zip(mass_diag).map(|(p, m)| p * p / m).sum::<f64>()
}

/// `H(q, p) = K(p) − log π(q)`
pub fn hamiltonian<T: LogDensity + ?Sized>(target: &T, q: &[f64], p: &[f64], mass_diag: &[f64]) -> f64 {
    kinetic(p, mass_diag) - target.log_density(q)
}

/// Position with its cached log-density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let log_density = target.log_density_grad(&q, &mut grad);
        Self {
            q,
            log_density,
            grad,
        }
    }

    fn is_finite(&self) -> bool {
        self.log_density.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.grad.iter().all(|x| x.is_finite())
    }
}

fn integrate<T: LogDensity + ?Sized>(
    target: &T,
    start: &PhasePoint,
    p0: &[f64],
    step_size: f64,
    n_steps: usize,
    mass_diag: &[f64],
) -> Result<(PhasePoint, Vec<f64>)> {
    if n_steps == 0 {
        return Err(Error::InvalidInput("leapfrog path length must be at least 1".into()));
    }
    let half = 0.5 * step_size;
    let mut q = start.q.clone();
    let mut p = p0.to_vec();
    let mut grad = start.grad.clone();
    let mut log_density = start.log_density;

    for (p, g) in p.iter_mut().zip(&grad) {
        *p += half * g;
    }
    for step in 0..n_steps {
        for ((q, p), m) in q.iter_mut().zip(&p).zip(mass_diag) {
            *q += step_size * p / m;
        }
        log_density = target.log_density_grad(&q, &mut grad);
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence);
        }
        let kick = if step + 1 == n_steps { half } else { step_size };
        for (p, g) in p.iter_mut().zip(&grad) {
            *p += kick * g;
        }
    }
    let end = PhasePoint {
        q,
        log_density,
        grad,
    };
    if !end.is_finite() || p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence);
    }
    Ok((end, p))
}

/// `n_steps` leapfrog steps from `(q, p)`; [`Error::Divergence`] on any
/// non-finite intermediate state.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &[f64],
    p: &[f64],
    step_size: f64,
    n_steps: usize,
    mass_diag: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let start = PhasePoint::new(target, q.to_vec());
    if !start.is_finite() {
        return Err(Error::Divergence);
    }
    let (end, p) = integrate(target, &start, p, step_size, n_steps, mass_diag)?;
    Ok((end.q, p))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PhasePoint,
    pub accepted: bool,
    /// `H(q*, p*) − H(q, p)`; infinite on divergence.
    pub delta_h: f64,
    /// Hamiltonian at the start of the step, after momentum refresh.
    pub energy: f64,
    pub diverged: bool,
    pub accept_prob: f64,
}

pub fn sample_momentum(mass_diag: &[f64], rng: &mut Rng) -> Vec<f64> {
    mass_diag
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m.sqrt() * z
        })
        .collect()
}

/// Energy error above which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// One HMC transition. A rejected or divergent proposal returns `state` unchanged.
pub fn hmc_step<T: LogDensity + ?Sized>(
    target: &T,
    state: &PhasePoint,
    step_size: f64,
    n_leapfrog: usize,
    mass_diag: &[f64],
    rng: &mut Rng,
) -> Result<StepOutcome> {
    let p = sample_momentum(mass_diag, rng);
    let energy = kinetic(&p, mass_diag) - state.log_density;

    let (proposal, p_new) = match integrate(target, state, &p, step_size, n_leapfrog, mass_diag) {
        Ok(x) => x,
        Err(Error::Divergence) => {
            return Ok(StepOutcome {
                state: state.clone(),
                accepted: false,
                delta_h: f64::INFINITY,
                energy,
                diverged: true,
                accept_prob: 0.0,
            })
        }
        Err(e) => return Err(e),
    };
    let new_energy = kinetic(&p_new, mass_diag) - proposal.log_density;
    let delta_h = new_energy - energy;
    let accept_prob = if delta_h <= 0.0 { 1.0 } else { (-delta_h).exp() };
    let accepted = delta_h <= 0.0 || rng.random::<f64>() < accept_prob;
    Ok(StepOutcome {
        state: if accepted { proposal } else { state.clone() },
        accepted,
        delta_h,
        energy,
        diverged: !(delta_h <= DIVERGENCE_THRESHOLD),
        accept_prob,
    })
}

/// Dual-averaging step-size tuner (Nesterov-style, as popularized by NUTS).
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    t: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            target,
            mu: (10.0 * initial_step).ln(),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            t: 0.0,
            h_bar: 0.0,
            log_eps: initial_step.ln(),
            log_eps_bar: initial_step.ln(),
        }
    }

    /// Feeds one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let eta = self.t.powf(-self.kappa);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Retained draws plus per-proposal bookkeeping (burn-in included).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    pub accept_flags: Vec<bool>,
    pub energies: Vec<f64>,
    pub delta_h: Vec<f64>,
    pub divergent: Vec<bool>,
    pub n_burn: usize,
    /// Step size used for the retained draws.
    pub step_size: f64,
}

pub fn run_chain<T: LogDensity + ?Sized>(target: &T, init: &[f64], config: &HmcConfig) -> Result<Chain> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::Dimension(format!(
            "initial point has {} coordinates, target has {dim}",
            init.len()
        )));
    }
    config.validate(dim)?;
    let mass = config.mass(dim);
    let mut rng = rng::seeded(config.seed);

    let mut state = PhasePoint::new(target, init.to_vec());
    if !state.is_finite() {
        return Err(Error::InvalidInput("log-density is not finite at the initial point".into()));
    }

    let total = config.n_burn + config.n_draws;
    let mut chain = Chain {
        draws: Vec::with_capacity(config.n_draws),
        accept_flags: Vec::with_capacity(total),
        energies: Vec::with_capacity(total),
        delta_h: Vec::with_capacity(total),
        divergent: Vec::with_capacity(total),
        n_burn: config.n_burn,
        step_size: config.step_size,
    };

    let mut tuner = DualAveraging::new(config.step_size, config.target_accept);
    let mut eps = config.step_size;
    for iter in 0..total {
        if iter == config.n_burn && config.adapt_step_size && config.n_burn > 0 {
            eps = tuner.final_step_size();
        }
        let out = hmc_step(target, &state, eps, config.n_leapfrog, &mass, &mut rng)?;
        chain.accept_flags.push(out.accepted);
        chain.energies.push(out.energy);
        chain.delta_h.push(out.delta_h);
        chain.divergent.push(out.diverged);
        state = out.state;

        if iter < config.n_burn {
            if config.adapt_step_size {
                eps = tuner.update(out.accept_prob);
            }
        } else {
            chain.draws.push(state.q.clone());
        }
    }
    chain.step_size = eps;
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_proposals: usize,
    /// Accepted over proposed, burn-in included.
    pub acceptance_rate: f64,
    /// Accepted over proposed after burn-in; `None` without retained draws.
    pub acceptance_rate_sampling: Option<f64>,
    /// Mean |ΔH| over non-divergent proposals.
    pub mean_abs_delta_h: f64,
    pub divergences: usize,
    pub step_size: f64,
    /// Every post-burn-in proposal was rejected.
    pub stuck: bool,
}

pub fn diagnostics(chain: &Chain) -> Diagnostics {
    let n = chain.accept_flags.len();
    let accepted = chain.accept_flags.iter().filter(|&&a| a).count();
    let post = &chain.accept_flags[chain.n_burn.min(n)..];
    let post_accepted = post.iter().filter(|&&a| a).count();
    let finite: Vec<f64> = chain
        .delta_h
        .iter()
        .zip(&chain.divergent)
        .filter(|(d, &div)| !div && d.is_finite())
        .map(|(d, _)| d.abs())
        .collect();
    Diagnostics {
        n_proposals: n,
        acceptance_rate: if n == 0 { 0.0 } else { accepted as f64 / n as f64 },
        acceptance_rate_sampling: (!post.is_empty()).then(|| post_accepted as f64 / post.len() as f64),
        mean_abs_delta_h: if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        divergences: chain.divergent.iter().filter(|&&d| d).count(),
        step_size: chain.step_size,
        stuck: !post.is_empty() && post_accepted == 0,
    }
}

/// Effective sample size by Geyer's initial positive sequence estimator.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let autocorr = |lag: usize| -> f64 {
        xs[..n - lag]
            .iter()
            .zip(&xs[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = autocorr(lag) + autocorr(lag + 1);
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

/// Monte-Carlo standard error of the mean, using the effective sample size.
pub fn mcse_mean(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / effective_sample_size(xs)).sqrt()
}
