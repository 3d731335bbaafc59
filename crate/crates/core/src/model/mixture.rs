use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `-0.5 * ln(2π)`
pub const LOG_INV_SQRT_2PI: f64 = -0.918_938_533_204_672_7;

#[inline]
pub fn standard_normal_logpdf(z: f64) -> f64 {
    LOG_INV_SQRT_2PI - 0.5 * z * z
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Truncated stick-breaking: `w_k = γ_k Π_{l<k} (1 − γ_l)` for `k < K`, and the
/// last weight takes the remaining stick so the weights sum to one. The last
/// fraction is therefore ignored.
pub fn stick_break(gamma: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = gamma
        .iter()
        .enumerate()
        .find(|(_, &g)| !(g > 0.0 && g < 1.0))
    {
        return Err(Error::FractionOutOfRange { index, value });
    }
    let k = gamma.len();
    let mut weights = Vec::with_capacity(k);
    let mut remaining = 1.0;
    for &g in &gamma[..k.saturating_sub(1)] {
        weights.push(g * remaining);
        remaining *= 1.0 - g;
    }
    if k > 0 {
        weights.push(remaining);
    }
    Ok(weights)
}

/// Log stick-breaking weights straight from logit-scale fractions.
pub fn log_stick_weights(stick_raw: &[f64], out: &mut [f64]) {
    use super::params::{log1m_logistic, log_logistic};
    let k = stick_raw.len();
    let mut cum = 0.0;
    for l in 0..k.saturating_sub(1) {
        out[l] = log_logistic(stick_raw[l]) + cum;
        cum += log1m_logistic(stick_raw[l]);
    }
    if k > 0 {
        out[k - 1] = cum;
    }
}

/// One cell's Gaussian mixture with a shared component scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scale: f64,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, scale: f64) -> Result<Self> {
        if weights.len() != means.len() || weights.is_empty() {
            return Err(Error::Dimension(format!(
                "mixture has {} weights and {} means",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        if !(scale >= 0.0) {
            return Err(Error::InvalidInput(format!("mixture scale must be non-negative, got {scale}")));
        }
        Ok(Self {
            weights,
            means,
            scale,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Picks a component by weight, then draws from its Gaussian.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.weights.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[chosen] + self.scale * z
    }
}

/// `log Σ_k w_k φ((x − μ_k)/s)/s`, evaluated with log-sum-exp.
pub fn mixture_logpdf(x: f64, mix: &MixtureSpec) -> f64 {
    let log_scale = mix.scale.ln();
    let terms: Vec<f64> = mix
        .weights
        .iter()
        .zip(&mix.means)
        .map(|(&w, &mu)| w.ln() + standard_normal_logpdf((x - mu) / mix.scale) - log_scale)
        .collect();
    log_sum_exp(&terms)
}

/// Mixture mean and variance by the law of total variance:
/// `Var = Σ w_k (s² + μ_k²) − (Σ w_k μ_k)²`.
pub fn mixture_moments(mix: &MixtureSpec) -> (f64, f64) {
    let mean: f64 = mix.weights.iter().zip(&mix.means).map(|(w, m)| w * m).sum();
    // centered form avoids cancellation when |mean| is large
    let spread: f64 = mix
        .weights
        .iter()
        .zip(&mix.means)
        .map(|(w, m)| w * (m - mean).powi(2))
        .sum();
    (mean, mix.scale * mix.scale + spread)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn stick_break_examples() {
        assert_eq!(stick_break(&[0.5, 0.5, 0.5]).unwrap(), vec![0.5, 0.25, 0.25]);
        let w = stick_break(&[1.0 - 1e-15, 0.3, 0.6]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14 && w[1] < 1e-14 && w[2] < 1e-14);
        assert_eq!(stick_break(&[0.7]).unwrap(), vec![1.0]);
        assert!(matches!(
            stick_break(&[0.2, 1.0]),
            Err(Error::FractionOutOfRange { index: 1, .. })
        ));
        assert!(stick_break(&[0.0]).is_err());
        assert!(stick_break(&[f64::NAN]).is_err());
    }

    #[test]
    fn log_weights_match_stick_break() {
        let raw = [0.3, -1.2, 2.0, 0.1];
        let gamma: Vec<f64> = raw.iter().map(|&s| super::super::params::logistic(s)).collect();
        let w = stick_break(&gamma).unwrap();
        let mut lw = [0.0; 4];
        log_stick_weights(&raw, &mut lw);
        for (a, b) in w.iter().zip(&lw) {
            assert!((a.ln() - b).abs() < 1e-14);
        }
    }

    #[test]
    fn standard_normal_at_zero() {
        let mix = MixtureSpec::new(vec![1.0], vec![0.0], 1.0).unwrap();
        assert!((mixture_logpdf(0.0, &mix) - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-15);
        assert!((mixture_logpdf(0.0, &mix) + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn symmetric_mixture_is_even() {
        let mix = MixtureSpec::new(vec![0.5, 0.5], vec![-1.3, 1.3], 0.8).unwrap();
        for x in [0.1, 0.7, 2.5, 9.0] {
            assert!((mixture_logpdf(x, &mix) - mixture_logpdf(-x, &mix)).abs() < 1e-14);
        }
    }

    #[test]
    fn logpdf_matches_naive_sum() {
        let mut rng = rng::seeded(11);
        let gamma: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
        let mix = MixtureSpec::new(
            stick_break(&gamma).unwrap(),
            (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
            rng.random_range(0.5..2.0),
        )
        .unwrap();
        for _ in 0..10 {
            let x: f64 = rng.random_range(-4.0..4.0);
            let naive: f64 = mix
                .weights
                .iter()
                .zip(&mix.means)
                .map(|(w, m)| {
                    let z = (x - m) / mix.scale;
                    w * (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * mix.scale)
                })
                .sum();
            assert!((mixture_logpdf(x, &mix) - naive.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn logpdf_survives_far_tails() {
        let mix = MixtureSpec::new(vec![0.5, 0.5], vec![0.0, 1.0], 1.0).unwrap();
        let v = mixture_logpdf(60.0, &mix);
        assert!(v.is_finite());
        // dominated by the nearer component
        assert!((v - (0.5f64.ln() + standard_normal_logpdf(59.0))).abs() < 1e-12);
    }

    #[test]
    fn moments_examples() {
        let mix = MixtureSpec::new(vec![0.5, 0.5], vec![-1.0, 1.0], 1.0).unwrap();
        assert_eq!(mixture_moments(&mix), (0.0, 2.0));
        let single = MixtureSpec::new(vec![1.0], vec![3.5], 0.4).unwrap();
        let (m, v) = mixture_moments(&single);
        assert_eq!(m, 3.5);
        assert!((v - 0.16).abs() < 1e-15);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let mut rng = rng::seeded(5);
        let gamma: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..0.9)).collect();
        let mix = MixtureSpec::new(
            stick_break(&gamma).unwrap(),
            (0..5).map(|_| rng.random_range(-3.0..3.0)).collect(),
            1.0,
        )
        .unwrap();
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| mix.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let (am, av) = mixture_moments(&mix);
        assert!((mean - am).abs() < 3.0 * (m2 / n as f64).sqrt());
        assert!((m2 - av).abs() < 3.0 * ((m4 - m2 * m2) / n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(gamma in proptest::collection::vec(1e-6..(1.0 - 1e-6), 1..25)) {
            let w = stick_break(&gamma).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn weight_is_monotone_in_own_fraction(
            gamma in proptest::collection::vec(0.01..0.98f64, 2..8),
            k in 0usize..7,
            bump in 0.001..0.01f64,
        ) {
            let k = k % (gamma.len() - 1);
            let mut up = gamma.clone();
            up[k] += bump;
            prop_assert!(stick_break(&up).unwrap()[k] >= stick_break(&gamma).unwrap()[k]);
        }

        #[test]
        fn variance_bounded_below_by_component(
            gamma in proptest::collection::vec(0.01..0.99f64, 1..6),
            means in proptest::collection::vec(-5.0..5.0f64, 6),
            scale in 0.1..3.0f64,
        ) {
            let w = stick_break(&gamma).unwrap();
            let mix = MixtureSpec::new(w.clone(), means[..w.len()].to_vec(), scale).unwrap();
            let (_, v) = mixture_moments(&mix);
            prop_assert!(v >= scale * scale * (1.0 - 1e-12));
            let flat = MixtureSpec::new(w, vec![means[0]; gamma.len()], scale).unwrap();
            prop_assert!((mixture_moments(&flat).1 - scale * scale).abs() < 1e-12);
        }
    }
}
