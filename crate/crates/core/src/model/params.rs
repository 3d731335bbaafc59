use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Grid and mixture sizes: `n_time` × `n_price` cells, `n_comp` components each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_time: usize,
    pub n_price: usize,
    pub n_comp: usize,
}

impl Dims {
    pub fn new(n_time: usize, n_price: usize, n_comp: usize) -> Result<Self> {
        if n_time == 0 || n_price == 0 || n_comp == 0 {
            return Err(Error::InvalidInput(format!(
                "model dimensions must be positive (got I={n_time}, J={n_price}, K={n_comp})"
            )));
        }
        Ok(Self {
            n_time,
            n_price,
            n_comp,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_time * self.n_price
    }

    pub fn time_effect_range(&self) -> std::ops::Range<usize> {
        0..self.n_time * self.n_comp
    }

    pub fn price_effect_range(&self) -> std::ops::Range<usize> {
        let start = self.time_effect_range().end;
        start..start + self.n_price * self.n_comp
    }

    pub fn alpha_range(&self) -> std::ops::Range<usize> {
        let start = self.price_effect_range().end;
        start..start + self.n_comp
    }

    pub fn stick_range(&self) -> std::ops::Range<usize> {
        let start = self.alpha_range().end;
        start..start + self.n_cells() * self.n_comp
    }

    pub fn conc_range(&self) -> std::ops::Range<usize> {
        let start = self.stick_range().end;
        start..start + self.n_cells()
    }

    /// Length of the flat unconstrained coordinate vector.
    pub fn len(&self) -> usize {
        self.conc_range().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full parameter vector in unconstrained coordinates.
///
/// Flat layout: `time_effect[I×K] | price_effect[J×K] | alpha[K] |
/// stick_raw[I×J×K] | conc[I×J]`, each block row-major. Stick fractions and
/// concentrations live on the logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub coords: Vec<f64>,
    /// Standard deviation shared by every Gaussian component.
    pub component_scale: f64,
}

impl ModelParams {
    pub fn zeros(dims: Dims, component_scale: f64) -> Self {
        Self {
            dims,
            coords: vec![0.0; dims.len()],
            component_scale,
        }
    }

    pub fn from_coords(dims: Dims, coords: Vec<f64>, component_scale: f64) -> Result<Self> {
        if coords.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "expected {} coordinates for {:?}, got {}",
                dims.len(),
                dims,
                coords.len()
            )));
        }
        if !(component_scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "component scale must be positive, got {component_scale}"
            )));
        }
        Ok(Self {
            dims,
            coords,
            component_scale,
        })
    }

    /// Every unconstrained coordinate drawn independently from N(0, 1).
    pub fn init_standard_normal(dims: Dims, component_scale: f64, rng: &mut Rng) -> Self {
        let coords = (0..dims.len()).map(|_| StandardNormal.sample(rng)).collect();
        Self {
            dims,
            coords,
            component_scale,
        }
    }

    pub fn time_effect(&self) -> &[f64] {
        &self.coords[self.dims.time_effect_range()]
    }

    pub fn price_effect(&self) -> &[f64] {
        &self.coords[self.dims.price_effect_range()]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.coords[self.dims.alpha_range()]
    }

    pub fn stick_raw(&self) -> &[f64] {
        &self.coords[self.dims.stick_range()]
    }

    pub fn conc_raw(&self) -> &[f64] {
        &self.coords[self.dims.conc_range()]
    }

    pub fn time_effect_mut(&mut self) -> &mut [f64] {
        let r = self.dims.time_effect_range();
        &mut self.coords[r]
    }

    pub fn price_effect_mut(&mut self) -> &mut [f64] {
        let r = self.dims.price_effect_range();
        &mut self.coords[r]
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        let r = self.dims.alpha_range();
        &mut self.coords[r]
    }

    pub fn stick_raw_mut(&mut self) -> &mut [f64] {
        let r = self.dims.stick_range();
        &mut self.coords[r]
    }

    pub fn conc_raw_mut(&mut self) -> &mut [f64] {
        let r = self.dims.conc_range();
        &mut self.coords[r]
    }

    /// Unconstrained stick coordinates of cell `(i, j)`.
    pub fn cell_sticks(&self, i: usize, j: usize) -> &[f64] {
        let k = self.dims.n_comp;
        let cell = i * self.dims.n_price + j;
        &self.stick_raw()[cell * k..(cell + 1) * k]
    }

    /// Stick fractions γ of cell `(i, j)` in (0, 1).
    pub fn cell_gamma(&self, i: usize, j: usize) -> Vec<f64> {
        self.cell_sticks(i, j).iter().map(|&s| logistic(s)).collect()
    }

    /// Concentration α of cell `(i, j)` in (0, 1).
    pub fn cell_concentration(&self, i: usize, j: usize) -> f64 {
        logistic(self.conc_raw()[i * self.dims.n_price + j])
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite()) && self.component_scale.is_finite()
    }
}

/// JSON checkpoint of one parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsCheckpoint {
    pub n_time: usize,
    pub n_price: usize,
    pub n_comp: usize,
    pub time_effect: Vec<f64>,
    pub price_effect: Vec<f64>,
    pub alpha: Vec<f64>,
    pub stick_raw: Vec<f64>,
    pub conc: Vec<f64>,
    pub component_scale: f64,
    pub return_scale: f64,
    pub seed: u64,
}

impl ParamsCheckpoint {
    pub fn new(params: &ModelParams, return_scale: f64, seed: u64) -> Self {
        Self {
            n_time: params.dims.n_time,
            n_price: params.dims.n_price,
            n_comp: params.dims.n_comp,
            time_effect: params.time_effect().to_vec(),
            price_effect: params.price_effect().to_vec(),
            alpha: params.alpha().to_vec(),
            stick_raw: params.stick_raw().to_vec(),
            conc: params.conc_raw().to_vec(),
            component_scale: params.component_scale,
            return_scale,
            seed,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let dims = Dims::new(self.n_time, self.n_price, self.n_comp)?;
        let coords: Vec<f64> = [
            &self.time_effect[..],
            &self.price_effect,
            &self.alpha,
            &self.stick_raw,
            &self.conc,
        ]
        .concat();
        ModelParams::from_coords(dims, coords, self.component_scale)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(logistic(x))`.
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// `log(1 - logistic(x))`.
pub fn log1m_logistic(x: f64) -> f64 {
    -softplus(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn layout_is_contiguous() {
        let d = Dims::new(3, 4, 2).unwrap();
        assert_eq!(d.time_effect_range(), 0..6);
        assert_eq!(d.price_effect_range(), 6..14);
        assert_eq!(d.alpha_range(), 14..16);
        assert_eq!(d.stick_range(), 16..40);
        assert_eq!(d.conc_range(), 40..52);
        assert_eq!(d.len(), 52);
        assert!(Dims::new(0, 1, 1).is_err());
    }

    #[test]
    fn logistic_helpers_are_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((log_logistic(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_logistic(-800.0).is_finite());
        assert!(log1m_logistic(800.0).is_finite());
        assert!((log1m_logistic(800.0) + 800.0).abs() < 1e-12);
        for x in [-30.0, -2.0, 0.3, 5.0, 30.0] {
            let s = logistic(x);
            assert!((log_logistic(x) - s.ln()).abs() < 1e-12);
            // 1 − σ(x) = σ(−x) avoids cancelling in the oracle
            assert!((log1m_logistic(x) - logistic(-x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = Dims::new(2, 3, 2).unwrap();
        let p = ModelParams::init_standard_normal(d, 1.0, &mut rng::seeded(3));
        let ck = ParamsCheckpoint::new(&p, 0.002, 3);
        let json = serde_json::to_string(&ck).unwrap();
        let back: ParamsCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_params().unwrap(), p);
        assert_eq!(back.return_scale, 0.002);
    }
}
