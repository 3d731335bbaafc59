//! Time-price grid: cell assignment, the visited-cell mask, and per-cell
//! log-return observation sets.
//!
//! Cells are stored row-major with time as the major index, so cell `(i, j)`
//! lives at `i * n_price + j`. A return between ticks `n-1` and `n` belongs to
//! the cell of tick `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, TickSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_time: usize,
    pub n_price: usize,
    pub price_min: f64,
    pub price_max: f64,
    pub session_length: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_time == 0 || self.n_price == 0 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least one bin per axis (got {} x {})",
                self.n_time, self.n_price
            )));
        }
        if !(self.price_max > self.price_min) {
            return Err(Error::InvalidInput(format!(
                "grid price range requires max > min (got [{}, {}])",
                self.price_min, self.price_max
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_time * self.n_price
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_price + j
    }

    pub fn price_width(&self) -> f64 {
        (self.price_max - self.price_min) / self.n_price as f64
    }

    pub fn time_mid(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_time as f64
    }

    pub fn price_mid(&self, j: usize) -> f64 {
        self.price_min + (j as f64 + 0.5) * self.price_width()
    }
}

fn clamp_bin(x: f64, n: usize) -> usize {
    let b = (x * n as f64).floor();
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(n - 1)
    }
}

/// Zero-based `(time, price)` cell of a normalized time and a raw price.
/// Boundary and out-of-range values are clamped into the grid.
pub fn assign_cell(time_norm: f64, price: f64, spec: &GridSpec) -> (usize, usize) {
    let s = (price - spec.price_min) / (spec.price_max - spec.price_min);
    (clamp_bin(time_norm, spec.n_time), clamp_bin(s, spec.n_price))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub spec: GridSpec,
    /// Row-major visited flags.
    pub mask: Vec<bool>,
    /// Row-major per-cell log-returns.
    pub returns: Vec<Vec<f64>>,
    /// Normalized midpoint of each time bin.
    pub cell_time: Vec<f64>,
    /// Log of each price bin's midpoint price.
    pub cell_logprice: Vec<f64>,
}

impl GridData {
    /// An empty grid: every cell masked off.
    pub fn empty(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            mask: vec![false; spec.n_cells()],
            returns: vec![Vec::new(); spec.n_cells()],
            cell_time: (0..spec.n_time).map(|i| spec.time_mid(i)).collect(),
            cell_logprice: (0..spec.n_price).map(|j| spec.price_mid(j).ln()).collect(),
        })
    }

    pub fn n_time(&self) -> usize {
        self.spec.n_time
    }

    pub fn n_price(&self) -> usize {
        self.spec.n_price
    }

    pub fn is_visited(&self, i: usize, j: usize) -> bool {
        self.mask[self.spec.index(i, j)]
    }

    pub fn cell_returns(&self, i: usize, j: usize) -> &[f64] {
        &self.returns[self.spec.index(i, j)]
    }

    /// Appends a return and marks the cell visited.
    pub fn push_return(&mut self, i: usize, j: usize, r: f64) {
        let idx = self.spec.index(i, j);
        self.returns[idx].push(r);
        self.mask[idx] = true;
    }

    pub fn n_returns(&self) -> usize {
        self.returns.iter().map(Vec::len).sum()
    }

    pub fn n_visited(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Returns of visited cells, in cell order.
    pub fn visited_returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.mask
            .iter()
            .zip(&self.returns)
            .filter(|(m, _)| **m)
            .flat_map(|(_, r)| r.iter().copied())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.spec.n_cells();
        if self.mask.len() != n
            || self.returns.len() != n
            || self.cell_time.len() != self.spec.n_time
            || self.cell_logprice.len() != self.spec.n_price
        {
            return Err(Error::Dimension(format!(
                "grid arrays do not match a {} x {} spec",
                self.spec.n_time, self.spec.n_price
            )));
        }
        for (idx, (m, r)) in self.mask.iter().zip(&self.returns).enumerate() {
            if *m != !r.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "cell {idx}: mask flag {m} disagrees with {} stored returns",
                    r.len()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("cell {idx}: non-finite return")));
            }
        }
        Ok(())
    }

    /// Multiplies every return by `scale`.
    pub fn rescaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for r in out.returns.iter_mut().flatten() {
            *r *= scale;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GridJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GridJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

/// Wire form of [`GridData`]: the mask travels as a 0/1 array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    #[serde(flatten)]
    pub spec: GridSpec,
    pub mask: Vec<u8>,
    pub returns: Vec<Vec<f64>>,
    pub cell_time: Vec<f64>,
    pub cell_logprice: Vec<f64>,
}

impl From<&GridData> for GridJson {
    fn from(g: &GridData) -> Self {
        Self {
            spec: g.spec,
            mask: g.mask.iter().map(|&m| u8::from(m)).collect(),
            returns: g.returns.clone(),
            cell_time: g.cell_time.clone(),
            cell_logprice: g.cell_logprice.clone(),
        }
    }
}

impl TryFrom<GridJson> for GridData {
    type Error = Error;

    fn try_from(raw: GridJson) -> Result<Self> {
        if raw.mask.iter().any(|&m| m > 1) {
            return Err(Error::InvalidInput("grid mask entries must be 0 or 1".into()));
        }
        let g = GridData {
            spec: raw.spec,
            mask: raw.mask.iter().map(|&m| m == 1).collect(),
            returns: raw.returns,
            cell_time: raw.cell_time,
            cell_logprice: raw.cell_logprice,
        };
        g.validate()?;
        Ok(g)
    }
}

impl Serialize for GridData {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GridJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GridData {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        GridJson::deserialize(deserializer)?
            .try_into()
            .map_err(serde::de::Error::custom)
    }
}

/// Builds the grid from a time-normalized series (times in `[0, 1]`).
pub fn build_grid(series: &TickSeries, spec: &GridSpec) -> Result<GridData> {
    if series.len() < 2 {
        return Err(Error::TooFewTicks {
            needed: 2,
            got: series.len(),
        });
    }
    let mut grid = GridData::empty(*spec)?;
    for w in series.ticks.windows(2) {
        let r = (w[1].price / w[0].price).ln();
        let (i, j) = assign_cell(w[1].time, w[1].price, spec);
        grid.push_return(i, j, r);
    }
    Ok(grid)
}

/// Total log-return of a cell's observation set.
pub fn aggregate_return(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate an empty return set".into()));
    }
    Ok(returns.iter().sum())
}

/// Sample standard deviation of all returns in visited cells.
pub fn pooled_std(grid: &GridData) -> Result<f64> {
    let n = grid.visited_returns().count();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "pooled standard deviation needs at least 2 returns, got {n}"
        )));
    }
    let mean = grid.visited_returns().sum::<f64>() / n as f64;
    let ss: f64 = grid.visited_returns().map(|x| (x - mean).powi(2)).sum();
    Ok((ss / (n - 1) as f64).sqrt())
}

/// Divides every return by the pooled standard deviation and returns that scale.
pub fn standardize_returns(grid: &GridData) -> Result<(GridData, f64)> {
    let scale = pooled_std(grid)?;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateVolatility);
    }
    Ok((grid.rescaled(1.0 / scale), scale))
}

pub fn destandardize_returns(grid: &GridData, scale: f64) -> GridData {
    grid.rescaled(scale)
}

/// Price bounds padded so the whole path sits strictly inside the grid.
pub fn padded_price_range(series: &TickSeries, pad_fraction: f64) -> Result<(f64, f64)> {
    let (lo, hi) = series
        .price_range()
        .ok_or_else(|| Error::InvalidInput("empty series has no price range".into()))?;
    let width = (hi - lo).max(lo * 1e-6);
    let pad = width * pad_fraction;
    let min = (lo - pad).max(lo * 0.5);
    Ok((min, hi + pad))
}

/// Seconds-since-open convenience wrapper around [`assign_cell`].
pub fn assign_cell_seconds(time_s: f64, price: f64, spec: &GridSpec) -> (usize, usize) {
    assign_cell(ingest::normalized_time(time_s, spec.session_length), price, spec)
}
