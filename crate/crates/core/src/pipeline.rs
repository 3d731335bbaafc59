//! End-to-end stages driven by a [`RunConfig`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{self, GridData, GridSpec};
use crate::ingest::{self, TickSeries};
use crate::model::{Dims, ModelParams, Posterior};
use crate::rng;
use crate::sampler::{self, Diagnostics, HmcConfig};
use crate::surface::{self, SurfaceConfig, VolSurface};
use crate::voltools::{self, ImpliedCurve, Market, OptionQuote};

const STAGE_INIT: u64 = 1;
const STAGE_HMC: u64 = 2;
const STAGE_SURFACE: u64 = 3;

pub fn synth(cfg: &RunConfig) -> Result<TickSeries> {
    let mut series = ingest::synth_gbm_ticks(&cfg.gbm_params())?;
    series.symbol = cfg.data.symbol.clone();
    Ok(series)
}

/// Observed returns on the grid, before and after standardization.
#[derive(Debug, Clone)]
pub struct PreparedGrid {
    pub raw: GridData,
    pub fit: GridData,
    pub return_scale: f64,
    /// Return intervals per session implied by the sampling.
    pub bins_per_day: f64,
}

pub fn prepare_grid(cfg: &RunConfig, ticks: &TickSeries) -> Result<PreparedGrid> {
    if ticks.len() < 2 {
        return Err(Error::TooFewTicks {
            needed: 2,
            got: ticks.len(),
        });
    }
    let sampled = if cfg.data.resample_seconds > 0.0 {
        ingest::resample(ticks, cfg.data.resample_seconds)?
    } else {
        ticks.clone()
    };
    if sampled.len() < 2 {
        return Err(Error::TooFewTicks {
            needed: 2,
            got: sampled.len(),
        });
    }
    let bins_per_day = if cfg.data.resample_seconds > 0.0 {
        cfg.data.session_length / cfg.data.resample_seconds
    } else {
        let span = sampled.ticks[sampled.len() - 1].time - sampled.ticks[0].time;
        if !(span > 0.0) {
            return Err(Error::InvalidInput("ticks span zero time".into()));
        }
        (sampled.len() - 1) as f64 * cfg.data.session_length / span
    };

    let (price_min, price_max) = if cfg.grid.auto_price_range {
        grid::padded_price_range(&sampled, cfg.grid.price_pad)?
    } else {
        (cfg.grid.price_min, cfg.grid.price_max)
    };
    let spec = GridSpec {
        n_time: cfg.grid.n_time,
        n_price: cfg.grid.n_price,
        price_min,
        price_max,
        session_length: cfg.data.session_length,
    };
    let raw = grid::build_grid(&ingest::normalize_time(&sampled)?, &spec)?;
    let (fit, return_scale) = if cfg.model.standardize {
        grid::standardize_returns(&raw)?
    } else {
        (raw.clone(), 1.0)
    };
    Ok(PreparedGrid {
        raw,
        fit,
        return_scale,
        bins_per_day,
    })
}

/// Everything needed to rebuild the surface without refitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub diagnostics: Diagnostics,
    pub dims: Dims,
    pub component_scale: f64,
    pub return_scale: f64,
    pub bins_per_day: f64,
    /// Grid the model was fitted on, in standardized units when enabled.
    pub grid: GridData,
    /// Last retained draws in flat coordinates, oldest first.
    pub draws: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn params(&self) -> Result<Vec<ModelParams>> {
        self.draws
            .iter()
            .map(|c| ModelParams::from_coords(self.dims, c.clone(), self.component_scale))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        ck.grid.validate()?;
        if ck.draws.iter().any(|d| d.len() != ck.dims.len()) {
            return Err(Error::Dimension(format!(
                "{}: draw length does not match model dimensions",
                path.display()
            )));
        }
        Ok(ck)
    }
}

pub fn hmc_config(cfg: &RunConfig) -> HmcConfig {
    HmcConfig {
        step_size: cfg.hmc.step_size,
        n_leapfrog: cfg.hmc.n_leapfrog,
        mass_diag: None,
        n_burn: cfg.hmc.n_burn,
        n_draws: cfg.hmc.n_draws,
        seed: rng::stage_seed(cfg.seed, STAGE_HMC),
        adapt_step_size: cfg.hmc.adapt_step_size,
        target_accept: cfg.hmc.target_accept,
    }
}

/// Grid construction, standard-normal initialization and one HMC chain.
pub fn fit(cfg: &RunConfig, ticks: &TickSeries) -> Result<Checkpoint> {
    cfg.validate()?;
    let prepared = prepare_grid(cfg, ticks)?;
    let dims = Dims::new(cfg.grid.n_time, cfg.grid.n_price, cfg.model.n_comp)?;
    let target = Posterior::new(&prepared.fit, dims, cfg.model.component_scale)?;
    let init = ModelParams::init_standard_normal(
        dims,
        cfg.model.component_scale,
        &mut rng::seeded(rng::stage_seed(cfg.seed, STAGE_INIT)),
    );
    let chain = sampler::run_chain(&target, &init.coords, &hmc_config(cfg))?;
    let diagnostics = sampler::diagnostics(&chain);
    let keep = cfg.hmc.keep_draws.min(chain.draws.len());
    let draws = chain.draws[chain.draws.len() - keep..].to_vec();
    Ok(Checkpoint {
        config: cfg.clone(),
        seed: cfg.seed,
        diagnostics,
        dims,
        component_scale: cfg.model.component_scale,
        return_scale: prepared.return_scale,
        bins_per_day: prepared.bins_per_day,
        grid: prepared.fit,
        draws,
    })
}

pub fn surface_config(cfg: &RunConfig, checkpoint: &Checkpoint) -> SurfaceConfig {
    SurfaceConfig {
        n_param_draws: cfg.surface.n_param_draws,
        n_returns_per_draw: cfg.surface.n_returns_per_draw,
        ci_level: cfg.surface.ci_level,
        bins_per_day: cfg.surface.bins_per_day.unwrap_or(checkpoint.bins_per_day),
        trading_days: cfg.data.trading_days,
        seed: rng::stage_seed(cfg.seed, STAGE_SURFACE),
        counterfactual: cfg.surface.counterfactual,
    }
}

pub fn build_surface(cfg: &RunConfig, checkpoint: &Checkpoint) -> Result<VolSurface> {
    let draws = checkpoint.params()?;
    surface::build_surface(&draws, &checkpoint.grid, checkpoint.return_scale, &surface_config(cfg, checkpoint))
}

pub fn market(cfg: &RunConfig) -> Market {
    Market {
        spot: cfg.compare.spot.unwrap_or(cfg.synth.s0),
        rate: cfg.compare.rate,
        dividend_yield: cfg.compare.dividend_yield,
    }
}

pub fn implied(cfg: &RunConfig, quotes_path: &Path) -> Result<ImpliedCurve> {
    let quotes = voltools::read_quotes(quotes_path, market(cfg))?;
    voltools::implied_curve(&quotes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub snapshot_t: f64,
    pub strike: f64,
    pub iv: f64,
    pub realized_vol: f64,
    pub diff: f64,
}

/// Realized local vol at each (snapshot, strike) cell against the implied
/// curve; `diff = realized_vol − iv`. Strikes outside the surface's price
/// range are dropped.
pub fn compare(surface: &VolSurface, curve: &ImpliedCurve, snapshots: &[f64]) -> Result<Vec<ComparisonRow>> {
    if snapshots.is_empty() {
        return Err(Error::InvalidInput("no snapshot times to compare".into()));
    }
    let mut rows = Vec::new();
    for &t in snapshots {
        for p in &curve.points {
            if let Some(cell) = surface.lookup(t, p.strike) {
                rows.push(ComparisonRow {
                    snapshot_t: t,
                    strike: p.strike,
                    iv: p.iv,
                    realized_vol: cell.vol_mean,
                    diff: cell.vol_mean - p.iv,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::NoOverlap {
            lo: surface.spec.price_min,
            hi: surface.spec.price_max,
        });
    }
    Ok(rows)
}

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("snapshot_t,strike,iv,realized_vol,diff\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.snapshot_t, r.strike, r.iv, r.realized_vol, r.diff);
    }
    out
}

pub fn quotes_from_flat_vol(cfg: &RunConfig, expiry: f64, strikes: &[f64], vol: f64) -> Result<Vec<OptionQuote>> {
    voltools::synth_otm_quotes(market(cfg), expiry, strikes, |_| vol)
}
