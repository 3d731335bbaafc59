//! One TOML document describing a full run.
//!
//! Every section has defaults, so an empty file is the reference protocol:
//! 5-minute resampling, a 78 × 10 grid over [400, 450], five mixture
//! components, 1,000 burn-in and 5,000 retained HMC iterations, and a surface
//! built from the last 100 draws with 100 predictive returns each.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GbmParams, SESSION_SECONDS, TRADING_DAYS};
use crate::surface::CounterfactualWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n_ticks: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let g = GbmParams::default();
        Self {
            s0: g.s0,
            mu: g.mu,
            sigma: g.sigma,
            n_ticks: g.n_ticks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub session_length: f64,
    /// Resampling interval in seconds; 0 keeps tick-level returns.
    pub resample_seconds: f64,
    pub trading_days: f64,
    pub symbol: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            session_length: SESSION_SECONDS,
            resample_seconds: 300.0,
            trading_days: TRADING_DAYS,
            symbol: "SYNTH".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_time: usize,
    pub n_price: usize,
    pub price_min: f64,
    pub price_max: f64,
    /// Derive the price range from the data instead of `price_min`/`price_max`.
    pub auto_price_range: bool,
    /// Padding added on each side of the observed range, as a fraction of it.
    pub price_pad: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n_time: 78,
            n_price: 10,
            price_min: 400.0,
            price_max: 450.0,
            auto_price_range: false,
            price_pad: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_comp: usize,
    pub component_scale: f64,
    pub standardize: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_comp: 5,
            component_scale: 1.0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcSection {
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub n_burn: usize,
    pub n_draws: usize,
    pub adapt_step_size: bool,
    pub target_accept: f64,
    /// Draws kept in the checkpoint, counted from the end of the chain.
    pub keep_draws: usize,
}

impl Default for HmcSection {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            n_leapfrog: 20,
            n_burn: 1000,
            n_draws: 5000,
            adapt_step_size: true,
            target_accept: 0.75,
            keep_draws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    pub n_param_draws: usize,
    pub n_returns_per_draw: usize,
    pub ci_level: f64,
    /// Return intervals per session used for annualization; derived from the
    /// data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins_per_day: Option<f64>,
    pub counterfactual: CounterfactualWeights,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        Self {
            n_param_draws: 100,
            n_returns_per_draw: 100,
            ci_level: 0.95,
            bins_per_day: None,
            counterfactual: CounterfactualWeights::PriorMedian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Underlying price for implied vols; falls back to `synth.s0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spot: Option<f64>,
    pub rate: f64,
    pub dividend_yield: f64,
    /// Normalized session times at which the surface is read.
    pub snapshots: Vec<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            spot: None,
            rate: 0.0153,
            dividend_yield: 0.0,
            snapshots: vec![0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub ticks: PathBuf,
    pub checkpoint: PathBuf,
    pub surface: PathBuf,
    pub quotes: PathBuf,
    pub curve: PathBuf,
    pub comparison: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            ticks: "ticks.csv".into(),
            checkpoint: "chain.json".into(),
            surface: "surface.csv".into(),
            quotes: "quotes.csv".into(),
            curve: "curve.csv".into(),
            comparison: "compare.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub synth: SynthSection,
    pub data: DataSection,
    pub grid: GridSection,
    pub model: ModelSection,
    pub hmc: HmcSection,
    pub surface: SurfaceSection,
    pub compare: CompareSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: GbmParams::default().seed,
            synth: SynthSection::default(),
            data: DataSection::default(),
            grid: GridSection::default(),
            model: ModelSection::default(),
            hmc: HmcSection::default(),
            surface: SurfaceSection::default(),
            compare: CompareSection::default(),
            io: IoSection::default(),
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

fn at_least_one(name: &str, n: usize) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least 1")))
    }
}

impl RunConfig {
    /// The reference protocol; identical to `Default`.
    pub fn paper_protocol() -> Self {
        Self::default()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("synth.s0", self.synth.s0)?;
        if !(self.synth.sigma >= 0.0) || !self.synth.mu.is_finite() {
            return Err(Error::Config("synth.sigma must be non-negative and synth.mu finite".into()));
        }
        if self.synth.n_ticks < 2 {
            return Err(Error::Config("synth.n_ticks must be at least 2".into()));
        }
        positive("data.session_length", self.data.session_length)?;
        positive("data.trading_days", self.data.trading_days)?;
        if !(self.data.resample_seconds >= 0.0) {
            return Err(Error::Config("data.resample_seconds must be non-negative".into()));
        }
        at_least_one("grid.n_time", self.grid.n_time)?;
        at_least_one("grid.n_price", self.grid.n_price)?;
        if !self.grid.auto_price_range && !(self.grid.price_max > self.grid.price_min && self.grid.price_min > 0.0) {
            return Err(Error::Config(format!(
                "grid price range [{}, {}] must be positive and non-empty",
                self.grid.price_min, self.grid.price_max
            )));
        }
        if !(self.grid.price_pad >= 0.0) {
            return Err(Error::Config("grid.price_pad must be non-negative".into()));
        }
        at_least_one("model.n_comp", self.model.n_comp)?;
        positive("model.component_scale", self.model.component_scale)?;
        positive("hmc.step_size", self.hmc.step_size)?;
        at_least_one("hmc.n_leapfrog", self.hmc.n_leapfrog)?;
        at_least_one("hmc.keep_draws", self.hmc.keep_draws)?;
        if !(self.hmc.target_accept > 0.0 && self.hmc.target_accept < 1.0) {
            return Err(Error::Config("hmc.target_accept must lie in (0, 1)".into()));
        }
        at_least_one("surface.n_param_draws", self.surface.n_param_draws)?;
        if self.surface.n_returns_per_draw < 2 {
            return Err(Error::Config("surface.n_returns_per_draw must be at least 2".into()));
        }
        if !(self.surface.ci_level > 0.0 && self.surface.ci_level < 1.0) {
            return Err(Error::Config("surface.ci_level must lie in (0, 1)".into()));
        }
        if let Some(b) = self.surface.bins_per_day {
            positive("surface.bins_per_day", b)?;
        }
        if self.surface.n_param_draws > self.hmc.keep_draws {
            return Err(Error::Config(format!(
                "surface.n_param_draws ({}) exceeds hmc.keep_draws ({})",
                self.surface.n_param_draws, self.hmc.keep_draws
            )));
        }
        if let Some(s) = self.compare.spot {
            positive("compare.spot", s)?;
        }
        if self.compare.snapshots.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("compare.snapshots must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Overrides every stage seed at once.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn gbm_params(&self) -> GbmParams {
        GbmParams {
            s0: self.synth.s0,
            mu: self.synth.mu,
            sigma: self.synth.sigma,
            n_ticks: self.synth.n_ticks,
            session_length: self.data.session_length,
            trading_days: self.data.trading_days,
            seed: self.seed,
        }
    }
}
