//! Posterior-predictive volatility surface.
//!
//! For every cell and every retained parameter draw, returns are simulated
//! from the cell's mixture, de-standardized and reduced to a sample standard
//! deviation, then annualized. The cell's reported volatility is the mean of
//! those per-draw values; the credible band is their empirical quantiles.
//! Unvisited cells are evaluated the same way from the shared coefficients.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridData, GridSpec};
use crate::ingest::{SESSION_SECONDS, TRADING_DAYS};
use crate::model::{cell_mixture, stick_break, MixtureSpec, ModelParams};
use crate::rng;

/// How unvisited cells weight their components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CounterfactualWeights {
    /// Every stick fraction at the median of Beta(1, ½), i.e. the concentration
    /// held at its prior median of ½.
    #[default]
    PriorMedian,
    /// Use the sampled stick fractions as-is.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub n_param_draws: usize,
    pub n_returns_per_draw: usize,
    pub ci_level: f64,
    pub bins_per_day: f64,
    pub trading_days: f64,
    pub seed: u64,
    #[serde(default)]
    pub counterfactual: CounterfactualWeights,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            n_param_draws: 100,
            n_returns_per_draw: 100,
            ci_level: 0.95,
            bins_per_day: 78.0,
            trading_days: TRADING_DAYS,
            seed: 0,
            counterfactual: CounterfactualWeights::PriorMedian,
        }
    }
}

impl SurfaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_param_draws == 0 || self.n_returns_per_draw < 2 {
            return Err(Error::InvalidInput(format!(
                "surface needs at least 1 parameter draw and 2 returns per draw (got {} and {})",
                self.n_param_draws, self.n_returns_per_draw
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "credible level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if !(self.bins_per_day > 0.0 && self.trading_days > 0.0) {
            return Err(Error::InvalidInput("annualization factors must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellVol {
    pub i: usize,
    pub j: usize,
    pub t_norm: f64,
    pub price_mid: f64,
    pub vol_mean: f64,
    pub vol_lo: f64,
    pub vol_hi: f64,
    /// The path never visited this cell; its value is counterfactual.
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSurface {
    pub spec: GridSpec,
    /// Row-major, time-major like the grid.
    pub cells: Vec<CellVol>,
}

impl VolSurface {
    pub fn cell(&self, i: usize, j: usize) -> &CellVol {
        &self.cells[self.spec.index(i, j)]
    }

    /// Cell containing normalized time `t_norm` and price `price`, or `None`
    /// when the price lies outside the surface's price range.
    pub fn lookup(&self, t_norm: f64, price: f64) -> Option<&CellVol> {
        if price < self.spec.price_min || price > self.spec.price_max {
            return None;
        }
        let (i, j) = crate::grid::assign_cell(t_norm, price, &self.spec);
        Some(self.cell(i, j))
    }
}

/// Sample standard deviation of `n` de-standardized draws from `mix`.
pub fn predictive_std(mix: &MixtureSpec, n: usize, return_scale: f64, rng: &mut rng::Rng) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("predictive std needs n >= 2, got {n}")));
    }
    let xs: Vec<f64> = (0..n).map(|_| mix.sample(rng) * return_scale).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(var.sqrt())
}

/// Scales a per-bin standard deviation to annual units.
pub fn annualize(std_per_bin: f64, bins_per_day: f64, trading_days: f64) -> f64 {
    std_per_bin * (bins_per_day * trading_days).sqrt()
}

/// Linear-interpolation quantile (numpy's default) of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed empirical interval at `level`.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "credible interval needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("credible level must lie in (0, 1), got {level}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

/// Mixture used for cell `(i, j)` on the surface; unvisited cells may swap in
/// prior-median stick fractions.
pub fn surface_mixture(
    params: &ModelParams,
    grid: &GridData,
    i: usize,
    j: usize,
    mode: CounterfactualWeights,
) -> Result<MixtureSpec> {
    let mut mix = cell_mixture(params, grid, i, j)?;
    if !grid.is_visited(i, j) && mode == CounterfactualWeights::PriorMedian {
        mix.weights = stick_break(&vec![PRIOR_MEDIAN_FRACTION; params.dims.n_comp])?;
    }
    Ok(mix)
}

/// Median of Beta(1, ½): `1 − ½^(1/½) = ¾`.
pub const PRIOR_MEDIAN_FRACTION: f64 = 0.75;

/// Builds the surface from the last `config.n_param_draws` draws.
pub fn build_surface(
    draws: &[ModelParams],
    grid: &GridData,
    return_scale: f64,
    config: &SurfaceConfig,
) -> Result<VolSurface> {
    config.validate()?;
    if draws.len() < config.n_param_draws {
        return Err(Error::InsufficientDraws {
            available: draws.len(),
            required: config.n_param_draws,
        });
    }
    let used = &draws[draws.len() - config.n_param_draws..];
    let spec = grid.spec;
    let n_cells = spec.n_cells() as u64;

    let cells: Result<Vec<CellVol>> = (0..spec.n_cells())
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / spec.n_price, cell % spec.n_price);
            let vols = used
                .iter()
                .enumerate()
                .map(|(d, params)| {
                    let mix = surface_mixture(params, grid, i, j, config.counterfactual)?;
                    let mut rng = rng::substream(config.seed, d as u64 * n_cells + cell as u64);
                    let s = predictive_std(&mix, config.n_returns_per_draw, return_scale, &mut rng)?;
                    Ok(annualize(s, config.bins_per_day, config.trading_days))
                })
                .collect::<Result<Vec<f64>>>()?;
            let vol_mean = vols.iter().sum::<f64>() / vols.len() as f64;
            let (vol_lo, vol_hi) = if vols.len() >= 2 {
                credible_interval(&vols, config.ci_level)?
            } else {
                (vols[0], vols[0])
            };
            Ok(CellVol {
                i,
                j,
                t_norm: grid.cell_time[i],
                price_mid: spec.price_mid(j),
                vol_mean,
                vol_lo,
                vol_hi,
                masked: !grid.is_visited(i, j),
            })
        })
        .collect();
    Ok(VolSurface { spec, cells: cells? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for SurfaceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::InvalidInput(format!("unknown surface format `{other}`"))),
        }
    }
}

pub const CSV_HEADER: &str = "i,j,t_norm,price_mid,vol_mean,vol_lo,vol_hi,masked";

pub fn surface_to_csv(surface: &VolSurface) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &surface.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.i,
            c.j,
            c.t_norm,
            c.price_mid,
            c.vol_mean,
            c.vol_lo,
            c.vol_hi,
            u8::from(c.masked)
        );
    }
    out
}

pub fn export_surface(surface: &VolSurface, path: &Path, format: SurfaceFormat) -> Result<()> {
    let body = match format {
        SurfaceFormat::Csv => surface_to_csv(surface),
        SurfaceFormat::Json => serde_json::to_string_pretty(surface)?,
        SurfaceFormat::Svg => surface_to_svg(surface),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    i: usize,
    j: usize,
    t_norm: f64,
    price_mid: f64,
    vol_mean: f64,
    vol_lo: f64,
    vol_hi: f64,
    masked: u8,
}

/// Reads a surface CSV. Price bins are assumed uniform and inferred from the
/// midpoints, so at least two price columns are required.
pub fn read_surface_csv(path: &Path) -> Result<VolSurface> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<CsvRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty surface", path.display())));
    }
    let n_time = rows.iter().map(|r| r.i).max().unwrap_or(0) + 1;
    let n_price = rows.iter().map(|r| r.j).max().unwrap_or(0) + 1;
    if rows.len() != n_time * n_price {
        return Err(Error::InvalidInput(format!(
            "{}: {} rows do not fill a {n_time}x{n_price} grid",
            path.display(),
            rows.len()
        )));
    }
    let mut mids = vec![f64::NAN; n_price];
    for r in &rows {
        mids[r.j] = r.price_mid;
    }
    if n_price < 2 {
        return Err(Error::InvalidInput(format!(
            "{}: cannot infer price bins from a single price column; use the JSON format",
            path.display()
        )));
    }
    let width = (mids[n_price - 1] - mids[0]) / (n_price - 1) as f64;
    let spec = GridSpec {
        n_time,
        n_price,
        price_min: mids[0] - 0.5 * width,
        price_max: mids[n_price - 1] + 0.5 * width,
        session_length: SESSION_SECONDS,
    };
    let mut cells = vec![None; n_time * n_price];
    for r in rows {
        cells[spec.index(r.i, r.j)] = Some(CellVol {
            i: r.i,
            j: r.j,
            t_norm: r.t_norm,
            price_mid: r.price_mid,
            vol_mean: r.vol_mean,
            vol_lo: r.vol_lo,
            vol_hi: r.vol_hi,
            masked: r.masked != 0,
        });
    }
    let cells = cells
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidInput(format!("{}: duplicate cell rows", path.display())))?;
    Ok(VolSurface { spec, cells })
}

/// Reads a surface written as JSON or CSV, chosen by file extension.
pub fn read_surface(path: &Path) -> Result<VolSurface> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&text)?)
        }
        _ => read_surface_csv(path),
    }
}

/// Piecewise-linear viridis approximation on `[0, 1]`.
fn colormap(x: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let pos = x * (STOPS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - k as f64;
    let lerp = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    (lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// Heatmap of `vol_mean`: time runs left to right, price bottom to top, and
/// cells on the observed path carry a white outline.
pub fn surface_to_svg(surface: &VolSurface) -> String {
    let (n_time, n_price) = (surface.spec.n_time, surface.spec.n_price);
    let cell_w = (640.0 / n_time as f64).max(2.0);
    let cell_h = (400.0 / n_price as f64).max(2.0);
    let (left, top) = (70.0, 30.0);
    let plot_w = cell_w * n_time as f64;
    let plot_h = cell_h * n_price as f64;
    let legend_x = left + plot_w + 30.0;
    let width = legend_x + 90.0;
    let height = top + plot_h + 60.0;

    let finite = surface.cells.iter().map(|c| c.vol_mean).filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.1} {height:.1}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<title>Realized local volatility (annualized mean)</title>"#);
    let _ = writeln!(svg, r#"<g id="cells">"#);
    for c in &surface.cells {
        let (r, g, b) = colormap((c.vol_mean - lo) / span);
        let x = left + c.i as f64 * cell_w;
        let y = top + (n_price - 1 - c.j) as f64 * cell_h;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{cell_w:.2}" height="{cell_h:.2}" fill="rgb({r},{g},{b})"><title>t={:.4} S={:.2} vol={:.4} [{:.4}, {:.4}]</title></rect>"#,
            c.t_norm, c.price_mid, c.vol_mean, c.vol_lo, c.vol_hi
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g id="path" fill="none" stroke="white" stroke-width="1.5">"#);
    for c in surface.cells.iter().filter(|c| !c.masked) {
        let x = left + c.i as f64 * cell_w;
        let y = top + (n_price - 1 - c.j) as f64 * cell_h;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
            x + 0.75,
            y + 0.75,
            cell_w - 1.5,
            cell_h - 1.5
        );
    }
    let _ = writeln!(svg, "</g>");

    // axes
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">normalized time</text>"#,
        left + plot_w / 2.0,
        top + plot_h + 40.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
        left - 6.0,
        top + plot_h,
        surface.spec.price_min
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
        left - 6.0,
        top + 10.0,
        surface.spec.price_max
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="start">0</text><text x="{:.1}" y="{:.1}" text-anchor="end">1</text>"#,
        left,
        top + plot_h + 16.0,
        left + plot_w,
        top + plot_h + 16.0
    );

    // legend
    let _ = writeln!(svg, r#"<g id="legend">"#);
    let steps = 20;
    let bar_h = plot_h / steps as f64;
    for s in 0..steps {
        let (r, g, b) = colormap(1.0 - (s as f64 + 0.5) / steps as f64);
        let _ = writeln!(
            svg,
            r#"<rect x="{legend_x:.1}" y="{:.2}" width="18" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
            top + s as f64 * bar_h,
            bar_h + 0.5
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}">{:.1}%</text><text x="{:.1}" y="{:.1}">{:.1}%</text>"#,
        legend_x + 24.0,
        top + 10.0,
        hi * 100.0,
        legend_x + 24.0,
        top + plot_h,
        lo * 100.0
    );
    let _ = writeln!(svg, "</g>\n</svg>");
    svg
}
