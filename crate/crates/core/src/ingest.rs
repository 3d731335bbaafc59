//! Tick ingestion: CSV loading, a GBM generator for synthetic sessions,
//! normalization onto the unit interval, and boundary resampling.
//!
//! Times are seconds since the session open. Wall-clock conversion happens
//! before data reaches this module.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Regular US equity session, 09:30 to 16:00.
pub const SESSION_SECONDS: f64 = 23_400.0;
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    /// Seconds since session open.
    pub time: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickSeries {
    pub ticks: Vec<Tick>,
    pub session_length: f64,
    pub symbol: String,
}

impl TickSeries {
    /// Builds a series, sorting ticks by time. Ties keep their input order.
    pub fn new(mut ticks: Vec<Tick>, session_length: f64, symbol: impl Into<String>) -> Self {
        ticks.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self {
            ticks,
            session_length,
            symbol: symbol.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn prices(&self) -> impl Iterator<Item = f64> + '_ {
        self.ticks.iter().map(|t| t.price)
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.ticks
            .windows(2)
            .map(|w| (w[1].price / w[0].price).ln())
            .collect()
    }

    pub fn price_range(&self) -> Option<(f64, f64)> {
        self.prices().fold(None, |acc, p| match acc {
            None => Some((p, p)),
            Some((lo, hi)) => Some((lo.min(p), hi.max(p))),
        })
    }

    /// Writes the `time_s,price` CSV format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "time_s,price")?;
            for t in &self.ticks {
                // `{}` on f64 prints the shortest representation that round-trips.
                writeln!(out, "{},{}", t.time, t.price)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Deserialize)]
struct TickRow {
    time_s: String,
    price: String,
}

/// Loads a `time_s,price` tick CSV. Row numbers in errors are file line numbers.
pub fn load_ticks(path: &Path, session_length: f64) -> Result<TickSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let headers = reader.headers().map_err(|e| Error::Parse {
        path: path.to_owned(),
        row: 1,
        message: e.to_string(),
    })?;
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::EmptyFile {
            path: path.to_owned(),
        });
    }
    if headers.iter().collect::<Vec<_>>() != ["time_s", "price"] {
        return Err(Error::Parse {
            path: path.to_owned(),
            row: 1,
            message: format!("expected header `time_s,price`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut ticks = Vec::new();
    for (idx, record) in reader.deserialize::<TickRow>().enumerate() {
        let row = idx + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            row,
            message,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let time: f64 = record
            .time_s
            .parse()
            .map_err(|_| parse_err(format!("cannot parse time `{}`", record.time_s)))?;
        let price: f64 = record
            .price
            .parse()
            .map_err(|_| parse_err(format!("cannot parse price `{}`", record.price)))?;
        if !time.is_finite() || time < 0.0 || time > session_length {
            return Err(parse_err(format!("time {time} outside session [0, {session_length}]")));
        }
        if !price.is_finite() {
            return Err(parse_err(format!("non-finite price `{}`", record.price)));
        }
        if price <= 0.0 {
            return Err(Error::NonPositivePrice {
                path: path.to_owned(),
                row,
                price,
            });
        }
        ticks.push(Tick { time, price });
    }
    if ticks.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_owned(),
        });
    }

    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TickSeries::new(ticks, session_length, symbol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub s0: f64,
    /// Annual drift.
    pub mu: f64,
    /// Annual volatility.
    pub sigma: f64,
    pub n_ticks: usize,
    pub session_length: f64,
    pub trading_days: f64,
    pub seed: u64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            s0: 425.0,
            mu: 0.0,
            sigma: 0.5,
            n_ticks: 23_401,
            session_length: SESSION_SECONDS,
            trading_days: TRADING_DAYS,
            seed: 20_200_102,
        }
    }
}

/// Samples geometric Brownian motion at `n_ticks` equispaced times across the
/// session. Each step's log-return is `N((mu - sigma^2/2) dt, sigma^2 dt)`
/// with `dt` in years of `trading_days` sessions.
pub fn synth_gbm_ticks(params: &GbmParams) -> Result<TickSeries> {
    let GbmParams {
        s0,
        mu,
        sigma,
        n_ticks,
        session_length,
        trading_days,
        seed,
    } = *params;
    if n_ticks < 2 {
        return Err(Error::TooFewTicks {
            needed: 2,
            got: n_ticks,
        });
    }
    if !(s0 > 0.0) || !(sigma >= 0.0) || !(session_length > 0.0) || !(trading_days > 0.0) {
        return Err(Error::InvalidInput(format!(
            "GBM requires s0 > 0, sigma >= 0, session_length > 0, trading_days > 0 (got s0={s0}, sigma={sigma}, session_length={session_length}, trading_days={trading_days})"
        )));
    }

    let steps = (n_ticks - 1) as f64;
    let dt_seconds = session_length / steps;
    let seconds_per_year = trading_days * session_length;
    let dt_years = dt_seconds / seconds_per_year;
    let drift = (mu - 0.5 * sigma * sigma) * dt_years;
    let diffusion = sigma * dt_years.sqrt();

    let mut rng = rng::seeded(seed);
    let log_s0 = s0.ln();
    let mut log_s = log_s0;
    let mut ticks = Vec::with_capacity(n_ticks);
    for n in 0..n_ticks {
        let time = if n + 1 == n_ticks {
            session_length
        } else {
            n as f64 * dt_seconds
        };
        if n > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            log_s += drift + diffusion * z;
        }
        let price = if n == 0 {
            s0
        } else if sigma == 0.0 {
            s0 * (mu * time / seconds_per_year).exp()
        } else {
            log_s.exp()
        };
        ticks.push(Tick { time, price });
    }
    Ok(TickSeries::new(ticks, session_length, "SYNTH"))
}

pub fn normalized_time(time: f64, session_length: f64) -> f64 {
    time / session_length
}

/// Maps every timestamp onto `[0, 1]`; the returned series has session length 1.
pub fn normalize_time(series: &TickSeries) -> Result<TickSeries> {
    if !(series.session_length > 0.0) {
        return Err(Error::InvalidInput(format!(
            "session length must be positive, got {}",
            series.session_length
        )));
    }
    let ticks = series
        .ticks
        .iter()
        .map(|t| Tick {
            time: normalized_time(t.time, series.session_length),
            price: t.price,
        })
        .collect();
    Ok(TickSeries {
        ticks,
        session_length: 1.0,
        symbol: series.symbol.clone(),
    })
}

/// `(price - min) / (max - min)`. Out-of-range prices map outside `[0, 1]`.
pub fn normalize_price(price: f64, min_price: f64, max_price: f64) -> Result<f64> {
    if !(max_price > min_price) {
        return Err(Error::InvalidInput(format!(
            "price range requires max > min (got min={min_price}, max={max_price})"
        )));
    }
    Ok((price - min_price) / (max_price - min_price))
}

/// One tick per interval boundary `0, interval, 2·interval, … ≤ session_length`,
/// carrying the last price observed at or before the boundary. Boundaries
/// preceding the first tick are dropped.
pub fn resample(series: &TickSeries, interval: f64) -> Result<TickSeries> {
    if !(interval > 0.0) {
        return Err(Error::InvalidInput(format!(
            "resample interval must be positive, got {interval}"
        )));
    }
    let n_boundaries = (series.session_length / interval + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n_boundaries);
    let mut cursor = 0usize;
    let mut last: Option<f64> = None;
    for k in 0..n_boundaries {
        let boundary = k as f64 * interval;
        while cursor < series.ticks.len() && series.ticks[cursor].time <= boundary {
            last = Some(series.ticks[cursor].price);
            cursor += 1;
        }
        if let Some(price) = last {
            out.push(Tick {
                time: boundary,
                price,
            });
        }
    }
    Ok(TickSeries {
        ticks: out,
        session_length: series.session_length,
        symbol: series.symbol.clone(),
    })
}
