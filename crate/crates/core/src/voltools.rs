//! Black-Scholes-Merton pricing, greeks, implied volatility, Dupire local
//! volatility and the realized-variance proxy.
//!
//! All rates, yields and volatilities are annual decimals and expiries are in
//! years. Theta is the derivative with respect to calendar time, so it is the
//! negative of the derivative with respect to time-to-expiry.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptionKind {
    Call,
    Put,
}

impl std::str::FromStr for OptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C" | "c" | "call" | "Call" => Ok(Self::Call),
            "P" | "p" | "put" | "Put" => Ok(Self::Put),
            other => Err(Error::InvalidInput(format!("option flag must be C or P, got `{other}`"))),
        }
    }
}

/// Market inputs shared by every quote on one underlying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub spot: f64,
    pub rate: f64,
    pub dividend_yield: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub strike: f64,
    pub expiry: f64,
    pub mid_price: f64,
    pub kind: OptionKind,
    pub spot: f64,
    pub rate: f64,
    pub dividend_yield: f64,
}

impl OptionQuote {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.spot > 0.0 && self.mid_price > 0.0 && self.expiry > 0.0) {
            return Err(Error::InvalidInput(format!(
                "quote needs positive strike, spot, price and expiry (K={}, S={}, mid={}, T={})",
                self.strike, self.spot, self.mid_price, self.expiry
            )));
        }
        if !(self.rate.is_finite() && self.dividend_yield.is_finite()) {
            return Err(Error::InvalidInput("rate and yield must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Greeks {
    pub delta: f64,
    pub gamma: f64,
    pub vega: f64,
    pub theta: f64,
    pub rho: f64,
    pub vanna: f64,
    pub volga: f64,
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn check_inputs(spot: f64, strike: f64, expiry: f64, vol: f64) -> Result<()> {
    if spot > 0.0 && strike > 0.0 && expiry > 0.0 && vol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "Black-Scholes inputs must be positive (S={spot}, K={strike}, T={expiry}, vol={vol})"
        )))
    }
}

fn d1_d2(spot: f64, strike: f64, rate: f64, q: f64, expiry: f64, vol: f64) -> (f64, f64) {
    let sd = vol * expiry.sqrt();
    let d1 = ((spot / strike).ln() + (rate - q + 0.5 * vol * vol) * expiry) / sd;
    (d1, d1 - sd)
}

pub fn bs_price(spot: f64, strike: f64, rate: f64, q: f64, expiry: f64, vol: f64, kind: OptionKind) -> Result<f64> {
    check_inputs(spot, strike, expiry, vol)?;
    let (d1, d2) = d1_d2(spot, strike, rate, q, expiry, vol);
    let fwd_s = spot * (-q * expiry).exp();
    let disc_k = strike * (-rate * expiry).exp();
    Ok(match kind {
        OptionKind::Call => fwd_s * norm_cdf(d1) - disc_k * norm_cdf(d2),
        OptionKind::Put => disc_k * norm_cdf(-d2) - fwd_s * norm_cdf(-d1),
    })
}

pub fn bs_greeks(spot: f64, strike: f64, rate: f64, q: f64, expiry: f64, vol: f64, kind: OptionKind) -> Result<Greeks> {
    check_inputs(spot, strike, expiry, vol)?;
    let (d1, d2) = d1_d2(spot, strike, rate, q, expiry, vol);
    let sqrt_t = expiry.sqrt();
    let dq = (-q * expiry).exp();
    let dr = (-rate * expiry).exp();
    let pdf = norm_pdf(d1);

    let gamma = dq * pdf / (spot * vol * sqrt_t);
    let vega = spot * dq * pdf * sqrt_t;
    let decay = -spot * dq * pdf * vol / (2.0 * sqrt_t);
    let (delta, theta, rho) = match kind {
        OptionKind::Call => (
            dq * norm_cdf(d1),
            decay - rate * strike * dr * norm_cdf(d2) + q * spot * dq * norm_cdf(d1),
            strike * expiry * dr * norm_cdf(d2),
        ),
        OptionKind::Put => (
            -dq * norm_cdf(-d1),
            decay + rate * strike * dr * norm_cdf(-d2) - q * spot * dq * norm_cdf(-d1),
            -strike * expiry * dr * norm_cdf(-d2),
        ),
    };
    Ok(Greeks {
        delta,
        gamma,
        vega,
        theta,
        rho,
        vanna: -dq * pdf * d2 / vol,
        volga: vega * d1 * d2 / vol,
    })
}

/// No-arbitrage price bounds `(lower, upper)` for a European option.
pub fn price_bounds(quote: &OptionQuote) -> (f64, f64) {
    let fwd_s = quote.spot * (-quote.dividend_yield * quote.expiry).exp();
    let disc_k = quote.strike * (-quote.rate * quote.expiry).exp();
    match quote.kind {
        OptionKind::Call => ((fwd_s - disc_k).max(0.0), fwd_s),
        OptionKind::Put => ((disc_k - fwd_s).max(0.0), disc_k),
    }
}

pub const IV_MAX_ITER: usize = 200;
const IV_SEED: f64 = 0.3;

/// Black-Scholes volatility reproducing `quote.mid_price`.
///
/// Newton's method on the log price, seeded at 0.3, inside a bracket that
/// every evaluation tightens. A Newton step that leaves the bracket or fails
/// to halve the step before last is replaced by bisection. Iteration stops
/// once the volatility is pinned to machine precision, then the price
/// residual is checked against `1e-10 · spot`.
pub fn implied_vol(quote: &OptionQuote) -> Result<f64> {
    quote.validate()?;
    let (lower, upper) = price_bounds(quote);
    if quote.mid_price <= lower {
        return Err(Error::PriceBound {
            price: quote.mid_price,
            bound: "lower (intrinsic)",
            limit: lower,
        });
    }
    if quote.mid_price >= upper {
        return Err(Error::PriceBound {
            price: quote.mid_price,
            bound: "upper",
            limit: upper,
        });
    }
    let price = |v: f64| {
        bs_price(quote.spot, quote.strike, quote.rate, quote.dividend_yield, quote.expiry, v, quote.kind)
    };
    let vega = |v: f64| {
        bs_greeks(quote.spot, quote.strike, quote.rate, quote.dividend_yield, quote.expiry, v, quote.kind)
            .map(|g| g.vega)
    };

    let target = quote.mid_price;
    let log_target = target.ln();
    let mut lo = 0.0;
    let mut hi = 1.0;
    while price(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::NoConvergence { iterations: 0 });
        }
    }

    let mut v = if IV_SEED > lo && IV_SEED < hi { IV_SEED } else { 0.5 * (lo + hi) };
    let mut step_old = hi - lo;
    let mut step = step_old;
    for iter in 0..IV_MAX_ITER {
        let p = price(v)?;
        if p == target {
            return Ok(v);
        }
        if p > target {
            hi = v;
        } else {
            lo = v;
        }
        // log-price residual and slope; an underflowed price sits below target
        let f = if p > 0.0 { p.ln() - log_target } else { f64::NEG_INFINITY };
        let slope = if p > 0.0 { vega(v)? / p } else { 0.0 };
        let newton = v - f / slope;
        let use_newton = f.is_finite()
            && slope > 0.0
            && newton > lo
            && newton < hi
            && (2.0 * f).abs() <= (step_old * slope).abs();
        step_old = step;
        let next = if use_newton { newton } else { 0.5 * (lo + hi) };
        step = next - v;
        if step.abs() <= 2.0 * f64::EPSILON * v.max(next) || hi - lo <= 4.0 * f64::EPSILON * hi {
            return finish(next, price(next)? - target, quote.spot, iter);
        }
        v = next;
    }
    Err(Error::NoConvergence { iterations: IV_MAX_ITER })
}

fn finish(v: f64, residual: f64, spot: f64, iterations: usize) -> Result<f64> {
    if residual.abs() < 1e-10 * spot {
        Ok(v)
    } else {
        Err(Error::NoConvergence { iterations })
    }
}

/// Call prices on a strike × expiry lattice; `prices[t][k]` is the call at
/// `expiries[t]` and `strikes[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallGrid {
    pub strikes: Vec<f64>,
    pub expiries: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1]) && xs.iter().all(|x| x.is_finite())
}

impl CallGrid {
    pub fn new(strikes: Vec<f64>, expiries: Vec<f64>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if !strictly_increasing(&strikes) || !strictly_increasing(&expiries) {
            return Err(Error::InvalidInput("call grid axes must be strictly increasing".into()));
        }
        if prices.len() != expiries.len() || prices.iter().any(|row| row.len() != strikes.len()) {
            return Err(Error::Dimension(format!(
                "call grid prices must be {}x{}",
                expiries.len(),
                strikes.len()
            )));
        }
        if prices.iter().flatten().any(|&c| !(c >= 0.0)) {
            return Err(Error::InvalidInput("call prices must be non-negative".into()));
        }
        Ok(Self {
            strikes,
            expiries,
            prices,
        })
    }

    /// Black-Scholes calls at a single volatility.
    pub fn from_flat_vol(spot: f64, rate: f64, q: f64, vol: f64, strikes: Vec<f64>, expiries: Vec<f64>) -> Result<Self> {
        let prices = expiries
            .iter()
            .map(|&t| {
                strikes
                    .iter()
                    .map(|&k| bs_price(spot, k, rate, q, t, vol, OptionKind::Call))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(strikes, expiries, prices)
    }
}

fn node_index(axis: &[f64], x: f64) -> Option<usize> {
    axis.iter().position(|&a| (a - x).abs() <= 1e-12 * a.abs().max(1.0))
}

/// First and second derivatives at the middle of three non-uniform points.
fn central_diff(xm: f64, x0: f64, xp: f64, fm: f64, f0: f64, fp: f64) -> (f64, f64) {
    let (hm, hp) = (x0 - xm, xp - x0);
    let denom = hm * hp * (hm + hp);
    let d1 = (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / denom;
    let d2 = 2.0 * (hm * fp - (hm + hp) * f0 + hp * fm) / denom;
    (d1, d2)
}

/// Dupire local volatility at an interior lattice node:
/// `σ² = (C_T + (r − q) K C_K + q C) / (½ K² C_KK)`, with every derivative a
/// central difference on the grid.
pub fn dupire_local_vol(grid: &CallGrid, rate: f64, q: f64, strike: f64, expiry: f64) -> Result<f64> {
    let not_interior = || Error::NotInterior { strike, expiry };
    let k = node_index(&grid.strikes, strike).ok_or_else(not_interior)?;
    let t = node_index(&grid.expiries, expiry).ok_or_else(not_interior)?;
    if k == 0 || k + 1 == grid.strikes.len() || t == 0 || t + 1 == grid.expiries.len() {
        return Err(not_interior());
    }
    let ks = &grid.strikes;
    let ts = &grid.expiries;
    let row = &grid.prices[t];
    let c = row[k];
    let (c_k, c_kk) = central_diff(ks[k - 1], ks[k], ks[k + 1], row[k - 1], c, row[k + 1]);
    let (c_t, _) = central_diff(
        ts[t - 1],
        ts[t],
        ts[t + 1],
        grid.prices[t - 1][k],
        c,
        grid.prices[t + 1][k],
    );
    let kk = ks[k];
    let denom = 0.5 * kk * kk * c_kk;
    if !(denom > 0.0) {
        return Err(Error::ButterflyArbitrage(denom));
    }
    let numer = c_t + (rate - q) * kk * c_k + q * c;
    if !(numer >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative Dupire numerator {numer} at K={strike}, T={expiry} (calendar arbitrage)"
        )));
    }
    Ok((numer / denom).sqrt())
}

/// Annualized variance of a single move: `((s_end − s_start)/s_start)² / τ`.
pub fn realized_var_proxy(s_start: f64, s_end: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !(s_start > 0.0) {
        return Err(Error::InvalidInput(format!(
            "realized variance needs s_start > 0 and tau > 0 (got {s_start}, {tau})"
        )));
    }
    let r = (s_end - s_start) / s_start;
    Ok(r * r / tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strike: f64,
    pub iv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuote {
    pub index: usize,
    pub strike: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedCurve {
    pub expiry: f64,
    pub points: Vec<CurvePoint>,
    pub skipped: Vec<SkippedQuote>,
}

/// Implied volatility per strike for quotes sharing one expiry. Quotes that
/// fail are skipped and reported; points come back sorted by strike.
pub fn implied_curve(quotes: &[OptionQuote]) -> Result<ImpliedCurve> {
    let first = quotes
        .first()
        .ok_or_else(|| Error::NoValidQuotes("quote list is empty".into()))?;
    if quotes
        .iter()
        .any(|q| (q.expiry - first.expiry).abs() > 1e-12 * first.expiry.abs().max(1.0))
    {
        return Err(Error::InvalidInput("implied curve quotes must share one expiry".into()));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (index, q) in quotes.iter().enumerate() {
        match implied_vol(q) {
            Ok(iv) => points.push(CurvePoint { strike: q.strike, iv }),
            Err(e) => skipped.push(SkippedQuote {
                index,
                strike: q.strike,
                reason: e.to_string(),
            }),
        }
    }
    if points.len() < 2 {
        return Err(Error::NoValidQuotes(format!(
            "{} of {} quotes inverted; need at least 2",
            points.len(),
            quotes.len()
        )));
    }
    points.sort_by(|a, b| a.strike.total_cmp(&b.strike));
    Ok(ImpliedCurve {
        expiry: first.expiry,
        points,
        skipped,
    })
}

#[derive(Debug, Deserialize)]
struct QuoteRow {
    strike: f64,
    expiry_years: f64,
    mid: f64,
    flag: String,
}

/// Reads `strike,expiry_years,mid,flag` rows and attaches the market inputs.
pub fn read_quotes(path: &Path, market: Market) -> Result<Vec<OptionQuote>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut quotes = Vec::new();
    for (n, row) in reader.deserialize::<QuoteRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: n + 2,
            message: e.to_string(),
        })?;
        let kind = row.flag.parse().map_err(|e: Error| Error::Parse {
            path: path.to_path_buf(),
            row: n + 2,
            message: e.to_string(),
        })?;
        quotes.push(OptionQuote {
            strike: row.strike,
            expiry: row.expiry_years,
            mid_price: row.mid,
            kind,
            spot: market.spot,
            rate: market.rate,
            dividend_yield: market.dividend_yield,
        });
    }
    if quotes.is_empty() {
        return Err(Error::NoValidQuotes(format!("{}: no quotes", path.display())));
    }
    Ok(quotes)
}

pub fn write_quotes(quotes: &[OptionQuote], path: &Path) -> Result<()> {
    let mut out = String::from("strike,expiry_years,mid,flag\n");
    for q in quotes {
        let flag = match q.kind {
            OptionKind::Call => "C",
            OptionKind::Put => "P",
        };
        let _ = writeln!(out, "{},{},{},{}", q.strike, q.expiry, q.mid_price, flag);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn curve_to_csv(curve: &ImpliedCurve) -> String {
    let mut out = String::from("strike,iv\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{}", p.strike, p.iv);
    }
    out
}

/// Out-of-the-money quotes priced from a volatility function of strike.
pub fn synth_otm_quotes(market: Market, expiry: f64, strikes: &[f64], vol: impl Fn(f64) -> f64) -> Result<Vec<OptionQuote>> {
    strikes
        .iter()
        .map(|&k| {
            let kind = if k >= market.spot { OptionKind::Call } else { OptionKind::Put };
            let mid = bs_price(market.spot, k, market.rate, market.dividend_yield, expiry, vol(k), kind)?;
            Ok(OptionQuote {
                strike: k,
                expiry,
                mid_price: mid,
                kind,
                spot: market.spot,
                rate: market.rate,
                dividend_yield: market.dividend_yield,
            })
        })
        .collect()
}
