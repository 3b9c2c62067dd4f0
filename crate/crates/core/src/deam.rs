//! De-Americanization: American put quotes to pseudo-European prices
//! through per-quote Cox-Ross-Rubinstein trees.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::quotes::{Quote, QuoteSet};
use crate::params::Style;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub steps: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// Absolute price tolerance of the volatility inversion.
    pub price_tol: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { steps: 500, sigma_lo: 1e-4, sigma_hi: 5.0, price_tol: 1e-8 }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(0.0 < self.sigma_lo && self.sigma_lo < self.sigma_hi) || !(self.price_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid tree configuration {self:?}")));
        }
        Ok(())
    }
}

/// Put price on a CRR lattice with `u = exp(sigma sqrt(dt))`, `d = 1/u`.
pub fn crr_price(s0: f64, strike: f64, t: f64, r: f64, sigma: f64, steps: usize, style: Style) -> Result<f64> {
    if !(s0 > 0.0 && strike > 0.0 && t > 0.0 && sigma > 0.0 && r >= 0.0) || steps == 0 {
        return Err(Error::InvalidParameter(format!(
            "tree needs positive spot, strike, maturity, volatility and steps (got {s0}, {strike}, {t}, {sigma}, {steps})"
        )));
    }
    let dt = t / steps as f64;
    let up = (sigma * dt.sqrt()).exp();
    let down = 1.0 / up;
    let growth = (r * dt).exp();
    let p = (growth - down) / (up - down);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Tree(format!(
            "risk-neutral probability {p} outside (0, 1); increase volatility above r sqrt(dt) = {} or use more steps",
            r * dt.sqrt()
        )));
    }
    let disc = 1.0 / growth;
    let (pu, pd) = (disc * p, disc * (1.0 - p));
    let american = style == Style::American;
    // node j at level n has j up moves: S = s0 u^(2j - n)
    let mut v: Vec<f64> = (0..=steps)
        .map(|j| (strike - s0 * up.powi(2 * j as i32 - steps as i32)).max(0.0))
        .collect();
    for n in (0..steps).rev() {
        for j in 0..=n {
            let cont = pu * v[j + 1] + pd * v[j];
            v[j] = if american {
                cont.max(strike - s0 * up.powi(2 * j as i32 - n as i32))
            } else {
                cont
            };
        }
    }
    Ok(v[0])
}

/// Outcome of a volatility inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionFlag {
    Ok,
    /// Observed price at or below the tree price at the lower volatility
    /// bound; the bound is returned.
    Degenerate,
    /// Price outside the attainable range; the quote is dropped.
    NonInvertible,
}

/// Lowest volatility with a valid tree for this rate and step size.
fn sigma_floor(t: f64, r: f64, config: &TreeConfig) -> f64 {
    let dt = t / config.steps as f64;
    config.sigma_lo.max(r * dt.sqrt() * 1.0001)
}

/// Flat volatility whose `style` tree price matches `price`.
pub fn invert_volatility(price: f64, s0: f64, strike: f64, t: f64, r: f64, style: Style, config: &TreeConfig) -> Result<(f64, InversionFlag)> {
    config.validate()?;
    let lo0 = sigma_floor(t, r, config);
    if lo0 >= config.sigma_hi {
        return Err(Error::Tree(format!("volatility floor {lo0} exceeds the bracket; use more steps")));
    }
    let f = |s: f64| crr_price(s0, strike, t, r, s, config.steps, style);
    let intrinsic = (strike - s0).max(0.0);
    let p_hi = f(config.sigma_hi)?;
    if !(price.is_finite()) || price < intrinsic - config.price_tol || price > strike || price > p_hi + config.price_tol {
        return Ok((f64::NAN, InversionFlag::NonInvertible));
    }
    let p_lo = f(lo0)?;
    if price <= p_lo + config.price_tol {
        return Ok((lo0, InversionFlag::Degenerate));
    }
    let (mut lo, mut hi) = (lo0, config.sigma_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let pm = f(mid)?;
        if (pm - price).abs() <= config.price_tol || hi - lo <= 1e-15 * hi {
            return Ok((mid, InversionFlag::Ok));
        }
        if pm < price {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), InversionFlag::Ok))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoQuote {
    pub quote: Quote,
    pub sigma: f64,
    /// European price on the tree calibrated to the American quote.
    pub pseudo_price: f64,
    pub flag: InversionFlag,
}

/// Inverts one American quote and prices its European counterpart.
pub fn deamericanize_quote(quote: &Quote, s0: f64, r: f64, config: &TreeConfig) -> Result<PseudoQuote> {
    let price = quote
        .price
        .ok_or_else(|| Error::Quote { id: quote.id, source: Box::new(Error::InvalidParameter("missing price".into())) })?;
    let wrap = |e: Error| Error::Quote { id: quote.id, source: Box::new(e) };
    let (sigma, flag) =
        invert_volatility(price, s0, quote.strike, quote.maturity, r, Style::American, config).map_err(wrap)?;
    let pseudo_price = if flag == InversionFlag::NonInvertible {
        f64::NAN
    } else {
        crr_price(s0, quote.strike, quote.maturity, r, sigma, config.steps, Style::European).map_err(wrap)?
    };
    Ok(PseudoQuote { quote: *quote, sigma, pseudo_price, flag })
}

/// Applies the transform to every quote, in parallel with input order kept.
/// Returns all outcomes, non-invertible ones included.
pub fn deamericanize_all(quotes: &QuoteSet, config: &TreeConfig) -> Result<Vec<PseudoQuote>> {
    quotes
        .quotes
        .par_iter()
        .map(|q| deamericanize_quote(q, quotes.spot, quotes.rate, config))
        .collect()
}

/// Pseudo-European quote set; non-invertible quotes are dropped and logged.
pub fn deamericanize_set(quotes: &QuoteSet, config: &TreeConfig) -> Result<(QuoteSet, Vec<PseudoQuote>)> {
    let all = deamericanize_all(quotes, config)?;
    let mut kept = Vec::with_capacity(all.len());
    for pq in &all {
        match pq.flag {
            InversionFlag::NonInvertible => info!(
                "dropping quote {} (T = {}, K = {}): price {:?} not attainable by the tree",
                pq.quote.id, pq.quote.maturity, pq.quote.strike, pq.quote.price
            ),
            _ => kept.push(Quote { price: Some(pq.pseudo_price), bid: None, ask: None, style: Style::European, ..pq.quote }),
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyQuoteSet("no quote survived de-Americanization".into()));
    }
    Ok((QuoteSet::new(quotes.spot, quotes.rate, kept)?, all))
}
