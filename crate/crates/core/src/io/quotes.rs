use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Style;

/// One market observation of a put.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    /// Position in the source file.
    pub id: usize,
    pub maturity: f64,
    pub strike: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub price: Option<f64>,
    pub style: Style,
}

impl Quote {
    pub fn with_price(id: usize, maturity: f64, strike: f64, price: f64, style: Style) -> Self {
        Self { id, maturity, strike, bid: None, ask: None, price: Some(price), style }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Quote { id: self.id, source: Box::new(Error::InvalidParameter(msg)) });
        if !(self.maturity > 0.0 && self.strike > 0.0) {
            return fail(format!("maturity {} and strike {} must be positive", self.maturity, self.strike));
        }
        if let (Some(b), Some(a)) = (self.bid, self.ask) {
            if !(b >= 0.0 && b <= a) {
                return fail(format!("bid {b} must lie in [0, ask = {a}]"));
            }
        }
        if self.price.is_none() && (self.bid.is_none() || self.ask.is_none()) {
            return fail("needs a price or both bid and ask".into());
        }
        Ok(())
    }

    /// Observed price; midpoint when only bid/ask are known.
    pub fn observed(&self) -> Option<f64> {
        match (self.bid, self.ask) {
            (Some(b), Some(a)) => Some(0.5 * (b + a)),
            _ => self.price,
        }
    }

    fn zero_bid(&self) -> bool {
        self.bid == Some(0.0)
    }
}

/// Preprocessed quotes sorted by `(maturity, strike)` with a price each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSet {
    pub spot: f64,
    pub rate: f64,
    pub quotes: Vec<Quote>,
}

impl QuoteSet {
    pub fn new(spot: f64, rate: f64, mut quotes: Vec<Quote>) -> Result<Self> {
        if !(spot > 0.0) || !(rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("spot {spot} must be positive and rate {rate} nonnegative")));
        }
        if quotes.is_empty() {
            return Err(Error::EmptyQuoteSet("no quotes".into()));
        }
        for q in &quotes {
            q.validate()?;
            if q.price.is_none() {
                return Err(Error::Quote { id: q.id, source: Box::new(Error::InvalidParameter("missing price".into())) });
            }
        }
        sort_quotes(&mut quotes);
        Ok(Self { spot, rate, quotes })
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.price.expect("quote sets carry prices")).collect()
    }

    /// Distinct maturities in increasing order.
    pub fn maturities(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.quotes.iter().map(|q| q.maturity).collect();
        m.dedup();
        m
    }

    pub fn style(&self) -> Option<Style> {
        let s = self.quotes.first()?.style;
        self.quotes.iter().all(|q| q.style == s).then_some(s)
    }

    /// Same quotes with prices replaced and style overridden.
    pub fn with_prices(&self, prices: &[f64], style: Style) -> Self {
        let quotes = self
            .quotes
            .iter()
            .zip(prices)
            .map(|(q, &p)| Quote { price: Some(p), bid: None, ask: None, style, ..*q })
            .collect();
        Self { spot: self.spot, rate: self.rate, quotes }
    }
}

fn sort_quotes(q: &mut [Quote]) {
    q.sort_by(|a, b| a.maturity.total_cmp(&b.maturity).then(a.strike.total_cmp(&b.strike)).then(a.id.cmp(&b.id)));
}

/// Midpoint pricing, zero-bid removal and per-maturity truncation below the
/// highest pair of consecutive zero-bid strikes.
pub fn preprocess_quotes(raw: &[Quote], spot: f64, rate: f64) -> Result<QuoteSet> {
    let mut sorted = raw.to_vec();
    for q in &sorted {
        q.validate()?;
    }
    sort_quotes(&mut sorted);
    let mut groups: BTreeMap<u64, Vec<Quote>> = BTreeMap::new();
    for q in sorted {
        groups.entry(q.maturity.to_bits()).or_default().push(q);
    }
    let mut out = Vec::new();
    for (_, group) in groups {
        let cut = group
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].zero_bid() && w[1].zero_bid())
            .map(|(i, _)| i)
            .last();
        let start = cut.unwrap_or(0);
        for q in &group[start..] {
            if q.zero_bid() {
                continue;
            }
            out.push(Quote { price: q.observed(), ..*q });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyQuoteSet("every quote was removed by preprocessing".into()));
    }
    QuoteSet::new(spot, rate, out)
}

#[derive(Debug, Serialize, Deserialize)]
struct QuoteRecord {
    maturity_years: f64,
    strike: f64,
    bid: Option<f64>,
    ask: Option<f64>,
    price: Option<f64>,
    style: String,
}

pub fn read_quotes<R: Read>(reader: R) -> Result<Vec<Quote>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (id, rec) in rdr.deserialize::<QuoteRecord>().enumerate() {
        let rec = rec?;
        let q = Quote {
            id,
            maturity: rec.maturity_years,
            strike: rec.strike,
            bid: rec.bid,
            ask: rec.ask,
            price: rec.price,
            style: rec.style.parse()?,
        };
        q.validate()?;
        out.push(q);
    }
    Ok(out)
}

pub fn read_quotes_file(path: &Path) -> Result<Vec<Quote>> {
    read_quotes(std::fs::File::open(path)?)
}

pub fn write_quotes<W: Write>(writer: W, quotes: &[Quote]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for q in quotes {
        w.serialize(QuoteRecord {
            maturity_years: q.maturity,
            strike: q.strike,
            bid: q.bid,
            ask: q.ask,
            price: q.price,
            style: q.style.as_str().to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quotes_file(path: &Path, quotes: &[Quote]) -> Result<()> {
    write_quotes(std::fs::File::create(path)?, quotes)
}

pub const GOOGLE_SPOT: f64 = 523.755;
pub const GOOGLE_RATE: f64 = 0.0015;
const GOOGLE_CSV: &str = include_str!("../../data/google_puts.csv");

/// Bundled American puts on Google stock, February 2nd 2015, unprocessed.
pub fn google_raw() -> Vec<Quote> {
    read_quotes(GOOGLE_CSV.as_bytes()).expect("bundled data parses")
}

/// Bundled Google puts after preprocessing, with spot and rate of the day.
pub fn google_dataset() -> Result<QuoteSet> {
    preprocess_quotes(&google_raw(), GOOGLE_SPOT, GOOGLE_RATE)
}
