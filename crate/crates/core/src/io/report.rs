//! Calibration report files: summary text, residual table, fitted surface.
//!
//! Everything except `timings.toml` is a pure function of the report, so
//! identical runs produce identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibReport, PriceGrid, QuoteResidual, Timings};
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const SURFACE_FILE: &str = "surface.csv";
pub const REPORT_FILE: &str = "report.toml";
pub const TIMINGS_FILE: &str = "timings.toml";

pub fn summary(report: &CalibReport) -> String {
    let mut s = String::new();
    let p = |v: [f64; 5]| v.map(|x| format!("{x:.6}")).join(", ");
    let _ = writeln!(s, "backend          {}", report.backend);
    let _ = writeln!(s, "quotes           {}", report.residuals.len());
    let _ = writeln!(s, "x0               ({})", p(report.x0.to_array()));
    let _ = writeln!(s, "theta*           ({})", p(report.theta.to_array()));
    let _ = writeln!(s, "                 (xi, rho, gamma, kappa, nu0)");
    let _ = writeln!(s, "objective J      {:.6e}", report.objective);
    let _ = writeln!(s, "max rel. error   {:.6e}", report.max_rel_error());
    let _ = writeln!(s, "feller margin    {:.6e}", report.feller_margin);
    let _ = writeln!(s, "iterations       {}", report.iterations);
    let _ = writeln!(s, "evaluations      {}", report.evaluations);
    let _ = writeln!(s, "status           {:?}", report.status);
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct ResidualRow {
    maturity: f64,
    strike: f64,
    p_obs: f64,
    p_model: f64,
    abs_rel_err: f64,
}

pub fn write_residuals(path: &Path, rows: &[QuoteResidual]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(ResidualRow { maturity: r.maturity, strike: r.strike, p_obs: r.observed, p_model: r.model, abs_rel_err: r.abs_rel_err })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a residual table back; ids are row positions.
pub fn read_residuals(path: &Path) -> Result<Vec<QuoteResidual>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<ResidualRow>()
        .enumerate()
        .map(|(id, row)| {
            let row = row?;
            Ok(QuoteResidual {
                id,
                maturity: row.maturity,
                strike: row.strike,
                observed: row.p_obs,
                model: row.p_model,
                abs_rel_err: row.abs_rel_err,
            })
        })
        .collect()
}

/// Long-format surface: one `(maturity, strike, price)` row per node.
pub fn write_surface(path: &Path, grid: &PriceGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["maturity", "strike", "price"])?;
    for (i, t) in grid.maturities.iter().enumerate() {
        for (j, k) in grid.strikes.iter().enumerate() {
            w.serialize((t, k, grid.price(i, j)))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_surface(path: &Path) -> Result<PriceGrid> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<(f64, f64, f64)> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut maturities: Vec<f64> = rows.iter().map(|r| r.0).collect();
    maturities.dedup();
    let strikes: Vec<f64> = rows.iter().take_while(|r| r.0 == rows[0].0).map(|r| r.1).collect();
    if maturities.len() * strikes.len() != rows.len() {
        return Err(Error::Parse(format!("{}: not a full maturity x strike grid", path.display())));
    }
    Ok(PriceGrid { maturities, strikes, prices: rows.iter().map(|r| r.2).collect() })
}

pub fn write_report(path: &Path, report: &CalibReport) -> Result<()> {
    let s = toml::to_string(report).map_err(|e| Error::Parse(format!("report: {e}")))?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<CalibReport> {
    toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_timings(path: &Path, timings: &Timings) -> Result<()> {
    let s = toml::to_string(timings).map_err(|e| Error::Parse(format!("timings: {e}")))?;
    std::fs::write(path, s)?;
    Ok(())
}

/// Writes the report files into `dir`, creating it if needed; returns the
/// paths written.
pub fn emit_report(report: &CalibReport, surface: Option<&PriceGrid>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, summary(report))?;
    written.push(path);
    let path = dir.join(RESIDUALS_FILE);
    write_residuals(&path, &report.residuals)?;
    written.push(path);
    let path = dir.join(REPORT_FILE);
    write_report(&path, report)?;
    written.push(path);
    if let Some(grid) = surface {
        let path = dir.join(SURFACE_FILE);
        write_surface(&path, grid)?;
        written.push(path);
    }
    let path = dir.join(TIMINGS_FILE);
    write_timings(&path, &report.timings)?;
    written.push(path);
    Ok(written)
}
