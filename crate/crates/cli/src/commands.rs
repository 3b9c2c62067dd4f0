use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;

use heston_calib::calibration::{self, price_grid, BackendKind};
use heston_calib::deam::{deamericanize_all, InversionFlag};
use heston_calib::io::report::{self, read_report, REPORT_FILE};
use heston_calib::io::{emit_report, write_quotes_file, Quote, QuoteSet, RunConfig};
use heston_calib::rbm::{build_reduced_model, read_model_file, write_model_file, ReducedModel};
use heston_calib::solver::TimeGrid;
use heston_calib::{CalibParams, Style};

/// Name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG: &str = "run.toml";
const DEFAULT_MODEL: &str = "model.hrbm";
const SURFACE_STRIKES: usize = 41;

pub fn resolve_config(path: Option<&Path>, backend: Option<BackendKind>, output: Option<PathBuf>, model: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(b) = backend {
        cfg.backend = b;
    }
    if let Some(o) = output {
        cfg.paths.output = o;
    }
    if model.is_some() {
        cfg.paths.model = model;
    }
    cfg.validate()?;
    Ok(cfg.resolved()?)
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.paths.output.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(&dir.join(RESOLVED_CONFIG))?;
    Ok(dir)
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.model.clone().unwrap_or_else(|| cfg.paths.output.join(DEFAULT_MODEL))
}

fn load_model(cfg: &RunConfig) -> Result<Option<Arc<ReducedModel>>> {
    if !cfg.backend.needs_reduced_model() {
        return Ok(None);
    }
    let path = model_path(cfg);
    let model = read_model_file(&path).with_context(|| format!("reading reduced model {} (run build-basis first)", path.display()))?;
    Ok(Some(Arc::new(model)))
}

pub fn mesh_info(cfg: &RunConfig) -> Result<()> {
    output_dir(cfg)?;
    let ctx = cfg.pricing_context()?;
    let s = &ctx.space;
    let widths = |v: &[f64]| {
        let w: Vec<f64> = v.windows(2).map(|p| p[1] - p[0]).collect();
        (w.iter().cloned().fold(f64::INFINITY, f64::min), w.iter().cloned().fold(0.0, f64::max))
    };
    let (nu_lo, nu_hi) = widths(&s.nu_nodes);
    let (x_lo, x_hi) = widths(&s.x_nodes);
    println!("domain      nu in [{}, {}], x in [{}, {}]", s.domain.nu_min, s.domain.nu_max, s.domain.x_min, s.domain.x_max);
    println!("cells       {} x {}", s.spec.n_nu, s.spec.n_x);
    println!("nodes       {}", s.n_nodes());
    println!("free nodes  {}", s.n_free());
    println!("triangles   {}", s.triangles.len());
    println!("bandwidth   {}", s.bandwidth());
    println!("nu spacing  [{nu_lo:.4e}, {nu_hi:.4e}]");
    println!("x spacing   [{x_lo:.4e}, {x_hi:.4e}]");
    Ok(())
}

pub fn price(cfg: &RunConfig, theta: &[f64], maturity: f64, strike: f64) -> Result<()> {
    output_dir(cfg)?;
    let theta = CalibParams::from_array(theta.try_into().context("--theta takes five values")?);
    let backend = cfg.build_backend(load_model(cfg)?)?;
    let style = cfg.backend.style();
    let (spot, rate) = (cfg.data.spot()?, cfg.data.rate()?);
    let set = QuoteSet::new(spot, rate, vec![Quote::with_price(0, maturity, strike, 1.0, style)])?;
    let p = backend.price_quotes(&theta, &set, None)?[0];
    println!("{} put  T = {maturity}  K = {strike}  S0 = {spot}  r = {rate}  price = {p:.10}", style.as_str());
    Ok(())
}

pub fn build_basis(cfg: &RunConfig, style: Option<Style>) -> Result<()> {
    output_dir(cfg)?;
    let style = style.unwrap_or(cfg.backend.style());
    let ctx = cfg.pricing_context()?;
    let grid = TimeGrid::fit_maturities(&cfg.data_maturities()?, cfg.time.min_steps, cfg.time.theta)?;
    let train = cfg.training_set()?;
    info!("{} training points, {} time steps", train.len(), grid.steps);
    let t0 = Instant::now();
    let model = build_reduced_model(&ctx, &train, &grid, &cfg.greedy(), style)?;
    let path = model_path(cfg);
    write_model_file(&path, &model)?;
    println!(
        "{} basis: N = {}, N_W = {}, training error {:.4e}{}, {:.1} s -> {}",
        style.as_str(),
        model.dim(),
        model.dual_dim(),
        model.training_error,
        if model.stagnated { " (stagnated)" } else { "" },
        t0.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct InversionRow {
    maturity: f64,
    strike: f64,
    american: f64,
    sigma: f64,
    european: f64,
    flag: InversionFlag,
}

pub fn deamericanize(cfg: &RunConfig) -> Result<()> {
    let dir = output_dir(cfg)?;
    let quotes = cfg.load_quotes()?;
    if quotes.style() != Some(Style::American) {
        bail!("de-Americanization needs American quotes");
    }
    let all = deamericanize_all(&quotes, &cfg.tree)?;
    let mut w = csv::Writer::from_path(dir.join("inversion.csv"))?;
    for pq in &all {
        w.serialize(InversionRow {
            maturity: pq.quote.maturity,
            strike: pq.quote.strike,
            american: pq.quote.price.unwrap_or(f64::NAN),
            sigma: pq.sigma,
            european: pq.pseudo_price,
            flag: pq.flag,
        })?;
    }
    w.flush()?;
    let kept: Vec<Quote> = all
        .iter()
        .filter(|pq| pq.flag != InversionFlag::NonInvertible)
        .map(|pq| Quote { price: Some(pq.pseudo_price), bid: None, ask: None, style: Style::European, ..pq.quote })
        .collect();
    write_quotes_file(&dir.join("pseudo_european.csv"), &kept)?;
    println!("{} of {} quotes de-Americanized -> {}", kept.len(), all.len(), dir.display());
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let dir = output_dir(cfg)?;
    let Some(theta) = cfg.data.theta else { bail!("synth needs data.theta") };
    let backend = match cfg.backend {
        BackendKind::DetailedAm | BackendKind::DetailedEu | BackendKind::DasClosedForm => cfg.build_backend(None)?,
        k if k.needs_reduced_model() => cfg.build_backend(load_model(cfg)?)?,
        _ => cfg.synthetic_backend()?,
    };
    let set = calibration::generate_synthetic(&theta, cfg.data.rate()?, &backend)?;
    let path = dir.join("synthetic.csv");
    write_quotes_file(&path, &set.quotes)?;
    println!("{} {} quotes at theta = {:?} -> {}", set.len(), set.style().map_or("mixed", Style::as_str), theta.to_array(), path.display());
    Ok(())
}

pub fn calibrate(cfg: &RunConfig) -> Result<()> {
    let dir = output_dir(cfg)?;
    let quotes = cfg.load_quotes()?;
    let backend = cfg.build_backend(load_model(cfg)?)?;
    let rep = calibration::calibrate(&quotes, &backend, &cfg.calib_options())?;
    let (lo, hi) = quotes.quotes.iter().fold((f64::INFINITY, 0.0f64), |(a, b), q| (a.min(q.strike), b.max(q.strike)));
    let strikes: Vec<f64> = (0..SURFACE_STRIKES).map(|i| lo + (hi - lo) * i as f64 / (SURFACE_STRIKES - 1) as f64).collect();
    let surface = price_grid(&backend, &rep.theta, quotes.spot, quotes.rate, &quotes.maturities(), &strikes)?;
    emit_report(&rep, Some(&surface), dir)?;
    print!("{}", report::summary(&rep));
    println!("timings          preprocess {:.3} s, calibrate {:.3} s", rep.timings.preprocess, rep.timings.calibrate);
    Ok(())
}

pub fn report(cfg: &RunConfig, input: Option<PathBuf>) -> Result<()> {
    let input = input.unwrap_or_else(|| cfg.paths.output.clone());
    let rep = read_report(&input.join(REPORT_FILE)).with_context(|| format!("reading {}", input.join(REPORT_FILE).display()))?;
    let dir = output_dir(cfg)?;
    fs::write(dir.join(report::SUMMARY_FILE), report::summary(&rep))?;
    report::write_residuals(&dir.join(report::RESIDUALS_FILE), &rep.residuals)?;
    print!("{}", report::summary(&rep));
    Ok(())
}
