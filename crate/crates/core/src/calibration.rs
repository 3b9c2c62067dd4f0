//! Least-squares calibration of `(xi, rho, gamma, kappa, nu0)` against put
//! quotes, over any pricing backend, by projected Levenberg-Marquardt.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{heston_put_cf, IntegrationConfig};
use crate::deam::{deamericanize_set, TreeConfig};
use crate::error::{Error, Result};
use crate::heston::PricingContext;
use crate::io::quotes::QuoteSet;
use crate::params::{CalibBox, CalibParams, Style, FELLER_EPS};
use crate::rbm::ReducedModel;
use crate::solver::{solve, TimeGrid};

/// Backend tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    DetailedAm,
    DetailedEu,
    ReducedAm,
    ReducedEu,
    DasPde,
    DasReduced,
    DasClosedForm,
}

impl BackendKind {
    pub const ALL: [BackendKind; 7] = [
        BackendKind::DetailedAm,
        BackendKind::DetailedEu,
        BackendKind::ReducedAm,
        BackendKind::ReducedEu,
        BackendKind::DasPde,
        BackendKind::DasReduced,
        BackendKind::DasClosedForm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::DetailedAm => "detailed-am",
            BackendKind::DetailedEu => "detailed-eu",
            BackendKind::ReducedAm => "reduced-am",
            BackendKind::ReducedEu => "reduced-eu",
            BackendKind::DasPde => "das-pde",
            BackendKind::DasReduced => "das-reduced",
            BackendKind::DasClosedForm => "das-closed-form",
        }
    }

    /// Prices European puts from de-Americanized quotes.
    pub fn is_das(self) -> bool {
        matches!(self, BackendKind::DasPde | BackendKind::DasReduced | BackendKind::DasClosedForm)
    }

    /// Option style the backend prices.
    pub fn style(self) -> Style {
        match self {
            BackendKind::DetailedAm | BackendKind::ReducedAm => Style::American,
            _ => Style::European,
        }
    }

    pub fn needs_reduced_model(self) -> bool {
        matches!(self, BackendKind::ReducedAm | BackendKind::ReducedEu | BackendKind::DasReduced)
    }

    pub fn needs_mesh(self) -> bool {
        matches!(self, BackendKind::DetailedAm | BackendKind::DetailedEu | BackendKind::DasPde)
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown backend '{s}'")))
    }
}

/// Time stepping of the PDE-based backends: the grid is the smallest one
/// with at least `min_steps` steps that hits every quoted maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSettings {
    pub min_steps: usize,
    pub theta: f64,
}

impl Default for TimeSettings {
    fn default() -> Self {
        Self { min_steps: 125, theta: 0.5 }
    }
}

/// Pricing backend with its solver handles.
#[derive(Debug, Clone)]
pub enum Backend {
    Detailed { kind: BackendKind, ctx: Arc<PricingContext>, time: TimeSettings },
    Reduced { kind: BackendKind, model: Arc<ReducedModel>, time: TimeSettings },
    ClosedForm { config: IntegrationConfig },
}

impl Backend {
    pub fn detailed(kind: BackendKind, ctx: Arc<PricingContext>, time: TimeSettings) -> Result<Self> {
        if !kind.needs_mesh() {
            return Err(Error::InvalidParameter(format!("{kind} is not a detailed backend")));
        }
        Ok(Backend::Detailed { kind, ctx, time })
    }

    pub fn reduced(kind: BackendKind, model: Arc<ReducedModel>, time: TimeSettings) -> Result<Self> {
        if !kind.needs_reduced_model() {
            return Err(Error::InvalidParameter(format!("{kind} is not a reduced backend")));
        }
        if model.style != kind.style() {
            return Err(Error::InvalidParameter(format!(
                "{kind} needs a {} reduced model, got {}",
                kind.style().as_str(),
                model.style.as_str()
            )));
        }
        Ok(Backend::Reduced { kind, model, time })
    }

    pub fn closed_form(config: IntegrationConfig) -> Result<Self> {
        config.validate()?;
        Ok(Backend::ClosedForm { config })
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Detailed { kind, .. } | Backend::Reduced { kind, .. } => *kind,
            Backend::ClosedForm { .. } => BackendKind::DasClosedForm,
        }
    }

    fn time(&self) -> Option<TimeSettings> {
        match self {
            Backend::Detailed { time, .. } | Backend::Reduced { time, .. } => Some(*time),
            Backend::ClosedForm { .. } => None,
        }
    }

    /// Time grid for a quote set, if the backend steps in time.
    pub fn grid_for(&self, quotes: &QuoteSet) -> Result<Option<TimeGrid>> {
        self.time()
            .map(|t| TimeGrid::fit_maturities(&quotes.maturities(), t.min_steps, t.theta))
            .transpose()
    }

    /// Model prices of every quote at `theta`, in quote order.
    pub fn price_quotes(&self, theta: &CalibParams, quotes: &QuoteSet, grid: Option<&TimeGrid>) -> Result<Vec<f64>> {
        let mu = theta.model(quotes.rate);
        mu.validate()?;
        let s0 = quotes.spot;
        let owned;
        let grid = match grid {
            Some(g) => Some(g),
            None => {
                owned = self.grid_for(quotes)?;
                owned.as_ref()
            }
        };
        let wrap = |id: usize| move |e: Error| Error::Quote { id, source: Box::new(e) };
        match self {
            Backend::Detailed { kind, ctx, .. } => {
                let grid = grid.expect("detailed backends step in time");
                let s = solve(ctx, &mu, grid, 1.0, kind.style())?;
                quotes
                    .quotes
                    .iter()
                    .map(|q| {
                        let x = (s0 / q.strike).ln();
                        let v = value_in_time(grid, q.maturity, |k| s.value(k, theta.nu0, x)).map_err(wrap(q.id))?;
                        Ok(q.strike * v)
                    })
                    .collect()
            }
            Backend::Reduced { model, .. } => {
                let grid = grid.expect("reduced backends step in time");
                let s = model.solve(&mu, grid)?;
                quotes
                    .quotes
                    .iter()
                    .map(|q| {
                        let x = (s0 / q.strike).ln();
                        let v = value_in_time(grid, q.maturity, |k| s.value(k, theta.nu0, x)).map_err(wrap(q.id))?;
                        Ok(q.strike * v)
                    })
                    .collect()
            }
            Backend::ClosedForm { config } => quotes
                .quotes
                .par_iter()
                .map(|q| heston_put_cf(s0, q.strike, q.maturity, &mu, theta.nu0, config).map_err(wrap(q.id)))
                .collect(),
        }
    }
}

/// Value at time `t`, linear in time between the two enclosing steps when
/// `t` is not a grid point.
fn value_in_time(grid: &TimeGrid, t: f64, f: impl Fn(usize) -> Result<f64>) -> Result<f64> {
    if let Some(k) = grid.step_of(t) {
        return f(k);
    }
    if !(t > 0.0 && t <= grid.horizon) {
        return Err(Error::InvalidParameter(format!("maturity {t} outside the time grid (0, {}]", grid.horizon)));
    }
    let k = ((t / grid.dt).floor() as usize).min(grid.steps - 1);
    let w = (t - grid.time(k)) / grid.dt;
    Ok((1.0 - w) * f(k)? + w * f(k + 1)?)
}

/// Mean squared residual `J = (1/M) sum r_i^2`.
pub fn mean_square(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64
}

/// Least-squares objective of one quote set under one backend.
pub struct Objective<'a> {
    pub backend: &'a Backend,
    pub quotes: &'a QuoteSet,
    pub grid: Option<TimeGrid>,
    observed: Vec<f64>,
    weights: Vec<f64>,
    evaluations: AtomicUsize,
}

impl<'a> Objective<'a> {
    pub fn new(backend: &'a Backend, quotes: &'a QuoteSet, weights: Option<&[f64]>) -> Result<Self> {
        let kind = backend.kind();
        if kind.is_das() && quotes.style() != Some(Style::European) {
            return Err(Error::InvalidParameter(format!("{kind} needs de-Americanized (european) quotes")));
        }
        let weights = match weights {
            Some(w) if w.len() != quotes.len() => {
                return Err(Error::InvalidParameter(format!("{} weights for {} quotes", w.len(), quotes.len())))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; quotes.len()],
        };
        Ok(Self {
            backend,
            quotes,
            grid: backend.grid_for(quotes)?,
            observed: quotes.prices(),
            weights,
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn model_prices(&self, theta: &CalibParams) -> Result<Vec<f64>> {
        self.backend.price_quotes(theta, self.quotes, self.grid.as_ref())
    }

    /// Weighted residuals `w_i (P_obs_i - P_i(theta))`.
    pub fn residuals(&self, theta: &[f64; 5]) -> Result<Vec<f64>> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let p = self.model_prices(&CalibParams::from_array(*theta))?;
        Ok(self.observed.iter().zip(&p).zip(&self.weights).map(|((o, p), w)| w * (o - p)).collect())
    }

    /// `(J, residuals)`.
    pub fn evaluate(&self, theta: &[f64; 5]) -> Result<(f64, Vec<f64>)> {
        let r = self.residuals(theta)?;
        Ok((mean_square(&r), r))
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }
}

/// Finite-difference step for coordinate `i`.
fn fd_step(theta: &[f64; 5], i: usize) -> f64 {
    1e-6 * theta[i].abs().max(1.0)
}

/// Forward-difference probe of coordinate `i` with step `h`, flipped to a
/// backward step where the forward point leaves the box.
fn probe(theta: &[f64; 5], i: usize, h: f64, bounds: &CalibBox) -> ([f64; 5], f64) {
    let mut p = *theta;
    let step = if theta[i] + h <= bounds.upper[i] { h } else { -h };
    p[i] += step;
    (p, step)
}

/// Evaluates `f` at a probe, retrying once with a tenth of the step.
fn probe_eval<T>(f: &(impl Fn(&[f64; 5]) -> Result<T> + Sync), theta: &[f64; 5], i: usize, bounds: &CalibBox) -> Result<(T, f64)> {
    let h = fd_step(theta, i);
    let (p, step) = probe(theta, i, h, bounds);
    match f(&p) {
        Ok(v) => Ok((v, step)),
        Err(e) => {
            debug!("probe {i} failed ({e}); retrying with h/10");
            let (p, step) = probe(theta, i, h / 10.0, bounds);
            Ok((f(&p)?, step))
        }
    }
}

/// Forward-difference gradient of a scalar objective; coordinates with
/// `fixed[i]` get zero.
pub fn fd_gradient(f: impl Fn(&[f64; 5]) -> Result<f64> + Sync, theta: &[f64; 5], bounds: &CalibBox, fixed: &[bool; 5]) -> Result<[f64; 5]> {
    let f0 = f(theta)?;
    let cols: Vec<f64> = (0..5)
        .into_par_iter()
        .map(|i| {
            if fixed[i] {
                return Ok(0.0);
            }
            let (fi, step) = probe_eval(&f, theta, i, bounds)?;
            Ok((fi - f0) / step)
        })
        .collect::<Result<_>>()?;
    Ok(std::array::from_fn(|i| cols[i]))
}

/// Forward-difference Jacobian of a residual map, `M x 5`.
pub fn fd_jacobian(
    f: impl Fn(&[f64; 5]) -> Result<Vec<f64>> + Sync,
    theta: &[f64; 5],
    r0: &[f64],
    bounds: &CalibBox,
    fixed: &[bool; 5],
) -> Result<DMatrix<f64>> {
    let cols: Vec<Vec<f64>> = (0..5)
        .into_par_iter()
        .map(|i| {
            if fixed[i] {
                return Ok(vec![0.0; r0.len()]);
            }
            let (ri, step) = probe_eval(&f, theta, i, bounds)?;
            Ok(ri.iter().zip(r0).map(|(a, b)| (a - b) / step).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(r0.len(), 5, |m, i| cols[i][m]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the objective by at most this.
    pub tol_objective: f64,
    /// Stop when an accepted step is at most this long.
    pub tol_step: f64,
    /// Initial Levenberg-Marquardt damping.
    pub damping: f64,
    /// Enforce `2 kappa gamma - xi^2 >= FELLER_EPS`.
    pub feller: bool,
    /// Coordinates held at their initial value.
    pub fixed: [bool; 5],
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { max_iterations: 200, tol_objective: 1e-12, tol_step: 1e-5, damping: 1e-3, feller: false, fixed: [false; 5] }
    }
}

impl OptimizerOptions {
    /// Holds `kappa` fixed.
    pub fn fixed_kappa(mut self) -> Self {
        self.fixed[3] = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Objective decrease below tolerance.
    ObjectiveTolerance,
    /// Step length below tolerance.
    StepTolerance,
    /// No damping produced a decrease.
    Stalled,
    MaxIterations,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(self, Status::ObjectiveTolerance | Status::StepTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub theta: [f64; 5],
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
}

const PENALTY_START: f64 = 1.0;
const PENALTY_GROWTH: f64 = 100.0;
const PENALTY_ROUNDS: usize = 8;
const MAX_DAMPING: f64 = 1e14;

fn feller_violation(x: &[f64; 5]) -> f64 {
    (FELLER_EPS - crate::params::feller_margin(x[0], x[2], x[3])).max(0.0)
}

/// Smallest change restoring `2 kappa gamma - xi^2 >= FELLER_EPS`: raise
/// `kappa` (or `gamma` when `kappa` is fixed), else lower `xi`.
fn feller_repair(x: &mut [f64; 5], bounds: &CalibBox, fixed: &[bool; 5]) -> bool {
    if feller_violation(x) == 0.0 {
        return true;
    }
    let target = (x[0] * x[0] + FELLER_EPS) * (1.0 + 1e-12);
    let (k, other) = if fixed[3] { (2, 3) } else { (3, 2) };
    let needed = target / (2.0 * x[other]);
    if needed <= bounds.upper[k] && !fixed[k] {
        x[k] = needed.max(x[k]);
    } else if !fixed[0] {
        let xi2 = 2.0 * x[2] * x[3] - FELLER_EPS;
        if xi2 > 0.0 && xi2.sqrt() * (1.0 - 1e-12) >= bounds.lower[0] {
            x[0] = xi2.sqrt() * (1.0 - 1e-12);
        }
    }
    feller_violation(x) == 0.0
}

/// Projected Levenberg-Marquardt on `J = |r|^2 / M`, with the Feller
/// inequality as a quadratic penalty of growing weight when requested.
pub fn optimize(
    residuals: impl Fn(&[f64; 5]) -> Result<Vec<f64>> + Sync,
    x0: &[f64; 5],
    bounds: &CalibBox,
    options: &OptimizerOptions,
) -> Result<OptimizeResult> {
    let fixed = options.fixed;
    let mut x = bounds.clamp(*x0);
    let mut r = residuals(&x)?;
    if r.is_empty() {
        return Err(Error::EmptyQuoteSet("no residuals to fit".into()));
    }
    let m = r.len() as f64;
    let mut weight = if options.feller { PENALTY_START } else { 0.0 };
    let phi = |r: &[f64], x: &[f64; 5], w: f64| mean_square(r) + w * feller_violation(x).powi(2);
    let mut lambda = options.damping;
    let mut iterations = 0;
    let mut status = Status::MaxIterations;
    let rounds = if options.feller { PENALTY_ROUNDS } else { 1 };
    for round in 0..rounds {
        let mut value = phi(&r, &x, weight);
        status = Status::MaxIterations;
        while iterations < options.max_iterations {
            iterations += 1;
            let jac = fd_jacobian(&residuals, &x, &r, bounds, &fixed)?;
            let mut a = jac.tr_mul(&jac) / m;
            let mut g = jac.tr_mul(&DVector::from_column_slice(&r)) / m;
            let viol = feller_violation(&x);
            if weight > 0.0 && viol > 0.0 {
                let dv = DVector::from_vec(vec![2.0 * x[0], 0.0, -2.0 * x[2], -2.0 * x[3], 0.0]);
                a += &dv * dv.transpose() * weight;
                g += &dv * (weight * viol);
            }
            // coordinates pinned at a bound by the descent direction stay put
            let free: Vec<usize> = (0..5)
                .filter(|&i| !fixed[i])
                .filter(|&i| !(x[i] <= bounds.lower[i] && g[i] > 0.0) && !(x[i] >= bounds.upper[i] && g[i] < 0.0))
                .collect();
            if free.is_empty() {
                status = Status::StepTolerance;
                break;
            }
            let n = free.len();
            let af = DMatrix::from_fn(n, n, |i, j| a[(free[i], free[j])]);
            let gf = DVector::from_fn(n, |i, _| g[free[i]]);
            let diag_floor = 1e-12 * af.diagonal().max().max(1e-300);
            let mut accepted = None;
            while lambda <= MAX_DAMPING {
                let mut lhs = af.clone();
                for i in 0..n {
                    lhs[(i, i)] += lambda * af[(i, i)].max(diag_floor);
                }
                let step = lhs.lu().solve(&(-&gf));
                let Some(step) = step else {
                    lambda *= 4.0;
                    continue;
                };
                let mut trial = x;
                for (k, &i) in free.iter().enumerate() {
                    trial[i] = x[i] + step[k];
                }
                let trial = bounds.clamp(trial);
                match residuals(&trial) {
                    Ok(rt) => {
                        let vt = phi(&rt, &trial, weight);
                        if vt < value {
                            accepted = Some((trial, rt, vt));
                            lambda = (lambda / 3.0).max(1e-15);
                            break;
                        }
                    }
                    Err(e) => debug!("trial point rejected: {e}"),
                }
                lambda *= 4.0;
            }
            let Some((trial, rt, vt)) = accepted else {
                status = Status::Stalled;
                break;
            };
            let dx: f64 = (0..5).map(|i| (trial[i] - x[i]).powi(2)).sum::<f64>().sqrt();
            let dj = value - vt;
            debug!("iteration {iterations}: J = {vt:e}, |dx| = {dx:e}, lambda = {lambda:e}");
            x = trial;
            r = rt;
            value = vt;
            if dj <= options.tol_objective {
                status = Status::ObjectiveTolerance;
                break;
            }
            if dx <= options.tol_step {
                status = Status::StepTolerance;
                break;
            }
        }
        if !options.feller || feller_violation(&x) == 0.0 || iterations >= options.max_iterations {
            break;
        }
        weight *= PENALTY_GROWTH;
        lambda = options.damping;
        debug!("penalty round {}: Feller violated by {:e}, weight {weight:e}", round + 1, feller_violation(&x));
    }
    if options.feller && feller_violation(&x) > 0.0 {
        if feller_repair(&mut x, bounds, &fixed) {
            r = residuals(&x)?;
        } else {
            warn!("could not restore the Feller condition inside the box at {x:?}");
        }
    }
    Ok(OptimizeResult { theta: x, objective: mean_square(&r), residuals: r, iterations, status })
}

/// Per-quote outcome at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteResidual {
    pub id: usize,
    pub maturity: f64,
    pub strike: f64,
    pub observed: f64,
    pub model: f64,
    pub abs_rel_err: f64,
}

/// Wall-clock phases in seconds; kept apart from the deterministic report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub preprocess: f64,
    pub calibrate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub backend: BackendKind,
    pub x0: CalibParams,
    pub theta: CalibParams,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    pub feller_margin: f64,
    pub residuals: Vec<QuoteResidual>,
    #[serde(skip)]
    pub timings: Timings,
}

impl CalibReport {
    pub fn max_rel_error(&self) -> f64 {
        self.residuals.iter().map(|r| r.abs_rel_err).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibOptions {
    /// Starting point; the box midpoint when absent.
    pub x0: Option<CalibParams>,
    pub bounds: CalibBox,
    pub optimizer: OptimizerOptions,
    pub tree: TreeConfig,
    pub weights: Option<Vec<f64>>,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            x0: None,
            bounds: CalibBox::calibration_default(),
            optimizer: OptimizerOptions::default(),
            tree: TreeConfig::default(),
            weights: None,
        }
    }
}

/// Full pipeline: de-Americanization for DAS backends (timed as
/// preprocessing), optimization and the per-quote residual table.
pub fn calibrate(dataset: &QuoteSet, backend: &Backend, options: &CalibOptions) -> Result<CalibReport> {
    let kind = backend.kind();
    let t0 = Instant::now();
    let transformed;
    let quotes = if kind.is_das() && dataset.style() != Some(Style::European) {
        transformed = deamericanize_set(dataset, &options.tree)?.0;
        info!("de-Americanized {} of {} quotes", transformed.len(), dataset.len());
        &transformed
    } else {
        dataset
    };
    let preprocess = t0.elapsed().as_secs_f64();
    let weights = match (&options.weights, quotes.len() == dataset.len()) {
        (Some(_), false) => {
            warn!("quote weights ignored: de-Americanization dropped quotes");
            None
        }
        (w, _) => w.as_deref(),
    };
    let t1 = Instant::now();
    let objective = Objective::new(backend, quotes, weights)?;
    let x0 = options.x0.map(|p| p.to_array()).unwrap_or_else(|| options.bounds.midpoint());
    if !options.bounds.contains(&x0) {
        return Err(Error::InvalidParameter(format!("initial guess {x0:?} outside the calibration box")));
    }
    let result = optimize(|t| objective.residuals(t), &x0, &options.bounds, &options.optimizer)?;
    let theta = CalibParams::from_array(result.theta);
    let prices = objective.model_prices(&theta)?;
    let calibrate = t1.elapsed().as_secs_f64();
    let residuals = quotes
        .quotes
        .iter()
        .zip(&prices)
        .map(|(q, &p)| {
            let o = q.price.expect("quote sets carry prices");
            QuoteResidual { id: q.id, maturity: q.maturity, strike: q.strike, observed: o, model: p, abs_rel_err: ((o - p) / o).abs() }
        })
        .collect();
    info!("{kind}: J = {:e} after {} iterations ({:?})", result.objective, result.iterations, result.status);
    Ok(CalibReport {
        backend: kind,
        x0: CalibParams::from_array(x0),
        theta,
        objective: result.objective,
        iterations: result.iterations,
        evaluations: objective.evaluations(),
        status: result.status,
        feller_margin: theta.feller_margin(),
        residuals,
        timings: Timings { preprocess, calibrate },
    })
}

/// Prices the synthetic ladder at `theta` with `backend`; quotes carry the
/// backend's option style.
pub fn generate_synthetic(theta: &CalibParams, rate: f64, backend: &Backend) -> Result<QuoteSet> {
    use crate::io::quotes::Quote;
    use crate::io::synthetic::{synthetic_ladder, SYNTHETIC_SPOT};
    let style = backend.kind().style();
    let ladder: Vec<Quote> = synthetic_ladder()
        .into_iter()
        .enumerate()
        .map(|(i, (t, k))| Quote::with_price(i, t, k, 1.0, style))
        .collect();
    let template = QuoteSet::new(SYNTHETIC_SPOT, rate, ladder)?;
    let prices = backend.price_quotes(theta, &template, None)?;
    Ok(template.with_prices(&prices, style))
}

/// Model prices on the tensor grid `maturities x strikes`, row-major by
/// maturity; the plot data behind a fitted price surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
}

impl PriceGrid {
    pub fn price(&self, i: usize, j: usize) -> f64 {
        self.prices[i * self.strikes.len() + j]
    }
}

pub fn price_grid(backend: &Backend, theta: &CalibParams, spot: f64, rate: f64, maturities: &[f64], strikes: &[f64]) -> Result<PriceGrid> {
    use crate::io::quotes::Quote;
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (maturities, strikes) = (sorted(maturities), sorted(strikes));
    let style = backend.kind().style();
    let quotes = maturities
        .iter()
        .flat_map(|&t| strikes.iter().map(move |&k| (t, k)))
        .enumerate()
        .map(|(i, (t, k))| Quote::with_price(i, t, k, 1.0, style))
        .collect();
    let template = QuoteSet::new(spot, rate, quotes)?;
    let prices = backend.price_quotes(theta, &template, None)?;
    Ok(PriceGrid { maturities, strikes, prices })
}
