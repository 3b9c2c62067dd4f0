//! Full-order theta-scheme solvers for European and American puts.

use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::evaluate_p1;
use crate::heston::{affine_coefficients, lift_and_rhs, obstacle_vector, BoundaryData, PricingContext};
use crate::linalg::{BandLu, BandMatrix, CsrMatrix};
use crate::params::{put_payoff_log, ModelParams, Style};

/// Relative tolerance for deciding that a maturity sits on a grid point.
const GRID_TOL: f64 = 1e-9;
/// Maximum active-set iterations per time step.
pub const MAX_ACTIVE_SET_ITERS: usize = 50;

/// Implicit-Euler steps taken before switching to `theta < 1`; they damp
/// the oscillations the payoff kink excites under Crank-Nicolson.
pub const DEFAULT_STARTUP_STEPS: usize = 2;

/// Uniform time grid on `[0, horizon]` with `steps` theta-scheme steps, the
/// first `startup` of which are implicit Euler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    pub theta: f64,
    pub startup: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, theta: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs horizon > 0 and steps >= 1, got {horizon}, {steps}"
            )));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!("theta {theta} outside [0, 1]")));
        }
        let startup = if theta < 1.0 { DEFAULT_STARTUP_STEPS.min(steps) } else { 0 };
        Ok(Self { horizon, steps, dt: horizon / steps as f64, theta, startup })
    }

    pub fn with_startup(mut self, startup: usize) -> Self {
        self.startup = startup.min(self.steps);
        self
    }

    /// Scheme parameter of the step `k -> k+1`.
    pub fn theta_at(&self, k: usize) -> f64 {
        if k < self.startup {
            1.0
        } else {
            self.theta
        }
    }

    pub fn crank_nicolson(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(horizon, steps, 0.5)
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    /// Step index of `t` if `t` is a grid point.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k as usize > self.steps {
            return None;
        }
        ((k * self.dt - t).abs() <= GRID_TOL * t.abs().max(1.0)).then_some(k as usize)
    }

    /// Nearest step index to `t`, clamped to the grid.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.steps)
    }

    /// Grid ending at the largest maturity with the fewest steps `>= min_steps`
    /// that puts every maturity on a grid point. Falls back to `min_steps`
    /// (maturities then snap to the nearest step) if no such count exists
    /// below `16 * min_steps`.
    pub fn fit_maturities(maturities: &[f64], min_steps: usize, theta: f64) -> Result<Self> {
        let horizon = maturities.iter().copied().fold(f64::NAN, f64::max);
        if maturities.is_empty() || !(horizon > 0.0) {
            return Err(Error::InvalidParameter("no positive maturity to fit a time grid".into()));
        }
        let min_steps = min_steps.max(1);
        for steps in min_steps..=16 * min_steps {
            let grid = Self::new(horizon, steps, theta)?;
            if maturities.iter().all(|&t| grid.step_of(t).is_some()) {
                return Ok(grid);
            }
        }
        warn!("no step count in [{min_steps}, {}] fits all maturities; snapping", 16 * min_steps);
        Self::new(horizon, min_steps, theta)
    }

    /// Distinct scheme parameters used on this grid.
    pub fn thetas(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(2);
        if self.startup > 0 {
            t.push(1.0);
        }
        if self.startup < self.steps && !t.contains(&self.theta) {
            t.push(self.theta);
        }
        t
    }
}

/// Time trajectory of a full-order solve.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub ctx: Arc<PricingContext>,
    pub grid: TimeGrid,
    pub boundary: BoundaryData,
    /// Free-DOF coefficients `u^k`, `k = 0..=steps`.
    pub u: Vec<Vec<f64>>,
    /// Multipliers `lambda^k` on free DOFs; empty for European solves.
    pub lambda: Vec<Vec<f64>>,
    /// Active-set iterations summed over all steps.
    pub active_set_iterations: usize,
}

impl PriceSurface {
    pub fn style(&self) -> Style {
        self.boundary.style
    }

    pub fn strike(&self) -> f64 {
        self.boundary.strike
    }

    /// Nodal values over all nodes at step `k`, lift included.
    pub fn nodal(&self, k: usize) -> Vec<f64> {
        let mut full = self.boundary.lift(&self.ctx.space, self.grid.time(k));
        for (&p, &v) in self.ctx.space.free_nodes.iter().zip(&self.u[k]) {
            full[p] = v;
        }
        full
    }

    /// Solution value at `(nu, x)` and step `k`.
    pub fn value(&self, k: usize, nu: f64, x: f64) -> Result<f64> {
        evaluate_p1(&self.ctx.space, &self.nodal(k), nu, x)
    }

    /// Obstacle on free DOFs for this surface's strike.
    pub fn obstacle(&self) -> Vec<f64> {
        obstacle_vector(&self.ctx.space, self.strike())
    }
}

/// Put price for spot `s0`, strike `strike` and maturity `t` read off a
/// surface solved at strike `K`, scaled by `strike / K`.
pub fn price_at(surface: &PriceSurface, s0: f64, strike: f64, nu0: f64, t: f64) -> Result<f64> {
    if !(s0 > 0.0 && strike > 0.0) {
        return Err(Error::InvalidParameter(format!("spot {s0} and strike {strike} must be positive")));
    }
    if t == 0.0 {
        return Ok((strike - s0).max(0.0));
    }
    let k = surface.grid.step_of(t).ok_or_else(|| {
        Error::InvalidParameter(format!("maturity {t} is not on the time grid (dt = {})", surface.grid.dt))
    })?;
    let x = (s0 / strike).ln();
    Ok(strike / surface.strike() * surface.value(k, nu0, x)?)
}

/// Converts a free-DOF CSR matrix into band storage.
pub(crate) fn to_band(a: &CsrMatrix, half_width: usize) -> BandMatrix {
    let n = a.n_rows();
    let mut band = BandMatrix::zeros(n, half_width, half_width);
    for i in 0..n {
        for (j, v) in a.row(i) {
            band.add(i, j, v);
        }
    }
    band
}

/// Nodal interpolant of the payoff on free DOFs.
pub fn initial_value(ctx: &PricingContext, strike: f64) -> Vec<f64> {
    obstacle_vector(&ctx.space, strike)
}

struct StepOperators {
    theta: f64,
    lhs: CsrMatrix,
    rhs: CsrMatrix,
}

fn step_operators(ctx: &PricingContext, mu: &ModelParams, dt: f64, theta: f64) -> StepOperators {
    let a = ctx.blocks.operator_free(&affine_coefficients(mu));
    let m = &ctx.blocks.mass_free;
    let inv_dt = 1.0 / dt;
    StepOperators {
        theta,
        lhs: CsrMatrix::linear_combination(&[m, &a], &[inv_dt, theta]),
        rhs: CsrMatrix::linear_combination(&[m, &a], &[inv_dt, -(1.0 - theta)]),
    }
}

/// Operators for every scheme parameter on `grid`, in `grid.thetas()` order.
fn grid_operators(ctx: &PricingContext, mu: &ModelParams, grid: &TimeGrid) -> Vec<StepOperators> {
    grid.thetas().into_iter().map(|th| step_operators(ctx, mu, grid.dt, th)).collect()
}

fn op_index(grid: &TimeGrid, k: usize) -> usize {
    usize::from(grid.startup > 0 && k >= grid.startup && grid.theta != 1.0)
}

fn check_stability(ctx: &PricingContext, mu: &ModelParams, grid: &TimeGrid) {
    if grid.theta == 0.0 {
        return;
    }
    let lambda = ctx.garding_estimate(mu);
    if lambda > 0.0 && grid.dt * grid.theta * lambda >= 1.0 {
        warn!("dt = {} violates dt < 1/(theta lambda_a) with lambda_a ~ {lambda:.3}", grid.dt);
    }
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("solution at step {step}")))
    }
}

fn step_rhs(ops: &StepOperators, mu: &ModelParams, ctx: &PricingContext, bd: &BoundaryData, grid: &TimeGrid, k: usize, u: &[f64]) -> Vec<f64> {
    let mut rhs = ops.rhs.matvec(u);
    let f = lift_and_rhs(mu, &ctx.wall, bd, grid.time(k), grid.time(k + 1), ops.theta);
    rhs.iter_mut().zip(&f).for_each(|(r, f)| *r += f);
    rhs
}

/// European put: `(M/dt + theta A) u^{k+1} = (M/dt - (1-theta) A) u^k + f`.
pub fn solve_european(ctx: &Arc<PricingContext>, mu: &ModelParams, grid: &TimeGrid, strike: f64) -> Result<PriceSurface> {
    mu.validate()?;
    check_stability(ctx, mu, grid);
    let bd = BoundaryData::new(Style::European, strike, mu.r, &ctx.space.domain);
    let ops = grid_operators(ctx, mu, grid);
    let lus = ops
        .iter()
        .map(|o| to_band(&o.lhs, ctx.space.bandwidth()).factor())
        .collect::<Result<Vec<_>>>()?;
    let mut u = Vec::with_capacity(grid.steps + 1);
    u.push(initial_value(ctx, strike));
    for k in 0..grid.steps {
        let i = op_index(grid, k);
        let mut next = step_rhs(&ops[i], mu, ctx, &bd, grid, k, &u[k]);
        lus[i].solve_in_place(&mut next);
        check_finite(&next, k + 1)?;
        u.push(next);
    }
    Ok(PriceSurface { ctx: ctx.clone(), grid: *grid, boundary: bd, u, lambda: Vec::new(), active_set_iterations: 0 })
}

/// Primal-dual active-set solver for `K u - D lambda = rhs`, `u >= g`,
/// `lambda >= 0`, `lambda_p (u_p - g_p) = 0`.
pub struct ActiveSetSolver<'a> {
    k: &'a CsrMatrix,
    d: &'a [f64],
    half_width: usize,
    cached: Option<(Vec<bool>, BandLu)>,
}

impl<'a> ActiveSetSolver<'a> {
    pub fn new(k: &'a CsrMatrix, d: &'a [f64], half_width: usize) -> Self {
        Self { k, d, half_width, cached: None }
    }

    fn factor(&mut self, active: &[bool]) -> Result<&BandLu> {
        let reuse = matches!(&self.cached, Some((a, _)) if a == active);
        if !reuse {
            let mut band = to_band(self.k, self.half_width);
            for (p, _) in active.iter().enumerate().filter(|(_, a)| **a) {
                band.set_identity_row(p);
            }
            self.cached = Some((active.to_vec(), band.factor()?));
        }
        Ok(&self.cached.as_ref().expect("factor cached").1)
    }

    /// Solves one complementarity system; `active` carries the warm start in
    /// and the final active set out. Returns `(u, lambda, iterations)`.
    pub fn solve(&mut self, rhs: &[f64], g: &[f64], active: &mut Vec<bool>, step: usize) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let n = rhs.len();
        let g_scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let l_scale = rhs.iter().zip(self.d).fold(1.0f64, |m, (r, d)| m.max((r / d).abs()));
        for it in 1..=MAX_ACTIVE_SET_ITERS {
            let lu = self.factor(active)?;
            let mut u: Vec<f64> = (0..n).map(|p| if active[p] { g[p] } else { rhs[p] }).collect();
            lu.solve_in_place(&mut u);
            check_finite(&u, step)?;
            let ku = self.k.matvec(&u);
            let mut lambda = vec![0.0; n];
            let (mut primal, mut dual) = (0.0f64, 0.0f64);
            let mut next = vec![false; n];
            for p in 0..n {
                let c = self.k.get(p, p);
                if active[p] {
                    lambda[p] = (ku[p] - rhs[p]) / self.d[p];
                    dual = dual.max(-lambda[p]);
                } else {
                    primal = primal.max(g[p] - u[p]);
                }
                next[p] = self.d[p] * lambda[p] - c * (u[p] - g[p]) > 0.0;
            }
            if next == *active || (primal <= 1e-13 * g_scale && dual <= 1e-13 * l_scale) {
                lambda.iter_mut().for_each(|l| *l = l.max(0.0));
                return Ok((u, lambda, it));
            }
            *active = next;
        }
        Err(Error::ActiveSetDivergence { step })
    }
}

/// American put: the theta-scheme step constrained by the payoff obstacle.
pub fn solve_american(ctx: &Arc<PricingContext>, mu: &ModelParams, grid: &TimeGrid, strike: f64) -> Result<PriceSurface> {
    mu.validate()?;
    check_stability(ctx, mu, grid);
    let bd = BoundaryData::new(Style::American, strike, mu.r, &ctx.space.domain);
    let ops = grid_operators(ctx, mu, grid);
    let g = obstacle_vector(&ctx.space, strike);
    let d = &ctx.blocks.pairing_free;
    let mut pdas: Vec<ActiveSetSolver> =
        ops.iter().map(|o| ActiveSetSolver::new(&o.lhs, d, ctx.space.bandwidth())).collect();
    let n = g.len();
    let mut u = Vec::with_capacity(grid.steps + 1);
    let mut lambda = Vec::with_capacity(grid.steps + 1);
    u.push(initial_value(ctx, strike));
    lambda.push(vec![0.0; n]);
    let mut active = vec![false; n];
    let mut total = 0;
    for k in 0..grid.steps {
        let i = op_index(grid, k);
        let rhs = step_rhs(&ops[i], mu, ctx, &bd, grid, k, &u[k]);
        let (next, lam, its) = pdas[i].solve(&rhs, &g, &mut active, k + 1)?;
        total += its;
        u.push(next);
        lambda.push(lam);
    }
    debug!("american solve: {total} active-set iterations over {} steps", grid.steps);
    Ok(PriceSurface { ctx: ctx.clone(), grid: *grid, boundary: bd, u, lambda, active_set_iterations: total })
}

/// Dispatches on `style`.
pub fn solve(ctx: &Arc<PricingContext>, mu: &ModelParams, grid: &TimeGrid, strike: f64, style: Style) -> Result<PriceSurface> {
    match style {
        Style::European => solve_european(ctx, mu, grid, strike),
        Style::American => solve_american(ctx, mu, grid, strike),
    }
}

/// Projected SOR for the same complementarity system (without multiplier
/// output); a slow reference for the active-set solver.
pub fn psor(k: &CsrMatrix, rhs: &[f64], g: &[f64], start: &[f64], omega: f64, tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    let mut u: Vec<f64> = start.iter().zip(g).map(|(a, b)| a.max(*b)).collect();
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for i in 0..u.len() {
            let mut s = rhs[i];
            let mut diag = 0.0;
            for (j, v) in k.row(i) {
                if j == i {
                    diag = v;
                } else {
                    s -= v * u[j];
                }
            }
            let gs = s / diag;
            let new = (u[i] + omega * (gs - u[i])).max(g[i]);
            change = change.max((new - u[i]).abs());
            u[i] = new;
        }
        if change <= tol {
            return Ok(u);
        }
    }
    Err(Error::ActiveSetDivergence { step: 0 })
}

/// Payoff of a put at log-moneyness `x`, for reference.
pub fn payoff(strike: f64, x: f64) -> f64 {
    put_payoff_log(strike, x)
}
