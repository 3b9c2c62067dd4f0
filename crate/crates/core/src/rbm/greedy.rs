use std::sync::Arc;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heston::PricingContext;
use crate::linalg::{dot, BandLu, CsrMatrix};
use crate::params::{ModelParams, ParamBox, Style};
use crate::rbm::basis::{orthonormalize, orthonormalize_diag, pod1, supremizer, weighted_dot};
use crate::rbm::model::{GreedyRecord, ReducedModel};
use crate::solver::{initial_value, solve, to_band, TimeGrid};

/// Angles below this count as an already represented dual direction.
pub const DUAL_ANGLE_TOL: f64 = 1e-10;

/// Finite parameter sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub points: Vec<ModelParams>,
}

impl TrainingSet {
    pub fn new(points: Vec<ModelParams>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        for p in &points {
            p.validate()?;
        }
        Ok(Self { points })
    }

    /// Tensor grid with `per_axis` points on each of the five axes.
    pub fn tensor(bounds: &ParamBox, per_axis: usize) -> Result<Self> {
        if per_axis == 0 {
            return Err(Error::InvalidParameter("tensor grid needs at least one point per axis".into()));
        }
        Self::new(bounds.tensor_grid(per_axis).into_iter().map(ModelParams::from_array).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Maximum primal dimension.
    pub n_max: usize,
    /// Stop once the maximum training error falls below this.
    pub tol: f64,
    /// Additional evenly spaced steps at which training errors are measured;
    /// the final step is always included.
    pub error_steps: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { n_max: 60, tol: 1e-4, error_steps: 0 }
    }
}

/// Steps where training errors are measured, increasing, ending at `steps`.
pub fn error_steps(grid: &TimeGrid, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=count).map(|j| (j * grid.steps + count / 2) / count.max(1)).filter(|&k| k > 0).collect();
    out.push(grid.steps);
    out.sort_unstable();
    out.dedup();
    out
}

/// `G u` and `|u|_V^2` at the measured steps of one training trajectory.
struct CachedTrajectory {
    gram_u: Vec<Vec<f64>>,
    norm2: Vec<f64>,
}

struct Greedy<'a> {
    ctx: &'a Arc<PricingContext>,
    grid: &'a TimeGrid,
    style: Style,
    steps: Vec<usize>,
    gram: &'a CsrMatrix,
    gram_lu: BandLu,
}

impl<'a> Greedy<'a> {
    fn new(ctx: &'a Arc<PricingContext>, grid: &'a TimeGrid, style: Style, config: &GreedyConfig) -> Result<Self> {
        let gram = &ctx.blocks.gram_free;
        let gram_lu = to_band(gram, ctx.space.bandwidth()).factor()?;
        Ok(Self { ctx, grid, style, steps: error_steps(grid, config.error_steps), gram, gram_lu })
    }

    fn cache(&self, train: &TrainingSet) -> Result<Vec<CachedTrajectory>> {
        train
            .points
            .par_iter()
            .map(|mu| {
                let s = solve(self.ctx, mu, self.grid, 1.0, self.style)?;
                let gram_u: Vec<Vec<f64>> = self.steps.iter().map(|&k| self.gram.matvec(&s.u[k])).collect();
                let norm2 = self.steps.iter().zip(&gram_u).map(|(&k, gu)| dot(&s.u[k], gu)).collect();
                Ok(CachedTrajectory { gram_u, norm2 })
            })
            .collect()
    }

    /// V-norm error of the reduced solution, maximized over measured steps;
    /// reduced solver failures count as infinite error.
    fn error(&self, model: &ReducedModel, mu: &ModelParams, cached: &CachedTrajectory) -> f64 {
        let surface = match model.solve(mu, self.grid) {
            Ok(s) => s,
            Err(e) => {
                debug!("reduced solve failed at {mu:?}: {e}");
                return f64::INFINITY;
            }
        };
        let mut worst = 0.0f64;
        for (j, &k) in self.steps.iter().enumerate() {
            let c = &surface.coeffs[k];
            let proj = model.basis.tr_mul(&nalgebra::DVector::from_column_slice(&cached.gram_u[j]));
            // basis is V-orthonormal: |u - Psi c|^2 = |u|^2 - 2 c.Psi^T G u + |c|^2
            let e2 = cached.norm2[j] - 2.0 * c.dot(&proj) + c.dot(c);
            worst = worst.max(e2.max(0.0).sqrt());
        }
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }

    fn sweep(&self, model: &ReducedModel, train: &TrainingSet, cache: &[CachedTrajectory]) -> (usize, f64) {
        let errors: Vec<f64> =
            train.points.par_iter().zip(cache.par_iter()).map(|(mu, c)| self.error(model, mu, c)).collect();
        let mut best = 0;
        for (i, e) in errors.iter().enumerate() {
            if *e > errors[best] {
                best = i;
            }
        }
        (best, errors[best])
    }

    /// Residual `u^k - Pi_V u^k` over the whole trajectory.
    fn projection_residuals(&self, primal: &[Vec<f64>], u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        u.iter()
            .map(|v| {
                let gv = self.gram.matvec(v);
                let mut r = v.clone();
                for y in primal {
                    let c = dot(y, &gv);
                    r.iter_mut().zip(y).for_each(|(a, b)| *a -= c * b);
                }
                r
            })
            .collect()
    }

    /// Multiplier snapshot with the largest angle to the current cone, unit
    /// W-norm; `None` if every snapshot is zero or already represented.
    fn select_dual(&self, dual: &[Vec<f64>], lambda: &[Vec<f64>]) -> Option<Vec<f64>> {
        let d = &self.ctx.blocks.pairing_free;
        let ortho = orthonormalize_diag(dual, d);
        let mut best: Option<(usize, f64)> = None;
        for (k, l) in lambda.iter().enumerate() {
            let n2 = weighted_dot(d, l, l);
            if !(n2 > 0.0) {
                continue;
            }
            let proj2: f64 = ortho.iter().map(|y| weighted_dot(d, l, y).powi(2)).sum();
            let angle = (proj2.sqrt() / n2.sqrt()).min(1.0).acos();
            if best.is_none_or(|(_, a)| angle > a) {
                best = Some((k, angle));
            }
        }
        match best {
            Some((k, angle)) if angle >= DUAL_ANGLE_TOL => {
                let norm = weighted_dot(d, &lambda[k], &lambda[k]).sqrt();
                Some(lambda[k].iter().map(|v| v / norm).collect())
            }
            Some((k, angle)) => {
                info!("dual direction at step {k} duplicates the cone (angle {angle:e}); skipping dual enrichment");
                None
            }
            None => None,
        }
    }

    /// Adds `psi` and, if there is room, the supremizer of `xi`.
    fn enrich(&self, primal: &mut Vec<Vec<f64>>, dual: &mut Vec<Vec<f64>>, added_at: &mut Vec<usize>, psi: Vec<f64>, xi: Option<Vec<f64>>, n_max: usize) -> usize {
        let mut added = orthonormalize(primal, &[psi], self.gram);
        if let Some(xi) = xi {
            if primal.len() < n_max {
                let t = supremizer(&xi, &self.ctx.blocks.pairing_free, &self.gram_lu);
                if orthonormalize(primal, &[t], self.gram) == 1 {
                    added += 1;
                    dual.push(xi);
                    added_at.push(primal.len());
                }
            }
        }
        added
    }

    fn run(&self, train: &TrainingSet, config: &GreedyConfig) -> Result<ReducedModel> {
        if train.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        if config.n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be positive".into()));
        }
        let american = self.style == Style::American;
        let (mut primal, mut dual, mut added_at) = (Vec::new(), Vec::new(), Vec::new());

        let first = solve(self.ctx, &train.points[0], self.grid, 1.0, self.style)?;
        let xi0 = if american { self.initial_dual(&first.lambda) } else { None };
        // the unit-strike initial value is parameter independent; keeping it
        // in the span makes every reduced initial condition exact
        orthonormalize(&mut primal, &[initial_value(self.ctx, 1.0)], self.gram);
        let psi0 = pod1(&self.projection_residuals(&primal, &first.u), self.gram)?;
        self.enrich(&mut primal, &mut dual, &mut added_at, psi0, xi0, config.n_max);

        info!("caching {} training trajectories", train.len());
        let cache = self.cache(train)?;
        let mut history = Vec::new();
        let mut last: Option<(usize, f64)> = None;
        let mut stagnated = false;
        loop {
            let model = ReducedModel::project(self.ctx, self.style, &primal, &dual, added_at.clone())?;
            let (i, eps) = self.sweep(&model, train, &cache);
            debug!("N = {}, N_W = {}: max training error {eps:e} at #{i}", primal.len(), dual.len());
            if eps < config.tol || primal.len() >= config.n_max {
                return Ok(self.finish(model, history, stagnated, eps));
            }
            if matches!(last, Some((j, e)) if j == i && eps >= e) {
                warn!("greedy stagnated at N = {}: parameter #{i} selected again without error decrease", primal.len());
                stagnated = true;
                return Ok(self.finish(model, history, stagnated, eps));
            }
            last = Some((i, eps));
            let mu = train.points[i];
            let s = solve(self.ctx, &mu, self.grid, 1.0, self.style)?;
            let xi = if american { self.select_dual(&dual, &s.lambda) } else { None };
            let residual = self.projection_residuals(&primal, &s.u);
            let psi = match pod1(&residual, self.gram) {
                Ok(p) => p,
                Err(_) => {
                    warn!("greedy stagnated at N = {}: selected trajectory already in the basis", primal.len());
                    return Ok(self.finish(model, history, true, eps));
                }
            };
            if self.enrich(&mut primal, &mut dual, &mut added_at, psi, xi, config.n_max) == 0 {
                warn!("greedy stagnated at N = {}: no independent direction left", primal.len());
                return Ok(self.finish(model, history, true, eps));
            }
            history.push(GreedyRecord { mu: mu.to_array(), error: eps, n_primal: primal.len(), n_dual: dual.len() });
        }
    }

    /// Final-step multiplier, or the one of largest W-norm if it vanishes.
    fn initial_dual(&self, lambda: &[Vec<f64>]) -> Option<Vec<f64>> {
        let d = &self.ctx.blocks.pairing_free;
        let norm = |l: &Vec<f64>| weighted_dot(d, l, l).sqrt();
        let last = lambda.last()?;
        let pick = if norm(last) > 0.0 {
            last
        } else {
            lambda.iter().max_by(|a, b| norm(a).total_cmp(&norm(b)))?
        };
        let n = norm(pick);
        (n > 0.0).then(|| pick.iter().map(|v| v / n).collect())
    }

    fn finish(&self, mut model: ReducedModel, history: Vec<GreedyRecord>, stagnated: bool, eps: f64) -> ReducedModel {
        info!(
            "reduced model: N = {}, N_W = {}, max training error {eps:e}{}",
            model.dim(),
            model.dual_dim(),
            if stagnated { " (stagnated)" } else { "" }
        );
        model.history = history;
        model.stagnated = stagnated;
        model.training_error = eps;
        model
    }
}

/// POD-greedy for European puts: each round adds the dominant POD mode of
/// the worst-approximated trajectory's projection residual.
pub fn pod_greedy_european(ctx: &Arc<PricingContext>, train: &TrainingSet, grid: &TimeGrid, config: &GreedyConfig) -> Result<ReducedModel> {
    Greedy::new(ctx, grid, Style::European, config)?.run(train, config)
}

/// POD-angle-greedy for American puts: additionally grows the multiplier
/// cone by the snapshot of largest angle and stabilizes with supremizers.
pub fn pod_angle_greedy_american(ctx: &Arc<PricingContext>, train: &TrainingSet, grid: &TimeGrid, config: &GreedyConfig) -> Result<ReducedModel> {
    Greedy::new(ctx, grid, Style::American, config)?.run(train, config)
}

/// Dispatches on `style`.
pub fn build_reduced_model(ctx: &Arc<PricingContext>, train: &TrainingSet, grid: &TimeGrid, config: &GreedyConfig, style: Style) -> Result<ReducedModel> {
    match style {
        Style::European => pod_greedy_european(ctx, train, grid, config),
        Style::American => pod_angle_greedy_american(ctx, train, grid, config),
    }
}
