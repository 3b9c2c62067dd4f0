use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Domain2D, FemSpace, MeshSpec, NodeKind, Q_A};
use crate::heston::{affine_coefficients, lift_weights, obstacle_vector, BoundaryData, PricingContext};
use crate::params::{ModelParams, Style};
use crate::rbm::basis::{project_coefficients, to_matrix};
use crate::solver::{initial_value, TimeGrid};

/// Newton iteration cap of the reduced complementarity solver.
pub const MAX_REDUCED_NEWTON_ITERS: usize = 100;

/// One greedy round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyRecord {
    /// Parameter selected in this round.
    pub mu: [f64; 5],
    /// Maximum training error before enrichment.
    pub error: f64,
    /// Primal and dual dimensions after enrichment.
    pub n_primal: usize,
    pub n_dual: usize,
}

/// Reduced-basis surrogate for one option style, at unit strike.
///
/// The primal basis is orthonormal in the V-Gram inner product on free DOFs;
/// dual vectors are nonnegative multiplier snapshots of unit W-norm.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub style: Style,
    pub space: FemSpace,
    /// `n_free x N`.
    pub basis: DMatrix<f64>,
    /// `n_free x N_W`.
    pub dual: DMatrix<f64>,
    /// Primal dimension at the time each dual vector was added.
    pub dual_added_at: Vec<usize>,
    pub mass: DMatrix<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    /// `B_N`, `N_W x N`, entries `b(xi_j, psi_i)`.
    pub pairing: DMatrix<f64>,
    /// Projected wall couplings `[low, high]`.
    pub wall_mass: [DVector<f64>; 2],
    pub wall_blocks: [Vec<DVector<f64>>; 2],
    /// `b(xi_j, g)` for the unit-strike payoff.
    pub obstacle: DVector<f64>,
    /// V-projection of the unit-strike initial value.
    pub initial: DVector<f64>,
    pub history: Vec<GreedyRecord>,
    /// Maximum training error of this basis; NaN if never measured.
    pub training_error: f64,
    pub stagnated: bool,
}

impl ReducedModel {
    /// Projects the detailed operators onto `primal` (V-orthonormal) and the
    /// cone spanned by `dual`.
    pub fn project(ctx: &PricingContext, style: Style, primal: &[Vec<f64>], dual: &[Vec<f64>], dual_added_at: Vec<usize>) -> Result<Self> {
        if primal.is_empty() {
            return Err(Error::InvalidParameter("empty primal basis".into()));
        }
        let n = ctx.space.n_free();
        let psi = to_matrix(primal, n);
        let xi = to_matrix(dual, n);
        let b = &ctx.blocks;
        let galerkin = |a: &crate::linalg::CsrMatrix| -> DMatrix<f64> {
            let cols: Vec<Vec<f64>> = primal.iter().map(|v| a.matvec(v)).collect();
            psi.tr_mul(&to_matrix(&cols, n))
        };
        let project = |v: &[f64]| psi.tr_mul(&DVector::from_column_slice(v));
        let d_psi = DMatrix::from_fn(n, primal.len(), |p, i| b.pairing_free[p] * psi[(p, i)]);
        let g: Vec<f64> = obstacle_vector(&ctx.space, 1.0).iter().zip(&b.pairing_free).map(|(g, d)| g * d).collect();
        Ok(Self {
            style,
            space: ctx.space.clone(),
            mass: galerkin(&b.mass_free),
            blocks: b.blocks_free.iter().map(galerkin).collect(),
            pairing: xi.tr_mul(&d_psi),
            wall_mass: [project(&ctx.wall.mass[0]), project(&ctx.wall.mass[1])],
            wall_blocks: [0, 1].map(|w| ctx.wall.blocks[w].iter().map(|v| project(v)).collect()),
            obstacle: xi.tr_mul(&DVector::from_vec(g)),
            initial: project_coefficients(&psi, &b.gram_free, &initial_value(ctx, 1.0)),
            basis: psi,
            dual: xi,
            dual_added_at,
            history: Vec::new(),
            training_error: f64::NAN,
            stagnated: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dual_dim(&self) -> usize {
        self.dual.ncols()
    }

    pub fn domain(&self) -> Domain2D {
        self.space.domain
    }

    pub fn mesh(&self) -> MeshSpec {
        self.space.spec
    }

    /// Nested sub-model on the first `n` primal vectors and the dual vectors
    /// added while the primal dimension was at most `n`.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.dim() {
            return Err(Error::InvalidParameter(format!("truncation {n} outside 1..={}", self.dim())));
        }
        let nd = self.dual_added_at.iter().take_while(|&&a| a <= n).count();
        Ok(Self {
            style: self.style,
            space: self.space.clone(),
            basis: self.basis.columns(0, n).into_owned(),
            dual: self.dual.columns(0, nd).into_owned(),
            dual_added_at: self.dual_added_at[..nd].to_vec(),
            mass: self.mass.view((0, 0), (n, n)).into_owned(),
            blocks: self.blocks.iter().map(|b| b.view((0, 0), (n, n)).into_owned()).collect(),
            pairing: self.pairing.view((0, 0), (nd, n)).into_owned(),
            wall_mass: self.wall_mass.clone().map(|v| v.rows(0, n).into_owned()),
            wall_blocks: self.wall_blocks.clone().map(|w| w.iter().map(|v| v.rows(0, n).into_owned()).collect()),
            obstacle: self.obstacle.rows(0, nd).into_owned(),
            initial: self.initial.rows(0, n).into_owned(),
            history: self.history.iter().copied().filter(|h| h.n_primal <= n).collect(),
            training_error: if n == self.dim() { self.training_error } else { f64::NAN },
            stagnated: self.stagnated,
        })
    }

    fn operator(&self, coeffs: &[f64; Q_A]) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        for (c, b) in coeffs.iter().zip(&self.blocks) {
            a += b * *c;
        }
        a
    }

    fn lift_load(&self, coeffs: &[f64; Q_A], boundary: &BoundaryData, t0: f64, t1: f64, theta: f64) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        for (w, (dm, mix)) in lift_weights(boundary, t0, t1, theta).into_iter().enumerate() {
            if dm == 0.0 && mix == 0.0 {
                continue;
            }
            f -= &self.wall_mass[w] * dm;
            for (c, v) in coeffs.iter().zip(&self.wall_blocks[w]) {
                f -= v * (mix * c);
            }
        }
        f
    }

    /// Reduced theta-scheme trajectory at unit strike.
    pub fn solve(&self, mu: &ModelParams, grid: &TimeGrid) -> Result<ReducedSurface<'_>> {
        mu.validate()?;
        let coeffs = affine_coefficients(mu);
        let a = self.operator(&coeffs);
        let inv_dt = 1.0 / grid.dt;
        let boundary = BoundaryData::new(self.style, 1.0, mu.r, &self.space.domain);
        let steps: Vec<ReducedStep> = grid
            .thetas()
            .into_iter()
            .map(|th| ReducedStep::new(self, &a, inv_dt, th))
            .collect::<Result<_>>()?;
        let mut coeffs_t = Vec::with_capacity(grid.steps + 1);
        coeffs_t.push(self.initial.clone());
        let mut active = vec![false; self.dual_dim()];
        let mut newton = 0;
        for k in 0..grid.steps {
            let th = grid.theta_at(k);
            let op = steps.iter().find(|s| s.theta == th).expect("operator per theta");
            let rhs = &op.rhs * &coeffs_t[k] + self.lift_load(&coeffs, &boundary, grid.time(k), grid.time(k + 1), th);
            let next = match self.style {
                Style::European => op.solve(&rhs, k + 1)?,
                Style::American => {
                    let (c, its) = op.solve_cone(self, &rhs, &mut active, k + 1)?;
                    newton += its;
                    c
                }
            };
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("reduced solution at step {}", k + 1)));
            }
            coeffs_t.push(next);
        }
        Ok(ReducedSurface { model: self, grid: *grid, boundary, coeffs: coeffs_t, newton_iterations: newton })
    }
}

struct ReducedStep {
    theta: f64,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: DMatrix<f64>,
    /// `K^{-1} B^T` and `S = B K^{-1} B^T`.
    z: DMatrix<f64>,
    schur: DMatrix<f64>,
}

impl ReducedStep {
    fn new(model: &ReducedModel, a: &DMatrix<f64>, inv_dt: f64, theta: f64) -> Result<Self> {
        let lhs = &model.mass * inv_dt + a * theta;
        let rhs = &model.mass * inv_dt - a * (1.0 - theta);
        let lu = lhs.lu();
        let bt = model.pairing.transpose();
        let z = if bt.ncols() > 0 {
            lu.solve(&bt).ok_or_else(|| Error::Singular("reduced step matrix".into()))?
        } else {
            DMatrix::zeros(model.dim(), 0)
        };
        let schur = &model.pairing * &z;
        Ok(Self { theta, lu, rhs, z, schur })
    }

    fn solve(&self, rhs: &DVector<f64>, step: usize) -> Result<DVector<f64>> {
        self.lu.solve(rhs).ok_or_else(|| Error::Singular(format!("reduced step matrix at step {step}")))
    }

    /// Solves `K c - B^T alpha = rhs`, `0 <= alpha`, `B c - g >= 0`, complementary,
    /// by semismooth Newton on `min(alpha, S alpha + q) = 0`, which is the
    /// primal-dual active-set iteration in cone coordinates.
    fn solve_cone(&self, model: &ReducedModel, rhs: &DVector<f64>, active: &mut Vec<bool>, step: usize) -> Result<(DVector<f64>, usize)> {
        let y = self.solve(rhs, step)?;
        let m = model.dual_dim();
        if m == 0 {
            return Ok((y, 0));
        }
        let q = &model.pairing * &y - &model.obstacle;
        for it in 1..=MAX_REDUCED_NEWTON_ITERS {
            let idx: Vec<usize> = (0..m).filter(|&j| active[j]).collect();
            let mut alpha = DVector::zeros(m);
            if !idx.is_empty() {
                let s = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.schur[(idx[a], idx[b])]);
                let r = DVector::from_fn(idx.len(), |a, _| -q[idx[a]]);
                let sol = s.lu().solve(&r).ok_or(Error::ReducedNewton { step })?;
                for (a, &j) in idx.iter().enumerate() {
                    alpha[j] = sol[a];
                }
            }
            let w = &self.schur * &alpha + &q;
            let next: Vec<bool> = (0..m).map(|j| alpha[j] - w[j] > 0.0).collect();
            if next == *active {
                let alpha = alpha.map(|a| a.max(0.0));
                return Ok((y + &self.z * alpha, it));
            }
            *active = next;
        }
        Err(Error::ReducedNewton { step })
    }
}

/// Reduced trajectory with its model.
#[derive(Debug, Clone)]
pub struct ReducedSurface<'a> {
    pub model: &'a ReducedModel,
    pub grid: TimeGrid,
    pub boundary: BoundaryData,
    pub coeffs: Vec<DVector<f64>>,
    pub newton_iterations: usize,
}

impl ReducedSurface<'_> {
    /// Free-DOF reconstruction `Psi c^k`.
    pub fn reconstruct(&self, k: usize) -> Vec<f64> {
        (&self.model.basis * &self.coeffs[k]).as_slice().to_vec()
    }

    /// Unit-strike value at `(nu, x)` and step `k`; costs `O(N)`.
    pub fn value(&self, k: usize, nu: f64, x: f64) -> Result<f64> {
        let space = &self.model.space;
        let (nodes, w) = space.locate(nu, x)?;
        let t = self.grid.time(k);
        let c = &self.coeffs[k];
        let mut v = 0.0;
        for (&p, &wi) in nodes.iter().zip(&w) {
            if wi == 0.0 {
                continue;
            }
            let nodal = match (space.free_index[p], space.kinds[p]) {
                (Some(f), _) => self.model.basis.row(f).transpose().dot(c),
                (None, NodeKind::DirichletLow) => self.boundary.low(t),
                (None, _) => self.boundary.high(t),
            };
            v += wi * nodal;
        }
        Ok(v)
    }

    /// Put price for `(s0, strike, nu0, t)`; `t` must be a grid point.
    pub fn price(&self, s0: f64, strike: f64, nu0: f64, t: f64) -> Result<f64> {
        if !(s0 > 0.0 && strike > 0.0) {
            return Err(Error::InvalidParameter(format!("spot {s0} and strike {strike} must be positive")));
        }
        if t == 0.0 {
            return Ok((strike - s0).max(0.0));
        }
        let k = self.grid.step_of(t).ok_or_else(|| {
            Error::InvalidParameter(format!("maturity {t} is not on the time grid (dt = {})", self.grid.dt))
        })?;
        Ok(strike * self.value(k, nu0, (s0 / strike).ln())?)
    }

    /// `B_N c^k - g_N`; nonnegative up to solver tolerance for American models.
    pub fn feasibility(&self, k: usize) -> DVector<f64> {
        &self.model.pairing * &self.coeffs[k] - &self.model.obstacle
    }
}
