//! Log-transformed Heston operator, its affine split, and boundary data.
//!
//! With `x = log(S/K)` and `t` the time to maturity the put value solves
//! `w_t - div(A grad w) + b . grad w + r w = 0`, where
//! `A = nu/2 [[xi^2, rho xi], [rho xi, 1]]` and
//! `b = [-kappa (gamma - nu) + xi^2/2, -r + nu/2 + rho xi/2]`.

use std::sync::Arc;

use crate::error::Result;
use crate::fem::{assemble_blocks, AssemblyBlocks, Domain2D, FemSpace, MeshSpec, NodeKind, Q_A};
use crate::linalg::{BandMatrix, CsrMatrix};
use crate::params::{put_payoff_log, ModelParams, Style};

pub fn diffusion_matrix(mu: &ModelParams, nu: f64) -> [[f64; 2]; 2] {
    let h = 0.5 * nu;
    [[h * mu.xi * mu.xi, h * mu.rho * mu.xi], [h * mu.rho * mu.xi, h]]
}

pub fn velocity_vector(mu: &ModelParams, nu: f64) -> [f64; 2] {
    [
        -mu.kappa * (mu.gamma - nu) + 0.5 * mu.xi * mu.xi,
        -mu.r + 0.5 * nu + 0.5 * mu.xi * mu.rho,
    ]
}

/// Coefficients of the eight operator blocks, in block order:
/// `nu u_nu v_nu`, `nu (u_nu v_x + u_x v_nu)`, `nu u_x v_x`, `u_nu v`,
/// `nu u_nu v`, `u_x v`, `nu u_x v`, `u v`.
pub fn affine_coefficients(mu: &ModelParams) -> [f64; Q_A] {
    let xi2 = mu.xi * mu.xi;
    [
        0.5 * xi2,
        0.5 * mu.rho * mu.xi,
        0.5,
        -mu.kappa * mu.gamma + 0.5 * xi2,
        mu.kappa,
        -mu.r + 0.5 * mu.rho * mu.xi,
        0.5,
        mu.r,
    ]
}

/// Dirichlet data on the two log-moneyness walls; the variance walls carry
/// zero flux.
///
/// European: `K (e^{-rt} - e^{x_min})` at `x_min`, `0` at `x_max`.
/// American: the payoff on both walls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryData {
    pub style: Style,
    pub strike: f64,
    pub r: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl BoundaryData {
    pub fn new(style: Style, strike: f64, r: f64, domain: &Domain2D) -> Self {
        Self { style, strike, r, x_min: domain.x_min, x_max: domain.x_max }
    }

    /// Value on the `x = x_min` wall at time to maturity `t`.
    pub fn low(&self, t: f64) -> f64 {
        match self.style {
            Style::European => self.strike * ((-self.r * t).exp() - self.x_min.exp()),
            Style::American => put_payoff_log(self.strike, self.x_min),
        }
    }

    /// Value on the `x = x_max` wall.
    pub fn high(&self, _t: f64) -> f64 {
        put_payoff_log(self.strike, self.x_max)
    }

    /// Nodal lift over all nodes: wall values on the Dirichlet nodes, zero
    /// elsewhere.
    pub fn lift(&self, space: &FemSpace, t: f64) -> Vec<f64> {
        let (lo, hi) = (self.low(t), self.high(t));
        space
            .kinds
            .iter()
            .map(|k| match k {
                NodeKind::DirichletLow => lo,
                NodeKind::DirichletHigh => hi,
                _ => 0.0,
            })
            .collect()
    }
}

/// Couplings of the Dirichlet walls into the free rows, one vector per wall
/// and block, so that load vectors are affine in the parameters.
#[derive(Debug, Clone)]
pub struct WallCoupling {
    /// `(M 1_wall)` on free rows, `[low, high]`.
    pub mass: [Vec<f64>; 2],
    /// `(A_q 1_wall)` on free rows, `[low, high][q]`.
    pub blocks: [Vec<Vec<f64>>; 2],
}

impl WallCoupling {
    pub fn new(space: &FemSpace, blocks: &AssemblyBlocks) -> Self {
        let indicator = |kind: NodeKind| -> Vec<f64> {
            space.kinds.iter().map(|&k| if k == kind { 1.0 } else { 0.0 }).collect()
        };
        let restrict = |v: Vec<f64>| -> Vec<f64> { space.free_nodes.iter().map(|&p| v[p]).collect() };
        let walls = [indicator(NodeKind::DirichletLow), indicator(NodeKind::DirichletHigh)];
        let mass = walls.clone().map(|w| restrict(blocks.mass.matvec(&w)));
        let blk = walls.map(|w| blocks.blocks.iter().map(|a| restrict(a.matvec(&w))).collect());
        Self { mass, blocks: blk }
    }

    /// `sum_q coeffs_q A_q 1_wall` on free rows.
    pub fn operator(&self, wall: usize, coeffs: &[f64]) -> Vec<f64> {
        let n = self.mass[wall].len();
        let mut out = vec![0.0; n];
        for (c, v) in coeffs.iter().zip(&self.blocks[wall]) {
            if *c != 0.0 {
                out.iter_mut().zip(v).for_each(|(o, a)| *o += c * a);
            }
        }
        out
    }
}

/// Weights `(dm, mix)` per wall `[low, high]` of the lift load for the step
/// `t0 -> t1`: the load is `-sum_w (dm_w M 1_w + mix_w A 1_w)`.
pub fn lift_weights(boundary: &BoundaryData, t0: f64, t1: f64, theta: f64) -> [(f64, f64); 2] {
    let dt = t1 - t0;
    let vals = [[boundary.low(t0), boundary.low(t1)], [boundary.high(t0), boundary.high(t1)]];
    vals.map(|[v0, v1]| ((v1 - v0) / dt, theta * v1 + (1.0 - theta) * v0))
}

/// Load vector of the lift functional for the step `t0 -> t1` on free DOFs:
/// `-(M (L1 - L0))/dt - A (theta L1 + (1 - theta) L0)`.
pub fn lift_and_rhs(
    mu: &ModelParams,
    wall: &WallCoupling,
    boundary: &BoundaryData,
    t0: f64,
    t1: f64,
    theta: f64,
) -> Vec<f64> {
    let coeffs = affine_coefficients(mu);
    let n = wall.mass[0].len();
    let mut f = vec![0.0; n];
    for (w, (dm, mix)) in lift_weights(boundary, t0, t1, theta).into_iter().enumerate() {
        if dm == 0.0 && mix == 0.0 {
            continue;
        }
        let a = wall.operator(w, &coeffs);
        for i in 0..n {
            f[i] -= dm * wall.mass[w][i] + mix * a[i];
        }
    }
    f
}

/// Obstacle on free DOFs: payoff minus lift, which is the payoff itself
/// because the lift vanishes off the Dirichlet walls.
pub fn obstacle_vector(space: &FemSpace, strike: f64) -> Vec<f64> {
    space.free_nodes.iter().map(|&p| put_payoff_log(strike, space.coords[p][1])).collect()
}

/// Mesh, assembled blocks and wall couplings shared by every solve.
#[derive(Debug, Clone)]
pub struct PricingContext {
    pub space: FemSpace,
    pub blocks: AssemblyBlocks,
    pub wall: WallCoupling,
}

impl PricingContext {
    pub fn new(domain: Domain2D, spec: MeshSpec) -> Result<Arc<Self>> {
        let space = FemSpace::new(domain, spec)?;
        let blocks = assemble_blocks(&space);
        let wall = WallCoupling::new(&space, &blocks);
        Ok(Arc::new(Self { space, blocks, wall }))
    }

    pub fn operator(&self, mu: &ModelParams) -> CsrMatrix {
        self.blocks.operator_free(&affine_coefficients(mu))
    }

    /// Smallest `lambda >= 0` (estimated) with `sym(A) + lambda D_B` positive
    /// semi-definite, `D_B` the lumped mass.
    pub fn garding_estimate(&self, mu: &ModelParams) -> f64 {
        let a = self.operator(mu);
        let d = &self.blocks.pairing_free;
        let n = d.len();
        if n == 0 {
            return 0.0;
        }
        let kw = self.space.bandwidth();
        let mut shift = 0.0f64;
        for i in 0..n {
            let mut off = 0.0;
            let mut diag = 0.0;
            for (j, v) in a.row(i) {
                let s = 0.5 * (v + a.get(j, i));
                if j == i {
                    diag = s;
                } else {
                    off += s.abs();
                }
            }
            shift = shift.max((off - diag) / d[i]);
        }
        let shift = shift.max(0.0) * 1.01 + 1.0;
        let mut band = BandMatrix::zeros(n, kw, kw);
        for i in 0..n {
            for (j, v) in a.row(i) {
                band.add(i, j, 0.5 * v);
                band.add(j, i, 0.5 * v);
            }
            band.add(i, i, shift * d[i]);
        }
        let Ok(lu) = band.factor() else { return shift };
        // inverse iteration for the smallest eigenvalue of (S + shift D, D)
        let mut x = vec![1.0; n];
        let mut rq = shift;
        for _ in 0..60 {
            let mut y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a * b).collect();
            lu.solve_in_place(&mut y);
            let num: f64 = x.iter().zip(d).zip(&y).map(|((a, b), c)| a * b * c).sum();
            let den: f64 = y.iter().zip(d).map(|(a, b)| a * a * b).sum::<f64>();
            let norm = den.sqrt();
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
            let next = num / den;
            x = y.into_iter().map(|v| v / norm).collect();
            let done = (next - rq).abs() <= 1e-10 * next.abs();
            rq = next;
            if done {
                break;
            }
        }
        (shift - rq).max(0.0)
    }
}
