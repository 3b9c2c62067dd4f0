use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dot, BandLu, CsrMatrix};

/// Dominant POD mode of `trajectory` in the inner product of `gram`,
/// normalized to unit norm with its largest-magnitude entry positive.
pub fn pod1(trajectory: &[Vec<f64>], gram: &CsrMatrix) -> Result<Vec<f64>> {
    if trajectory.is_empty() {
        return Err(Error::ZeroVector("empty trajectory".into()));
    }
    let gv: Vec<Vec<f64>> = trajectory.iter().map(|v| gram.matvec(v)).collect();
    let k = trajectory.len();
    let corr = DMatrix::from_fn(k, k, |i, j| dot(&trajectory[i], &gv[j]));
    let corr = (&corr + corr.transpose()) * 0.5;
    if corr.diagonal().iter().all(|&d| d <= 0.0) {
        return Err(Error::ZeroVector("trajectory has no nonzero snapshot".into()));
    }
    let eig = corr.symmetric_eigen();
    let mut best = 0;
    for i in 1..k {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let a = eig.eigenvectors.column(best);
    let n = trajectory[0].len();
    let mut z = vec![0.0; n];
    for (coef, v) in a.iter().zip(trajectory) {
        z.iter_mut().zip(v).for_each(|(zi, vi)| *zi += coef * vi);
    }
    let norm = dot(&z, &gram.matvec(&z)).max(0.0).sqrt();
    if !(norm > 0.0) {
        return Err(Error::ZeroVector("dominant mode vanishes".into()));
    }
    fix_sign(&mut z, norm);
    Ok(z)
}

fn fix_sign(z: &mut [f64], norm: f64) {
    let mut imax = 0;
    for i in 1..z.len() {
        if z[i].abs() > z[imax].abs() {
            imax = i;
        }
    }
    let s = if z[imax] < 0.0 { -1.0 / norm } else { 1.0 / norm };
    z.iter_mut().for_each(|v| *v *= s);
}

/// Inner product given by a positive diagonal.
pub fn weighted_dot(weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

/// Angle between `eta` and the span of `basis` in the norm weighted by
/// `weights`, in `[0, pi/2]`. The basis is orthonormalized internally.
pub fn angle_to_space(eta: &[f64], basis: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let norm = weighted_dot(weights, eta, eta).sqrt();
    if !(norm > 0.0) {
        return Err(Error::ZeroVector("angle of a zero vector".into()));
    }
    let ortho = orthonormalize_diag(basis, weights);
    let proj2: f64 = ortho.iter().map(|y| weighted_dot(weights, eta, y).powi(2)).sum();
    Ok((proj2.sqrt() / norm).min(1.0).acos())
}

pub(crate) fn orthonormalize_diag(basis: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for v in basis {
        let mut w = v.clone();
        let n0 = weighted_dot(weights, &w, &w).sqrt();
        for _ in 0..2 {
            for y in &out {
                let c = weighted_dot(weights, &w, y);
                w.iter_mut().zip(y).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n1 = weighted_dot(weights, &w, &w).sqrt();
        if n1 > 1e-10 * n0 && n1 > 0.0 {
            w.iter_mut().for_each(|a| *a /= n1);
            out.push(w);
        }
    }
    out
}

/// `T xi` solving `(T xi, v)_V = b(xi, v)`, i.e. `G T xi = D xi`.
pub fn supremizer(xi: &[f64], pairing: &[f64], gram_lu: &BandLu) -> Vec<f64> {
    let mut rhs: Vec<f64> = xi.iter().zip(pairing).map(|(a, d)| a * d).collect();
    gram_lu.solve_in_place(&mut rhs);
    rhs
}

/// Appends `candidates` to the `gram`-orthonormal `basis` by two-pass
/// Gram-Schmidt; near-dependent candidates are dropped. Returns how many
/// were added.
pub fn orthonormalize(basis: &mut Vec<Vec<f64>>, candidates: &[Vec<f64>], gram: &CsrMatrix) -> usize {
    let mut added = 0;
    for c in candidates {
        let mut w = c.clone();
        let n0 = dot(&w, &gram.matvec(&w)).max(0.0).sqrt();
        if !(n0 > 0.0) {
            continue;
        }
        for _ in 0..2 {
            let gw = gram.matvec(&w);
            for y in basis.iter() {
                let coef = dot(y, &gw);
                w.iter_mut().zip(y).for_each(|(a, b)| *a -= coef * b);
            }
        }
        let n1 = dot(&w, &gram.matvec(&w)).max(0.0).sqrt();
        if n1 > 1e-8 * n0 {
            w.iter_mut().for_each(|a| *a /= n1);
            basis.push(w);
            added += 1;
        }
    }
    added
}

/// Columns of `basis` as a dense matrix.
pub fn to_matrix(basis: &[Vec<f64>], rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, basis.len(), |i, j| basis[j][i])
}

/// `Psi^T G v` for a `gram`-orthonormal basis.
pub fn project_coefficients(psi: &DMatrix<f64>, gram: &CsrMatrix, v: &[f64]) -> DVector<f64> {
    let gv = DVector::from_vec(gram.matvec(v));
    psi.tr_mul(&gv)
}
