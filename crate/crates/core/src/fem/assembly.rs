use std::sync::Arc;

use crate::fem::mesh::FemSpace;
use crate::linalg::{CsrMatrix, SparsePattern};

/// Number of parameter-independent operator blocks.
pub const Q_A: usize = 8;

/// Parameter-independent matrices of a [`FemSpace`].
///
/// Every matrix exists twice: over all nodes (used for lifts) and restricted
/// to the free degrees of freedom (used by the solvers). Rows are test
/// functions, columns trial functions.
#[derive(Debug, Clone)]
pub struct AssemblyBlocks {
    pub mass: CsrMatrix,
    /// H1 semi-norm Gram matrix.
    pub gram: CsrMatrix,
    pub blocks: Vec<CsrMatrix>,
    /// `int phi_p` for every node.
    pub pairing: Vec<f64>,
    pub mass_free: CsrMatrix,
    pub gram_free: CsrMatrix,
    pub blocks_free: Vec<CsrMatrix>,
    /// `D_B`: `int phi_p` on free DOFs.
    pub pairing_free: Vec<f64>,
}

/// Gradients of the three barycentric coordinates as `[d/dnu, d/dx]`.
pub(crate) fn barycentric_gradients(c: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area = crate::fem::mesh::signed_area(c[0], c[1], c[2]);
    let inv = 1.0 / (2.0 * area);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let b = (a + 1) % 3;
        let d = (a + 2) % 3;
        g[a] = [(c[b][1] - c[d][1]) * inv, (c[d][0] - c[b][0]) * inv];
    }
    (g, area)
}

/// Element matrices `[mass, gram, block_1..block_8]` indexed `[test][trial]`.
pub(crate) fn element_matrices(c: [[f64; 2]; 3]) -> [[[f64; 3]; 3]; Q_A + 2] {
    let (g, area) = barycentric_gradients(c);
    let nu = [c[0][0], c[1][0], c[2][0]];
    let nu_sum = nu[0] + nu[1] + nu[2];
    let nu_mean = nu_sum / 3.0;
    let mut e = [[[0.0; 3]; 3]; Q_A + 2];
    for a in 0..3 {
        // int nu * lambda_a
        let nu_w = area / 12.0 * (nu_sum + nu[a]);
        for b in 0..3 {
            let (ga, gb) = (g[a], g[b]);
            e[0][a][b] = area / 12.0 * if a == b { 2.0 } else { 1.0 };
            e[1][a][b] = area * (ga[0] * gb[0] + ga[1] * gb[1]);
            e[2][a][b] = nu_mean * area * gb[0] * ga[0];
            e[3][a][b] = nu_mean * area * (gb[0] * ga[1] + gb[1] * ga[0]);
            e[4][a][b] = nu_mean * area * gb[1] * ga[1];
            e[5][a][b] = gb[0] * area / 3.0;
            e[6][a][b] = gb[0] * nu_w;
            e[7][a][b] = gb[1] * area / 3.0;
            e[8][a][b] = gb[1] * nu_w;
            e[9][a][b] = e[0][a][b];
        }
    }
    e
}

fn node_pattern(space: &FemSpace) -> SparsePattern {
    let mut rows = vec![Vec::with_capacity(7); space.n_nodes()];
    for tri in &space.triangles {
        for &a in tri {
            rows[a].extend_from_slice(tri);
        }
    }
    SparsePattern::from_rows(space.n_nodes(), rows)
}

/// Restriction of a node matrix to the free-by-free block.
pub fn restrict_to_free(space: &FemSpace, a: &CsrMatrix, pattern: &Arc<SparsePattern>) -> CsrMatrix {
    let mut out = CsrMatrix::zeros(pattern.clone());
    for (fi, &p) in space.free_nodes.iter().enumerate() {
        for (q, v) in a.row(p) {
            if let Some(fj) = space.free_index[q] {
                out.add_at(fi, fj, v);
            }
        }
    }
    out
}

fn free_pattern(space: &FemSpace, full: &SparsePattern) -> SparsePattern {
    let rows = space
        .free_nodes
        .iter()
        .map(|&p| {
            full.col_idx[full.row_ptr[p]..full.row_ptr[p + 1]]
                .iter()
                .filter_map(|&q| space.free_index[q])
                .collect()
        })
        .collect();
    SparsePattern::from_rows(space.n_free(), rows)
}

/// Assembles mass, Gram, pairing and the eight operator blocks exactly.
pub fn assemble_blocks(space: &FemSpace) -> AssemblyBlocks {
    let pattern = Arc::new(node_pattern(space));
    let mut mats: Vec<CsrMatrix> = (0..Q_A + 2).map(|_| CsrMatrix::zeros(pattern.clone())).collect();
    let mut pairing = vec![0.0; space.n_nodes()];
    for tri in &space.triangles {
        let c = [space.coords[tri[0]], space.coords[tri[1]], space.coords[tri[2]]];
        let e = element_matrices(c);
        for a in 0..3 {
            for b in 0..3 {
                for (m, em) in mats.iter_mut().zip(e.iter()) {
                    m.add_at(tri[a], tri[b], em[a][b]);
                }
            }
        }
        let area = crate::fem::mesh::signed_area(c[0], c[1], c[2]);
        for &a in tri {
            pairing[a] += area / 3.0;
        }
    }
    let mut it = mats.into_iter();
    let mass = it.next().unwrap();
    let gram = it.next().unwrap();
    let blocks: Vec<CsrMatrix> = it.collect();

    let fpat = Arc::new(free_pattern(space, &pattern));
    let mass_free = restrict_to_free(space, &mass, &fpat);
    let gram_free = restrict_to_free(space, &gram, &fpat);
    let blocks_free = blocks.iter().map(|b| restrict_to_free(space, b, &fpat)).collect();
    let pairing_free = space.free_nodes.iter().map(|&p| pairing[p]).collect();
    AssemblyBlocks { mass, gram, blocks, pairing, mass_free, gram_free, blocks_free, pairing_free }
}

impl AssemblyBlocks {
    /// `sum_q coeffs_q A_q` on free DOFs.
    pub fn operator_free(&self, coeffs: &[f64]) -> CsrMatrix {
        let refs: Vec<&CsrMatrix> = self.blocks_free.iter().collect();
        CsrMatrix::linear_combination(&refs, coeffs)
    }

    /// `sum_q coeffs_q A_q` over all nodes.
    pub fn operator_full(&self, coeffs: &[f64]) -> CsrMatrix {
        let refs: Vec<&CsrMatrix> = self.blocks.iter().collect();
        CsrMatrix::linear_combination(&refs, coeffs)
    }

    /// V-norm (H1 semi-norm) of a free-DOF vector.
    pub fn v_norm(&self, v: &[f64]) -> f64 {
        crate::linalg::dot(v, &self.gram_free.matvec(v)).max(0.0).sqrt()
    }

    /// W-norm of multiplier coefficients: `sqrt(sum_p D_p eta_p^2)`.
    pub fn w_norm(&self, eta: &[f64]) -> f64 {
        self.pairing_free.iter().zip(eta).map(|(d, e)| d * e * e).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{build_mesh, Domain2D, FemSpace, MeshSpec};
    use crate::linalg::BandMatrix;
    use approx::assert_abs_diff_eq;

    fn small_space() -> FemSpace {
        FemSpace::new(Domain2D::standard(), MeshSpec::graded(5, 7)).unwrap()
    }

    #[test]
    fn mass_row_sums_match_pairing() {
        let s = small_space();
        let b = assemble_blocks(&s);
        let ones = vec![1.0; s.n_nodes()];
        let rs = b.mass.matvec(&ones);
        for p in 0..s.n_nodes() {
            assert_abs_diff_eq!(rs[p], b.pairing[p], epsilon = 1e-13);
        }
        assert!(b.pairing_free.iter().all(|&d| d > 0.0));
        let total: f64 = b.pairing.iter().sum();
        assert_abs_diff_eq!(total, s.domain.area(), epsilon = 1e-10);
    }

    #[test]
    fn gradient_blocks_annihilate_constants() {
        let s = small_space();
        let b = assemble_blocks(&s);
        let ones = vec![1.0; s.n_nodes()];
        let mut all = vec![&b.gram];
        all.extend(b.blocks[..Q_A - 1].iter());
        for m in all {
            let r = m.matvec(&ones);
            assert!(r.iter().all(|v| v.abs() < 1e-12), "{:?}", crate::linalg::norm_inf(&r));
        }
    }

    #[test]
    fn mass_is_positive_definite() {
        let s = build_mesh(Domain2D::standard(), 3, 3).unwrap();
        let b = assemble_blocks(&s);
        let d = b.mass.to_dense();
        let eig = nalgebra::SymmetricEigen::new(d.clone());
        assert!(eig.eigenvalues.min() > 0.0);
        assert_abs_diff_eq!((d.clone() - d.transpose()).norm(), 0.0, epsilon = 1e-15);
    }

    /// Degree-2 edge-midpoint rule; exact for the integrands checked here.
    fn midpoint_rule(c: [[f64; 2]; 3], f: impl Fn([f64; 3]) -> f64) -> f64 {
        let area = crate::fem::mesh::signed_area(c[0], c[1], c[2]);
        let mids = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        area / 3.0 * mids.iter().map(|&l| f(l)).sum::<f64>()
    }

    #[test]
    fn dual_basis_is_biorthogonal() {
        for c in [
            [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            [[0.1, -2.0], [0.7, -1.5], [0.3, 0.4]],
        ] {
            let area = crate::fem::mesh::signed_area(c[0], c[1], c[2]);
            for q in 0..3 {
                for p in 0..3 {
                    let v = midpoint_rule(c, |l| (4.0 * l[q] - 1.0) * l[p]);
                    let expect = if p == q { area / 3.0 } else { 0.0 };
                    assert_abs_diff_eq!(v, expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn element_entries_match_quadrature() {
        let c = [[0.2, -1.0], [0.9, -0.6], [0.5, 0.3]];
        let e = element_matrices(c);
        let (g, _) = barycentric_gradients(c);
        let nu = |l: [f64; 3]| l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0];
        for a in 0..3 {
            for b in 0..3 {
                let m = midpoint_rule(c, |l| l[a] * l[b]);
                assert_abs_diff_eq!(e[0][a][b], m, epsilon = 1e-14);
                let b5 = midpoint_rule(c, |l| nu(l) * g[b][0] * l[a]);
                assert_abs_diff_eq!(e[6][a][b], b5, epsilon = 1e-14);
                let b7 = midpoint_rule(c, |l| nu(l) * g[b][1] * l[a]);
                assert_abs_diff_eq!(e[8][a][b], b7, epsilon = 1e-14);
                let b1 = midpoint_rule(c, |l| nu(l) * g[b][0] * g[a][0]);
                assert_abs_diff_eq!(e[2][a][b], b1, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn free_restriction_is_consistent() {
        let s = small_space();
        let b = assemble_blocks(&s);
        let d = b.gram.to_dense();
        let df = b.gram_free.to_dense();
        for (i, &p) in s.free_nodes.iter().enumerate() {
            for (j, &q) in s.free_nodes.iter().enumerate() {
                assert_eq!(df[(i, j)], d[(p, q)]);
            }
        }
        assert!(nalgebra::SymmetricEigen::new(df).eigenvalues.min() > 0.0);
    }

    /// Heat equation `u_t = Lap u + f` with homogeneous Dirichlet data on all
    /// walls, Crank-Nicolson with a small step; returns the L2 error at t=0.5.
    fn heat_error(n: usize) -> f64 {
        use std::f64::consts::PI;
        let dom = Domain2D::new(0.1, 1.1, -0.5, 0.5).unwrap();
        let s = build_mesh(dom, n, n).unwrap();
        let b = assemble_blocks(&s);
        let exact = |t: f64, nu: f64, x: f64| (-t).exp() * (PI * (nu - 0.1)).sin() * (PI * (x + 0.5)).sin();
        let src = |t: f64, nu: f64, x: f64| (2.0 * PI * PI - 1.0) * exact(t, nu, x);
        let interior: Vec<usize> = (0..s.n_nodes())
            .filter(|&p| {
                let [nu, x] = s.coords[p];
                nu > dom.nu_min && nu < dom.nu_max && x > dom.x_min && x < dom.x_max
            })
            .collect();
        let mut local = vec![None; s.n_nodes()];
        for (k, &p) in interior.iter().enumerate() {
            local[p] = Some(k);
        }
        let m = interior.len();
        let (steps, t_end) = (200usize, 0.5);
        let dt = t_end / steps as f64;
        let lhs = CsrMatrix::linear_combination(&[&b.mass, &b.gram], &[1.0 / dt, 0.5]);
        let rhs_m = CsrMatrix::linear_combination(&[&b.mass, &b.gram], &[1.0 / dt, -0.5]);
        let kw = s.spec.n_nu + 2;
        let lu = BandMatrix::from_csr_block(&lhs, &local, m, kw, kw).factor().unwrap();
        let mut u: Vec<f64> = s.coords.iter().map(|c| exact(0.0, c[0], c[1])).collect();
        for p in 0..s.n_nodes() {
            if local[p].is_none() {
                u[p] = 0.0;
            }
        }
        for k in 0..steps {
            let t0 = k as f64 * dt;
            let fmid: Vec<f64> = s.coords.iter().map(|c| src(t0 + 0.5 * dt, c[0], c[1])).collect();
            let load = b.mass.matvec(&fmid);
            let r = rhs_m.matvec(&u);
            let mut rl: Vec<f64> = interior.iter().map(|&p| r[p] + load[p]).collect();
            lu.solve_in_place(&mut rl);
            for (k, &p) in interior.iter().enumerate() {
                u[p] = rl[k];
            }
        }
        let e: Vec<f64> = s
            .coords
            .iter()
            .zip(&u)
            .map(|(c, v)| v - exact(t_end, c[0], c[1]))
            .collect();
        crate::linalg::dot(&e, &b.mass.matvec(&e)).sqrt()
    }

    #[test]
    fn heat_equation_converges_second_order() {
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| heat_error(n)).collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate >= 1.7, "rate {rate} from {errs:?}");
        }
    }
}
