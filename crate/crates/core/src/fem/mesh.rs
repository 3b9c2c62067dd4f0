use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangle `(nu_min, nu_max) x (x_min, x_max)` in variance and
/// log-moneyness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain2D {
    pub nu_min: f64,
    pub nu_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl Domain2D {
    pub fn new(nu_min: f64, nu_max: f64, x_min: f64, x_max: f64) -> Result<Self> {
        if !(nu_min > 0.0 && nu_min < nu_max) {
            return Err(Error::DegenerateDomain(format!(
                "variance range ({nu_min}, {nu_max}) must satisfy 0 < nu_min < nu_max"
            )));
        }
        if !(x_min < 0.0 && 0.0 < x_max) {
            return Err(Error::DegenerateDomain(format!(
                "log-moneyness range ({x_min}, {x_max}) must contain 0 in its interior"
            )));
        }
        Ok(Self { nu_min, nu_max, x_min, x_max })
    }

    /// `(1e-5, 3) x (-5, 5)`.
    pub fn standard() -> Self {
        Self { nu_min: 1e-5, nu_max: 3.0, x_min: -5.0, x_max: 5.0 }
    }

    pub fn area(&self) -> f64 {
        (self.nu_max - self.nu_min) * (self.x_max - self.x_min)
    }
}

/// Node placement along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Grading {
    Uniform,
    /// `sinh` stretching that clusters nodes around `focus`; smaller
    /// `width` means stronger clustering.
    Sinh { focus: f64, width: f64 },
}

impl Grading {
    fn nodes(&self, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let mut out: Vec<f64> = match *self {
            Grading::Uniform => {
                (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
            }
            Grading::Sinh { focus, width } => {
                let c = focus.clamp(lo, hi);
                let c1 = ((lo - c) / width).asinh();
                let c2 = ((hi - c) / width).asinh();
                (0..=n)
                    .map(|k| {
                        let s = k as f64 / n as f64;
                        c + width * (c2 * s + c1 * (1.0 - s)).sinh()
                    })
                    .collect()
            }
        };
        out[0] = lo;
        out[n] = hi;
        out
    }
}

/// Mesh resolution and node grading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub n_nu: usize,
    pub n_x: usize,
    pub nu_grading: Grading,
    pub x_grading: Grading,
}

impl MeshSpec {
    pub fn uniform(n_nu: usize, n_x: usize) -> Self {
        Self { n_nu, n_x, nu_grading: Grading::Uniform, x_grading: Grading::Uniform }
    }

    /// Clusters nodes around small variances and at-the-money log-moneyness.
    pub fn graded(n_nu: usize, n_x: usize) -> Self {
        Self {
            n_nu,
            n_x,
            nu_grading: Grading::Sinh { focus: 0.1, width: 0.3 },
            x_grading: Grading::Sinh { focus: 0.0, width: 0.5 },
        }
    }
}

/// Boundary classification of a mesh node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    /// Variance walls `nu = nu_min` or `nu = nu_max` (zero flux).
    Neumann,
    /// `x = x_min` wall, corners included.
    DirichletLow,
    /// `x = x_max` wall, corners included.
    DirichletHigh,
}

impl NodeKind {
    pub fn is_free(self) -> bool {
        matches!(self, NodeKind::Interior | NodeKind::Neumann)
    }
}

/// Structured P1 triangulation of a [`Domain2D`] with its degree-of-freedom map.
///
/// Nodes are numbered with the variance index running fastest, so the
/// stiffness bandwidth is `n_nu + 2`. Every rectangle is split along the
/// diagonal joining its lower-left and upper-right corners.
#[derive(Debug, Clone)]
pub struct FemSpace {
    pub domain: Domain2D,
    pub spec: MeshSpec,
    pub nu_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
    /// `(nu, x)` per node.
    pub coords: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub kinds: Vec<NodeKind>,
    /// Free-DOF index of every node, `None` on the Dirichlet walls.
    pub free_index: Vec<Option<usize>>,
    /// Node index of every free DOF.
    pub free_nodes: Vec<usize>,
}

/// Uniform structured mesh with `(n_nu+1) x (n_x+1)` nodes.
pub fn build_mesh(domain: Domain2D, n_nu: usize, n_x: usize) -> Result<FemSpace> {
    FemSpace::new(domain, MeshSpec::uniform(n_nu, n_x))
}

impl FemSpace {
    pub fn new(domain: Domain2D, spec: MeshSpec) -> Result<Self> {
        let domain = Domain2D::new(domain.nu_min, domain.nu_max, domain.x_min, domain.x_max)?;
        if spec.n_nu < 1 || spec.n_x < 1 {
            return Err(Error::DegenerateDomain(format!(
                "mesh needs at least one cell per axis, got {} x {}",
                spec.n_nu, spec.n_x
            )));
        }
        if let Grading::Sinh { width, .. } = spec.nu_grading {
            if width <= 0.0 {
                return Err(Error::InvalidParameter("grading width must be positive".into()));
            }
        }
        if let Grading::Sinh { width, .. } = spec.x_grading {
            if width <= 0.0 {
                return Err(Error::InvalidParameter("grading width must be positive".into()));
            }
        }
        let nu_nodes = spec.nu_grading.nodes(domain.nu_min, domain.nu_max, spec.n_nu);
        let x_nodes = spec.x_grading.nodes(domain.x_min, domain.x_max, spec.n_x);
        let stride = spec.n_nu + 1;
        let node = |i: usize, j: usize| j * stride + i;

        let mut coords = Vec::with_capacity(stride * (spec.n_x + 1));
        let mut kinds = Vec::with_capacity(coords.capacity());
        for (j, &x) in x_nodes.iter().enumerate() {
            for (i, &nu) in nu_nodes.iter().enumerate() {
                coords.push([nu, x]);
                let kind = if j == 0 {
                    NodeKind::DirichletLow
                } else if j == spec.n_x {
                    NodeKind::DirichletHigh
                } else if i == 0 || i == spec.n_nu {
                    NodeKind::Neumann
                } else {
                    NodeKind::Interior
                };
                kinds.push(kind);
            }
        }

        let mut triangles = Vec::with_capacity(2 * spec.n_nu * spec.n_x);
        for j in 0..spec.n_x {
            for i in 0..spec.n_nu {
                let n00 = node(i, j);
                let n10 = node(i + 1, j);
                let n01 = node(i, j + 1);
                let n11 = node(i + 1, j + 1);
                triangles.push([n00, n10, n11]);
                triangles.push([n00, n11, n01]);
            }
        }

        let mut free_index = vec![None; coords.len()];
        let mut free_nodes = Vec::new();
        for (p, kind) in kinds.iter().enumerate() {
            if kind.is_free() {
                free_index[p] = Some(free_nodes.len());
                free_nodes.push(p);
            }
        }

        Ok(Self { domain, spec, nu_nodes, x_nodes, coords, triangles, kinds, free_index, free_nodes })
    }

    /// Number of nodes.
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Number of free degrees of freedom.
    pub fn n_free(&self) -> usize {
        self.free_nodes.len()
    }

    /// Half bandwidth of any operator on this mesh in free-DOF numbering.
    pub fn bandwidth(&self) -> usize {
        self.spec.n_nu + 2
    }

    pub fn node_index(&self, i_nu: usize, j_x: usize) -> usize {
        j_x * (self.spec.n_nu + 1) + i_nu
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.coords[a], self.coords[b], self.coords[c])
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = usize> + '_ {
        self.kinds.iter().enumerate().filter(move |(_, k)| **k == kind).map(|(p, _)| p)
    }

    /// Containing triangle and barycentric weights for `(nu, x)`.
    pub fn locate(&self, nu: f64, x: f64) -> Result<([usize; 3], [f64; 3])> {
        let d = &self.domain;
        let tol_nu = 1e-12 * (d.nu_max - d.nu_min);
        let tol_x = 1e-12 * (d.x_max - d.x_min);
        if !(nu >= d.nu_min - tol_nu && nu <= d.nu_max + tol_nu)
            || !(x >= d.x_min - tol_x && x <= d.x_max + tol_x)
        {
            return Err(Error::OutOfDomain { nu, x });
        }
        let nu = nu.clamp(d.nu_min, d.nu_max);
        let x = x.clamp(d.x_min, d.x_max);
        let i = cell_index(&self.nu_nodes, nu);
        let j = cell_index(&self.x_nodes, x);
        let s = (nu - self.nu_nodes[i]) / (self.nu_nodes[i + 1] - self.nu_nodes[i]);
        let t = (x - self.x_nodes[j]) / (self.x_nodes[j + 1] - self.x_nodes[j]);
        let n00 = self.node_index(i, j);
        let n10 = self.node_index(i + 1, j);
        let n01 = self.node_index(i, j + 1);
        let n11 = self.node_index(i + 1, j + 1);
        if t <= s {
            Ok(([n00, n10, n11], [1.0 - s, s - t, t]))
        } else {
            Ok(([n00, n11, n01], [1.0 - t, s, t - s]))
        }
    }
}

fn cell_index(nodes: &[f64], v: f64) -> usize {
    let n_cells = nodes.len() - 1;
    let k = nodes.partition_point(|&a| a <= v);
    k.saturating_sub(1).min(n_cells - 1)
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// P1 interpolation of nodal `coefficients` (one per node) at `(nu, x)`.
pub fn evaluate_p1(space: &FemSpace, coefficients: &[f64], nu: f64, x: f64) -> Result<f64> {
    let (nodes, w) = space.locate(nu, x)?;
    Ok(nodes.iter().zip(w.iter()).map(|(&p, &wi)| wi * coefficients[p]).sum())
}
