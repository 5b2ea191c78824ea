//! Discrete diffusion and transport operators on masked grids.
//!
//! The diffusion operator `div(a grad f)` is assembled from the quadratic form
//!
//! ```text
//! E(f) = sum_nodes sum_quadrants (h^2 / 4) g_q^T a(node) g_q
//! ```
//!
//! where `g_q` is the one-sided gradient into each of the four quadrants of a
//! node. Then `<f, A f> = -E(f)` exactly, the matrix is symmetric, and
//! `-A` is positive semidefinite whenever every `a(node)` is. For diagonal
//! tensors the stencil collapses to the 5-point scheme with arithmetic face
//! averages; off-diagonal entries produce centred cross differences.
//!
//! Transport `f -> u . grad f` uses face-averaged velocities, which makes the
//! matrix exactly skew-symmetric for any sampled `u`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridKey, ScalarField, VectorField};
use crate::sparse::CsrMatrix;

/// Symmetric 2x2 matrix stored as `[a11, a12, a22]`.
pub type Sym2 = [f64; 3];

pub fn sym2_min_eigenvalue(a: Sym2) -> f64 {
    let tr = a[0] + a[2];
    let diff = 0.5 * (a[0] - a[2]);
    0.5 * tr - (diff * diff + a[1] * a[1]).sqrt()
}

pub fn sym2_max_eigenvalue(a: Sym2) -> f64 {
    let tr = a[0] + a[2];
    let diff = 0.5 * (a[0] - a[2]);
    0.5 * tr + (diff * diff + a[1] * a[1]).sqrt()
}

/// Per-node symmetric tensor `a(x)`, defined on every node of the grid.
#[derive(Debug, Clone)]
pub struct DiffusivityTensor {
    pub key: GridKey,
    pub values: Vec<Sym2>,
}

impl DiffusivityTensor {
    pub fn isotropic(grid: &Grid, kappa: f64) -> Self {
        DiffusivityTensor {
            key: grid.key(),
            values: vec![[kappa, 0.0, kappa]; grid.node_count()],
        }
    }

    /// The eddy tensor `kappa I + Q(x,x) / 2`.
    pub fn eddy(grid: &Grid, kappa: f64, qxx: &[Sym2]) -> Self {
        DiffusivityTensor {
            key: grid.key(),
            values: qxx
                .iter()
                .map(|q| [kappa + 0.5 * q[0], 0.5 * q[1], kappa + 0.5 * q[2]])
                .collect(),
        }
    }

    /// Tensor from a scalar coefficient `c(x) I`.
    pub fn scalar_fn(grid: &Grid, c: impl Fn([f64; 2], f64) -> f64) -> Self {
        let dist = grid.boundary_distance();
        DiffusivityTensor {
            key: grid.key(),
            values: grid
                .nodes()
                .enumerate()
                .map(|(k, p)| {
                    let v = c(p, dist[k]);
                    [v, 0.0, v]
                })
                .collect(),
        }
    }

    /// `kappa I + sigma2 * 1_{D_delta} I`, the lower comparison tensor.
    pub fn layered(grid: &Grid, kappa: f64, sigma2: f64, delta: f64) -> Self {
        Self::scalar_fn(grid, |_, d| if d > delta { kappa + sigma2 } else { kappa })
    }

    pub fn check_psd(&self) -> Result<()> {
        for (node, a) in self.values.iter().enumerate() {
            let scale = a[0].abs().max(a[2].abs()).max(1e-300);
            if !(sym2_min_eigenvalue(*a) >= -1e-12 * scale) || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NotPsd { node });
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &DiffusivityTensor) -> Result<Self> {
        if self.key != other.key {
            return Err(Error::GridMismatch);
        }
        Ok(DiffusivityTensor {
            key: self.key,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    /// Symmetric negative semidefinite `div(a grad .)`.
    Diffusion,
    /// Skew-symmetric `u . grad`.
    Advection,
}

/// Sparse operator acting on the interior-node vector of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    pub key: GridKey,
    pub matrix: CsrMatrix,
    /// Spacing of the grid the operator was assembled on.
    pub h: f64,
}

impl DiscreteOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.apply(v)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `<f, A f>` with the grid inner product.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.h * self.h * crate::sparse::dot(v, &self.apply(v))
    }
}

fn check_grid(grid: &Grid, key: GridKey) -> Result<()> {
    if grid.key() == key {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Assembles `div(a grad .)` with homogeneous Dirichlet data.
pub fn assemble_diffusion(grid: &Grid, tensor: &DiffusivityTensor) -> Result<DiscreteOperator> {
    check_grid(grid, tensor.key)?;
    tensor.check_psd()?;
    let n = grid.interior_count();
    let side = grid.side();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut trip = Vec::with_capacity(9 * n);
    let idx = |node: usize| grid.interior_index(node);
    for node in 0..grid.node_count() {
        let (i, j) = grid.coords(node);
        let a = tensor.values[node];
        for (sx, sy) in [(1i64, 1i64), (-1, 1), (1, -1), (-1, -1)] {
            let ii = i as i64 + sx;
            let jj = j as i64 + sy;
            if ii < 0 || jj < 0 || ii >= side as i64 || jj >= side as i64 {
                continue;
            }
            let ex = grid.node_at(ii as usize, j);
            let ey = grid.node_at(i, jj as usize);
            let s = (sx * sy) as f64;
            // cx = e_ex - e_k, cy = e_ey - e_k; S_q = (1/4)[a11 cx cx^T + s a12 (cx cy^T + cy cx^T) + a22 cy cy^T]
            let cx = [(ex, 1.0), (node, -1.0)];
            let cy = [(ey, 1.0), (node, -1.0)];
            let mut push = |p: usize, q: usize, v: f64| {
                if v == 0.0 {
                    return;
                }
                if let (Some(r), Some(c)) = (idx(p), idx(q)) {
                    trip.push((r, c, -0.25 * v * inv_h2));
                }
            };
            for &(p, vp) in &cx {
                for &(q, vq) in &cx {
                    push(p, q, a[0] * vp * vq);
                }
                for &(q, vq) in &cy {
                    push(p, q, s * a[1] * vp * vq);
                    push(q, p, s * a[1] * vp * vq);
                }
            }
            for &(p, vp) in &cy {
                for &(q, vq) in &cy {
                    push(p, q, a[2] * vp * vq);
                }
            }
        }
    }
    Ok(DiscreteOperator {
        kind: OperatorKind::Diffusion,
        key: grid.key(),
        matrix: CsrMatrix::from_triplets(n, trip),
        h: grid.h(),
    })
}

/// Assembles the skew-symmetric transport operator `f -> u . grad f`.
pub fn assemble_advection(grid: &Grid, u: &VectorField) -> Result<DiscreteOperator> {
    check_grid(grid, u.key)?;
    let n = grid.interior_count();
    let c = 1.0 / (2.0 * grid.h());
    let mut trip = Vec::with_capacity(4 * n);
    for (row, &node) in grid.interior_nodes().iter().enumerate() {
        let [e, w, no, so] = grid.neighbors(node);
        let uk = u.values[node];
        let faces = [(e, 0usize, 1.0), (w, 0, -1.0), (no, 1, 1.0), (so, 1, -1.0)];
        for (nb, comp, sign) in faces {
            let Some(nb) = nb else { continue };
            let Some(col) = grid.interior_index(nb) else { continue };
            let ubar = 0.5 * (uk[comp] + u.values[nb][comp]);
            trip.push((row, col, sign * c * ubar));
        }
    }
    Ok(DiscreteOperator {
        kind: OperatorKind::Advection,
        key: grid.key(),
        matrix: CsrMatrix::from_triplets(n, trip),
        h: grid.h(),
    })
}

/// Precomputed neighbour table for matrix-free transport on interior vectors.
#[derive(Debug, Clone)]
pub struct TransportStencil {
    /// Interior neighbour indices `[east, west, north, south]`, `u32::MAX` if exterior.
    pub neighbors: Vec<[u32; 4]>,
    /// Node index of each interior unknown.
    pub nodes: Vec<u32>,
    /// Node index of each neighbour (exterior neighbours included), `u32::MAX` if outside the box.
    pub neighbor_nodes: Vec<[u32; 4]>,
    pub inv_2h: f64,
}

impl TransportStencil {
    pub fn new(grid: &Grid) -> Self {
        let mut neighbors = Vec::with_capacity(grid.interior_count());
        let mut neighbor_nodes = Vec::with_capacity(grid.interior_count());
        let mut nodes = Vec::with_capacity(grid.interior_count());
        for &node in grid.interior_nodes() {
            let nb = grid.neighbors(node);
            let mut ids = [u32::MAX; 4];
            let mut nn = [u32::MAX; 4];
            for d in 0..4 {
                if let Some(m) = nb[d] {
                    nn[d] = m as u32;
                    if let Some(k) = grid.interior_index(m) {
                        ids[d] = k as u32;
                    }
                }
            }
            neighbors.push(ids);
            neighbor_nodes.push(nn);
            nodes.push(node as u32);
        }
        TransportStencil {
            neighbors,
            nodes,
            neighbor_nodes,
            inv_2h: 0.5 / grid.h(),
        }
    }

    /// `out = B(u) f` for a velocity given on all nodes.
    pub fn apply(&self, u: &[[f64; 2]], f: &[f64], out: &mut [f64]) {
        const COMP: [usize; 4] = [0, 0, 1, 1];
        const SIGN: [f64; 4] = [1.0, -1.0, 1.0, -1.0];
        for (row, o) in out.iter_mut().enumerate() {
            let uk = u[self.nodes[row] as usize];
            let mut acc = 0.0;
            for d in 0..4 {
                let col = self.neighbors[row][d];
                if col == u32::MAX {
                    continue;
                }
                let un = u[self.neighbor_nodes[row][d] as usize];
                acc += SIGN[d] * 0.5 * (uk[COMP[d]] + un[COMP[d]]) * f[col as usize];
            }
            *o = acc * self.inv_2h;
        }
    }
}

/// Residual of the discrete Ito-Stratonovich corrector identity
/// `(1/2) sum_j B_j B_j f = div((Q/2) grad f)` for a set of test functions.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectorReport {
    pub h: f64,
    /// Max over tested nodes and test functions of the absolute residual.
    pub max_abs_residual: f64,
    /// Max over test functions of `|div((Q/2) grad f)|_inf`.
    pub max_abs_reference: f64,
    pub relative_residual: f64,
    pub nodes_tested: usize,
}

/// Compares the iterated transport operators with the assembled corrector on
/// interior nodes farther than `margin` from the boundary.
pub fn ito_corrector_check(
    grid: &Grid,
    fields: &[VectorField],
    tests: &[ScalarField],
    margin: f64,
) -> Result<CorrectorReport> {
    let mut qxx = vec![[0.0; 3]; grid.node_count()];
    for u in fields {
        check_grid(grid, u.key)?;
        for (q, v) in qxx.iter_mut().zip(&u.values) {
            q[0] += v[0] * v[0];
            q[1] += v[0] * v[1];
            q[2] += v[1] * v[1];
        }
    }
    let half_q = DiffusivityTensor {
        key: grid.key(),
        values: qxx.iter().map(|q| [0.5 * q[0], 0.5 * q[1], 0.5 * q[2]]).collect(),
    };
    let corrector = assemble_diffusion(grid, &half_q)?;
    let stencil = TransportStencil::new(grid);
    let dist = grid.boundary_distance();
    let tested: Vec<usize> = grid
        .interior_nodes()
        .iter()
        .enumerate()
        .filter(|(_, &k)| dist[k] > margin)
        .map(|(a, _)| a)
        .collect();

    let n = grid.interior_count();
    let mut max_res = 0.0_f64;
    let mut max_ref = 0.0_f64;
    let mut once = vec![0.0; n];
    let mut twice = vec![0.0; n];
    for f in tests {
        check_grid(grid, f.key)?;
        let fv = grid.interior_values(f);
        let mut iterated = vec![0.0; n];
        for u in fields {
            stencil.apply(&u.values, &fv, &mut once);
            stencil.apply(&u.values, &once, &mut twice);
            for (acc, t) in iterated.iter_mut().zip(&twice) {
                *acc += 0.5 * t;
            }
        }
        let assembled = corrector.apply(&fv);
        for &a in &tested {
            max_res = max_res.max((iterated[a] - assembled[a]).abs());
            max_ref = max_ref.max(assembled[a].abs());
        }
    }
    Ok(CorrectorReport {
        h: grid.h(),
        max_abs_residual: max_res,
        max_abs_reference: max_ref,
        relative_residual: if max_ref > 0.0 { max_res / max_ref } else { 0.0 },
        nodes_tested: tested.len(),
    })
}

/// Quadrant-gradient energy `sum_nodes sum_q (h^2/4) g^T a g`, computed
/// directly from nodal differences (independent of the assembled matrix).
pub fn gradient_form(grid: &Grid, tensor: &DiffusivityTensor, f: &ScalarField) -> f64 {
    let side = grid.side();
    let h = grid.h();
    let mut acc = 0.0;
    for node in 0..grid.node_count() {
        let (i, j) = grid.coords(node);
        let a = tensor.values[node];
        for (sx, sy) in [(1i64, 1i64), (-1, 1), (1, -1), (-1, -1)] {
            let ii = i as i64 + sx;
            let jj = j as i64 + sy;
            if ii < 0 || jj < 0 || ii >= side as i64 || jj >= side as i64 {
                continue;
            }
            let fk = f.values[node];
            let gx = sx as f64 * (f.values[grid.node_at(ii as usize, j)] - fk) / h;
            let gy = sy as f64 * (f.values[grid.node_at(i, jj as usize)] - fk) / h;
            acc += 0.25 * h * h * (a[0] * gx * gx + 2.0 * a[1] * gx * gy + a[2] * gy * gy);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior(grid: &Grid, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.interior_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn isotropic_tensor_gives_five_point_laplacian() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 8.0).unwrap();
        let kappa = 0.3;
        let op = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, kappa)).unwrap();
        let h2 = g.h() * g.h();
        for row in 0..op.dim() {
            let diag = op.matrix.get(row, row);
            assert!((diag + 4.0 * kappa / h2).abs() < 1e-9);
            let off: Vec<f64> = op.matrix.row(row).filter(|&(c, _)| c != row).map(|(_, v)| v).collect();
            assert!(off.len() <= 4);
            for v in off {
                assert!((v - kappa / h2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn diffusion_is_symmetric_and_linear_in_tensor() {
        let g = build_grid(Domain::UnitDisk, 1.0 / 16.0).unwrap();
        let t = DiffusivityTensor {
            key: g.key(),
            values: g
                .nodes()
                .map(|p| [1.0 + p[0] * p[0], 0.3 * p[0] * p[1], 1.0 + p[1] * p[1]])
                .collect(),
        };
        let a = assemble_diffusion(&g, &t).unwrap();
        assert_eq!(a.matrix.symmetry_defect(), 0.0);

        let one = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, 1.0)).unwrap();
        let c = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, 2.5)).unwrap();
        for row in 0..one.dim() {
            for (col, v) in one.matrix.row(row) {
                assert!((c.matrix.get(row, col) - 2.5 * v).abs() < 1e-9 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn quadratic_form_identity() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 20.0).unwrap();
        let t = DiffusivityTensor {
            key: g.key(),
            values: g
                .nodes()
                .map(|p| {
                    let s = (3.0 * p[0]).sin();
                    [0.1 + s * s, 0.5 * s * p[1], 0.1 + p[1] * p[1]]
                })
                .collect(),
        };
        let op = assemble_diffusion(&g, &t).unwrap();
        for seed in 0..5 {
            let v = random_interior(&g, seed);
            let f = g.scalar_from_interior(&v);
            let lhs = op.quadratic_form(&v);
            let rhs = -gradient_form(&g, &t, &f);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs());
        }
    }

    #[test]
    fn ellipticity_floor_holds() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 16.0).unwrap();
        let kappa = 0.05;
        let q: Vec<Sym2> = g.nodes().map(|p| [p[0], 0.5 * (p[0] * p[1]).sqrt(), p[1]]).collect();
        let eddy = DiffusivityTensor::eddy(&g, kappa, &q);
        let a_q = assemble_diffusion(&g, &eddy).unwrap();
        let a = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, kappa)).unwrap();
        for seed in 0..50 {
            let v = random_interior(&g, 100 + seed);
            assert!(a_q.quadratic_form(&v) <= a.quadratic_form(&v) + 1e-12);
        }
    }

    #[test]
    fn non_psd_tensor_rejected() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 8.0).unwrap();
        let mut t = DiffusivityTensor::isotropic(&g, 1.0);
        t.values[10] = [1.0, 2.0, 1.0];
        assert!(matches!(assemble_diffusion(&g, &t), Err(Error::NotPsd { node: 10 })));
    }

    #[test]
    fn advection_is_exactly_skew() {
        let g = build_grid(Domain::UnitDisk, 1.0 / 16.0).unwrap();
        let u = g.vector_from_fn(|p| [p[1].sin() + 0.2, p[0] * p[0]]);
        let b = assemble_advection(&g, &u).unwrap();
        assert_eq!(b.matrix.skew_defect(), 0.0);
        let v = random_interior(&g, 7);
        let bv = b.apply(&v);
        assert!(crate::sparse::dot(&v, &bv).abs() < 1e-12 * crate::sparse::norm(&bv).max(1.0) * v.len() as f64);

        let zero = assemble_advection(&g, &g.zero_vectors()).unwrap();
        assert!(zero.matrix.row(0).all(|(_, v)| v == 0.0));
    }

    #[test]
    fn matrix_free_transport_matches_assembled() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 12.0).unwrap();
        let u = g.vector_from_fn(|p| [p[1] - 0.5, 0.5 - p[0]]);
        let b = assemble_advection(&g, &u).unwrap();
        let st = TransportStencil::new(&g);
        let v = random_interior(&g, 3);
        let mut out = vec![0.0; v.len()];
        st.apply(&u.values, &v, &mut out);
        let want = b.apply(&v);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_consistency_is_second_order() {
        // smooth divergence-free u = grad^perp psi, psi = sin(pi x) sin(pi y)
        use std::f64::consts::PI;
        let u = |p: [f64; 2]| {
            [
                -PI * (PI * p[0]).sin() * (PI * p[1]).cos(),
                PI * (PI * p[0]).cos() * (PI * p[1]).sin(),
            ]
        };
        let f = |p: [f64; 2]| (PI * p[0]).sin().powi(2) * (2.0 * PI * p[1]).sin();
        let grad_f = |p: [f64; 2]| {
            [
                PI * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin(),
                2.0 * PI * (PI * p[0]).sin().powi(2) * (2.0 * PI * p[1]).cos(),
            ]
        };
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = build_grid(Domain::UnitSquare, 1.0 / n as f64).unwrap();
            let uf = g.vector_from_fn(u);
            let b = assemble_advection(&g, &uf).unwrap();
            let fv = g.interior_values(&g.scalar_from_fn(f));
            let bf = b.apply(&fv);
            let mut e = 0.0_f64;
            for (a, &k) in g.interior_nodes().iter().enumerate() {
                let p = g.point(k);
                let (uu, gg) = (u(p), grad_f(p));
                e = e.max((bf[a] - (uu[0] * gg[0] + uu[1] * gg[1])).abs());
            }
            errs.push(e);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.8, "rate {rate}, errors {errs:?}");
        }
    }
}
