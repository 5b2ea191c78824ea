//! Covariance diagnostics of a finite family of vector fields:
//! `Q(x, x) = sum_j u_j(x) (x) u_j(x)`, its smallest eigenvalue `q(x)`, the
//! operator `(Qv)(x) = sum_j u_j(x) <u_j, v>` and its norm `eps_Q`.
//!
//! For a finite family `Q = U U*` with `U c = sum_j c_j u_j`, so the nonzero
//! spectrum of `Q` is that of the Gram matrix `U* U`. `eps_Q` is its top
//! eigenvalue, computed matrix-free by Lanczos.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::elliptic::{sym2_min_eigenvalue, Sym2};
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, ScalarField, VectorField};
use crate::vortex::{SparseField, VortexBasis, VortexConfig, VortexProfile};

/// `sum_j u_j(node) (x) u_j(node)` for every node of the grid.
pub fn pointwise_q(grid: &Grid, fields: &[SparseField]) -> Vec<Sym2> {
    let mut q = vec![[0.0; 3]; grid.node_count()];
    for f in fields {
        for (&k, v) in f.nodes.iter().zip(&f.values) {
            let e = &mut q[k as usize];
            e[0] += v[0] * v[0];
            e[1] += v[0] * v[1];
            e[2] += v[1] * v[1];
        }
    }
    q
}

/// `Q(x, x)` at a single node.
pub fn pointwise_q_at(fields: &[SparseField], node: usize) -> Sym2 {
    let mut e = [0.0; 3];
    for f in fields {
        if let Ok(i) = f.nodes.binary_search(&(node as u32)) {
            let v = f.values[i];
            e[0] += v[0] * v[0];
            e[1] += v[0] * v[1];
            e[2] += v[1] * v[1];
        }
    }
    e
}

/// `q(x) = lambda_min(Q(x, x))`, closed form.
pub fn q_field(grid: &Grid, fields: &[SparseField]) -> ScalarField {
    let qxx = pointwise_q(grid, fields);
    let mut out = grid.zeros();
    for (o, a) in out.values.iter_mut().zip(&qxx) {
        *o = sym2_min_eigenvalue(*a).max(0.0);
    }
    out
}

/// `(Q v)(x) = sum_j u_j(x) <u_j, v>`.
pub fn apply_qop(grid: &Grid, fields: &[SparseField], v: &VectorField) -> Result<VectorField> {
    if v.key != grid.key() {
        return Err(Error::GridMismatch);
    }
    let h2 = grid.h() * grid.h();
    let mut out = grid.zero_vectors();
    for f in fields {
        let c = h2 * f.gather(&v.values);
        if c != 0.0 {
            f.scatter_add(c, &mut out.values);
        }
    }
    Ok(out)
}

/// Dense Gram matrix `<u_i, u_j>`. When `classes` is given, same-class
/// off-diagonal entries are set to zero without being evaluated.
pub fn gram_dense(grid: &Grid, fields: &[SparseField], classes: Option<&[usize]>) -> DMatrix<f64> {
    let n = fields.len();
    let h2 = grid.h() * grid.h();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j < i {
                        return 0.0;
                    }
                    if i != j {
                        if let Some(c) = classes {
                            if c[i] == c[j] {
                                return 0.0;
                            }
                        }
                    }
                    h2 * fields[i].raw_dot(&fields[j])
                })
                .collect()
        })
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            g[(i, j)] = rows[i][j];
            g[(j, i)] = rows[i][j];
        }
    }
    g
}

/// Largest eigenvalue of a dense symmetric matrix.
pub fn top_eigenvalue_dense(g: &DMatrix<f64>) -> f64 {
    if g.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(g.clone()).eigenvalues.max()
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonQ {
    pub value: f64,
    pub iterations: usize,
    /// Ritz residual `||G c - theta c|| / theta` of the returned pair.
    pub residual: f64,
    /// Coefficients `c` of the top eigenvector `sum_j c_j u_j`, unit Euclidean norm.
    #[serde(skip)]
    pub coefficients: Vec<f64>,
}

/// Gram operator `c -> U* U c` on coefficient vectors.
struct GramOperator<'a> {
    fields: &'a [SparseField],
    node_count: usize,
    h2: f64,
}

impl GramOperator<'_> {
    fn apply(&self, c: &[f64]) -> Vec<f64> {
        let mut dense = vec![[0.0; 2]; self.node_count];
        for (f, &cj) in self.fields.iter().zip(c) {
            if cj != 0.0 {
                f.scatter_add(cj, &mut dense);
            }
        }
        self.fields.par_iter().map(|f| self.h2 * f.gather(&dense)).collect()
    }
}

/// `eps_Q` by Lanczos with full reorthogonalization on the Gram operator.
pub fn epsilon_q(grid: &Grid, fields: &[SparseField], rel_tol: f64) -> Result<EpsilonQ> {
    let n = fields.len();
    if n == 0 {
        return Ok(EpsilonQ {
            value: 0.0,
            iterations: 0,
            residual: 0.0,
            coefficients: Vec::new(),
        });
    }
    let op = GramOperator {
        fields,
        node_count: grid.node_count(),
        h2: grid.h() * grid.h(),
    };
    let max_steps = n.min(400);
    // deterministic start vector with all positive entries plus a mild variation
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_7).fract()).collect();
    let nrm = crate::sparse::norm(&q);
    q.iter_mut().for_each(|x| *x /= nrm);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut best = (0.0, f64::INFINITY, Vec::new());
    for k in 0..max_steps {
        let mut w = op.apply(&basis[k]);
        let a = crate::sparse::dot(&w, &basis[k]);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = crate::sparse::dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bnext = crate::sparse::norm(&w);
        let m = alpha.len();
        let check = (k + 1) % 5 == 0 || bnext <= 1e-14 * a.abs().max(1e-300) || k + 1 == max_steps;
        if check {
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alpha[i];
                if i + 1 < m {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (idx, theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let s = eig.eigenvectors.column(idx);
            let res = if theta > 0.0 { bnext * s[m - 1].abs() / theta } else { 0.0 };
            if res < best.1 || best.2.is_empty() {
                let mut c = vec![0.0; n];
                for (i, b) in basis.iter().enumerate() {
                    c.iter_mut().zip(b).for_each(|(x, y)| *x += s[i] * y);
                }
                if c.iter().sum::<f64>() < 0.0 {
                    c.iter_mut().for_each(|x| *x = -*x);
                }
                best = (theta, res, c);
            }
            if res <= rel_tol || bnext <= 1e-14 * theta.abs().max(1e-300) {
                return Ok(EpsilonQ {
                    value: best.0,
                    iterations: m,
                    residual: best.1,
                    coefficients: best.2,
                });
            }
        }
        if bnext == 0.0 {
            break;
        }
        beta.push(bnext);
        basis.push(w.into_iter().map(|x| x / bnext).collect());
    }
    if best.1 <= rel_tol {
        return Ok(EpsilonQ {
            value: best.0,
            iterations: alpha.len(),
            residual: best.1,
            coefficients: best.2,
        });
    }
    Err(Error::EigenNotConverged {
        residual: best.1,
        iterations: alpha.len(),
    })
}

/// `<v, Q v> / <v, v>` for a dense vector field.
pub fn rayleigh_quotient(grid: &Grid, fields: &[SparseField], v: &VectorField) -> Result<f64> {
    if v.key != grid.key() {
        return Err(Error::GridMismatch);
    }
    let h2 = grid.h() * grid.h();
    let num: f64 = fields.iter().map(|f| (h2 * f.gather(&v.values)).powi(2)).sum();
    let den = grid.dot_vectors(v, v)?;
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// `sum_j c_j u_j` as a dense field.
pub fn combine(grid: &Grid, fields: &[SparseField], c: &[f64]) -> VectorField {
    let mut out = grid.zero_vectors();
    for (f, &cj) in fields.iter().zip(c) {
        f.scatter_add(cj, &mut out.values);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceDiagnostics {
    #[serde(skip)]
    pub qxx: Vec<Sym2>,
    #[serde(skip)]
    pub q: Option<ScalarField>,
    pub epsilon_q: f64,
    pub epsilon_q_residual: f64,
    /// `trace(gram) = sum_j ||u_j||^2`.
    pub trace: f64,
    /// `sum_nodes h^2 trace(Q(x, x))`.
    pub trace_from_qxx: f64,
    pub min_q_inner: f64,
    pub inner_delta: f64,
    #[serde(skip)]
    pub gram: Option<DMatrix<f64>>,
}

/// Full diagnostics; `q` statistics are taken over `D_{inner_delta}`.
pub fn diagnostics(
    grid: &Grid,
    fields: &[SparseField],
    inner_delta: f64,
    dense_gram: bool,
) -> Result<CovarianceDiagnostics> {
    let qxx = pointwise_q(grid, fields);
    let h2 = grid.h() * grid.h();
    let q = {
        let mut out = grid.zeros();
        for (o, a) in out.values.iter_mut().zip(&qxx) {
            *o = sym2_min_eigenvalue(*a).max(0.0);
        }
        out
    };
    let mask = grid.inner_layer_mask(inner_delta);
    let min_q_inner = q
        .values
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold(f64::INFINITY, |acc, (v, _)| acc.min(*v));
    let trace_from_qxx = h2 * grid.interior_nodes().iter().map(|&k| qxx[k][0] + qxx[k][2]).sum::<f64>();
    let trace = fields.iter().map(|f| h2 * f.sum_sq()).sum();
    let (epsilon_q, epsilon_q_residual, gram) = if dense_gram {
        let g = gram_dense(grid, fields, None);
        (top_eigenvalue_dense(&g), 0.0, Some(g))
    } else {
        let e = epsilon_q(grid, fields, 1e-8)?;
        (e.value, e.residual, None)
    };
    Ok(CovarianceDiagnostics {
        qxx,
        q: Some(q),
        epsilon_q,
        epsilon_q_residual,
        trace,
        trace_from_qxx,
        min_q_inner,
        inner_delta,
        gram,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassOrthogonality {
    pub pairs_checked: usize,
    pub max_abs_dot: f64,
}

/// Evaluates `<u_i, u_j>` for every pair of same-class centres that are
/// lattice neighbours within the class (distance `M/N` along an axis or diagonal).
pub fn same_class_orthogonality(basis: &VortexBasis) -> ClassOrthogonality {
    use std::collections::HashMap;
    let lat = &basis.lattice;
    let m = lat.m as i64;
    let index: HashMap<(i64, i64), usize> = lat.indices.iter().enumerate().map(|(i, &ij)| (ij, i)).collect();
    let h2 = basis.h * basis.h;
    let offsets = [(m, 0), (0, m), (m, m), (m, -m)];
    let (pairs, worst) = lat
        .indices
        .par_iter()
        .enumerate()
        .map(|(i, &(k, hh))| {
            let mut pairs = 0usize;
            let mut worst = 0.0_f64;
            for (dk, dh) in offsets {
                if let Some(&j) = index.get(&(k + dk, hh + dh)) {
                    debug_assert_eq!(lat.classes[i], lat.classes[j]);
                    pairs += 1;
                    worst = worst.max((h2 * basis.fields[i].raw_dot(&basis.fields[j])).abs());
                }
            }
            (pairs, worst)
        })
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
    ClassOrthogonality {
        pairs_checked: pairs,
        max_abs_dot: worst,
    }
}

/// Continuum `Q(x, x) = Gamma^2 sum_z w_r(x - z) (x) w_r(x - z)` from the exact profile.
pub fn continuum_q_at(domain: Domain, cfg: &VortexConfig, profile: &VortexProfile, x: [f64; 2]) -> Sym2 {
    let reach = cfg.r * profile.support_radius();
    let n = cfg.n as f64;
    let k_lo = ((x[0] - reach) * n).floor() as i64;
    let k_hi = ((x[0] + reach) * n).ceil() as i64;
    let h_lo = ((x[1] - reach) * n).floor() as i64;
    let h_hi = ((x[1] + reach) * n).ceil() as i64;
    let g2 = cfg.gamma * cfg.gamma;
    let mut e = [0.0; 3];
    for hh in h_lo..=h_hi {
        for k in k_lo..=k_hi {
            let z = [k as f64 / n, hh as f64 / n];
            let d = [x[0] - z[0], x[1] - z[1]];
            if d[0].hypot(d[1]) >= reach {
                continue;
            }
            if domain.boundary_distance(z) <= cfg.delta * (1.0 + 1e-12) {
                continue;
            }
            let w = profile.w_r(d, cfg.r);
            e[0] += g2 * w[0] * w[0];
            e[1] += g2 * w[0] * w[1];
            e[2] += g2 * w[1] * w[1];
        }
    }
    e
}

/// Whether every unit direction `v` admits a centre `z` with
/// `1/(2N) <= |x - z| < 2/N` and `|v . (x - z)^perp| >= |x - z| / 4`.
pub fn geometric_condition(domain: Domain, n: usize, delta: f64, x: [f64; 2]) -> bool {
    let nf = n as f64;
    let (lo, hi) = (0.5 / nf, 2.0 / nf);
    let mut angles = Vec::new();
    let k0 = (x[0] * nf).floor() as i64;
    let h0 = (x[1] * nf).floor() as i64;
    for hh in (h0 - 3)..=(h0 + 3) {
        for k in (k0 - 3)..=(k0 + 3) {
            let z = [k as f64 / nf, hh as f64 / nf];
            let d = [x[0] - z[0], x[1] - z[1]];
            let dist = d[0].hypot(d[1]);
            if dist < lo || dist >= hi || domain.boundary_distance(z) <= delta * (1.0 + 1e-12) {
                continue;
            }
            angles.push(d[1].atan2(d[0]).rem_euclid(std::f64::consts::PI));
        }
    }
    // v fails for centre z iff v lies within asin(1/4) of the line through x - z;
    // the directions failing for every z form the intersection of those bands.
    if angles.is_empty() {
        return false;
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pi = std::f64::consts::PI;
    let mut max_gap = angles[0] + pi - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    let spread = pi - max_gap;
    spread >= 2.0 * 0.25f64.asin()
}

/// Dense field list to sparse form.
pub fn sparse_family(grid: &Grid, fields: &[VectorField]) -> Result<Vec<SparseField>> {
    fields.iter().map(|u| SparseField::from_dense(grid, u)).collect()
}
