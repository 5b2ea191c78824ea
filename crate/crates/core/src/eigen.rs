//! Principal eigenvalues.
//!
//! * [`principal_eigenvalue`]: smallest eigenvalue of `-A` for an assembled
//!   diffusion operator, by inverse iteration with CG inner solves.
//! * [`radial_lambda`]: the radial problem on the unit ball
//!   `-(a r^{d-1} f')' = lambda r^{d-1} f`, `a = kappa + sigma2 1_{r < 1-delta}`,
//!   `f'(0)` natural and `f(1) = 0`, by linear finite elements on a mesh with
//!   a node at the coefficient jump.
//! * [`theorem_bounds`]: the closed-form lower bounds for the layered problem.

use serde::Serialize;

use crate::elliptic::{DiscreteOperator, OperatorKind};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::sparse::{dot, norm, pcg, CgOptions};

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub lambda: f64,
    /// Unit L2 norm, sign chosen so that the sum is nonnegative.
    pub eigenvector: ScalarField,
    pub iterations: usize,
    /// `||(-A) v - lambda v|| / lambda`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iter: 2000,
        }
    }
}

pub fn principal_eigenvalue(grid: &Grid, op: &DiscreteOperator) -> Result<EigenResult> {
    principal_eigenvalue_with(grid, op, EigenOptions::default())
}

/// Inverse power iteration on `-A`, shifted to just below the Rayleigh
/// quotient once the residual is below `1e-4`.
pub fn principal_eigenvalue_with(grid: &Grid, op: &DiscreteOperator, opts: EigenOptions) -> Result<EigenResult> {
    if op.kind != OperatorKind::Diffusion {
        return Err(Error::InvalidParameter("principal eigenvalue needs a diffusion operator".into()));
    }
    if op.key != grid.key() {
        return Err(Error::GridMismatch);
    }
    let n = op.dim();
    let h = grid.h();
    let neg = op.matrix.scale(-1.0);
    let l2 = |v: &[f64]| h * norm(v);
    let mut v = vec![1.0; n];
    let s = l2(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut kv = neg.apply(&v);
    let mut lambda = h * h * dot(&v, &kv);
    let mut shift = 0.0;
    let mut shifted = neg.clone();
    let mut x = v.iter().map(|a| a / lambda).collect::<Vec<f64>>();
    let cg = CgOptions {
        rel_tol: 1e-12,
        max_iter: 50_000,
    };
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        pcg(&shifted, &v, &mut x, cg)?;
        let s = l2(&x);
        v.iter_mut().zip(&x).for_each(|(a, b)| *a = b / s);
        kv = neg.apply(&v);
        let previous = lambda;
        lambda = h * h * dot(&v, &kv);
        let r: Vec<f64> = kv.iter().zip(&v).map(|(a, b)| a - lambda * b).collect();
        residual = l2(&r) / lambda;
        let change = (lambda - previous).abs() / lambda;
        let stalled = it >= 3 && change <= 1e-12 && residual <= 1e-5;
        if residual <= opts.tol || stalled {
            return Ok(finish(grid, v, lambda, it, residual));
        }
        let target = if residual < 1e-4 { lambda * (1.0 - 1e-3) } else { 0.0 };
        if target > shift {
            shift = target;
            shifted = neg.scaled_plus_identity(1.0, -shift);
        }
        let gap = lambda - shift;
        x.iter_mut().zip(&v).for_each(|(a, b)| *a = b / gap);
    }
    Err(Error::EigenNotConverged {
        residual,
        iterations: opts.max_iter,
    })
}

fn finish(grid: &Grid, mut v: Vec<f64>, lambda: f64, iterations: usize, residual: f64) -> EigenResult {
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    EigenResult {
        lambda,
        eigenvector: grid.scalar_from_interior(&v),
        iterations,
        residual,
    }
}

/// Rayleigh quotient `<v, -A v> / <v, v>`.
pub fn rayleigh_quotient(op: &DiscreteOperator, v: &[f64]) -> f64 {
    -dot(v, &op.apply(v)) / dot(v, v)
}

/// Surface measure of the unit sphere in `R^d`.
pub fn sphere_measure(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * sphere_measure(d - 2) / (d - 2) as f64,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialProblem {
    pub kappa: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub d: usize,
    pub n_cells: usize,
    /// Explicit mesh `0 = r_0 < ... < r_n = 1`; must contain `1 - delta`.
    pub mesh: Option<Vec<f64>>,
}

impl RadialProblem {
    pub fn new(kappa: f64, sigma2: f64, delta: f64, d: usize, n_cells: usize) -> Self {
        RadialProblem {
            kappa,
            sigma2,
            delta,
            d,
            n_cells,
            mesh: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialEigen {
    pub lambda: f64,
    pub radii: Vec<f64>,
    /// Nodal minimizer with `f(1) = 0` and `int_0^1 f^2 r^{d-1} dr = 1 / omega_d`.
    pub f: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Aligned mesh: uniform on `[0, 1-delta]` and on `[1-delta, 1]`.
pub fn aligned_mesh(n_cells: usize, delta: f64) -> Vec<f64> {
    let n = n_cells.max(8);
    let min_side = (n / 4).clamp(1, 64);
    let n_out = ((n as f64 * delta).round() as usize).clamp(min_side, n - min_side);
    let n_in = n - n_out;
    let jump = 1.0 - delta;
    let mut r: Vec<f64> = (0..=n_in).map(|i| jump * i as f64 / n_in as f64).collect();
    r.extend((1..=n_out).map(|i| jump + delta * i as f64 / n_out as f64));
    r[n] = 1.0;
    r
}

/// Solves the tridiagonal system `(lower, diag, upper) x = b` (Thomas).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = b[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / m;
        }
        d[i] = (b[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

struct Tridiag {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiag {
    fn zeros(n: usize) -> Self {
        Tridiag {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    fn combine(&self, other: &Tridiag, s: f64) -> Tridiag {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - s * y).collect();
        Tridiag {
            lower: f(&self.lower, &other.lower),
            diag: f(&self.diag, &other.diag),
            upper: f(&self.upper, &other.upper),
        }
    }
}

pub fn radial_lambda(p: &RadialProblem) -> Result<RadialEigen> {
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {} outside (0, 1)", p.delta)));
    }
    if p.d == 0 || !(p.kappa > 0.0) || !(p.sigma2 >= 0.0) {
        return Err(Error::InvalidParameter("need d >= 1, kappa > 0, sigma2 >= 0".into()));
    }
    let jump = 1.0 - p.delta;
    let r = match &p.mesh {
        Some(m) => {
            let ok = m.len() >= 3
                && m[0] == 0.0
                && (m[m.len() - 1] - 1.0).abs() < 1e-15
                && m.windows(2).all(|w| w[1] > w[0]);
            if !ok {
                return Err(Error::InvalidParameter("radial mesh must increase from 0 to 1".into()));
            }
            if !m.iter().any(|&x| (x - jump).abs() <= 1e-12) {
                return Err(Error::MeshNotAligned(jump));
            }
            m.clone()
        }
        None => aligned_mesh(p.n_cells, p.delta),
    };
    let ncell = r.len() - 1;
    let d = p.d as i32;
    // unknowns are nodes 0..ncell-1; node ncell carries f = 0
    let n = ncell;
    let mut k = Tridiag::zeros(n);
    let mut m = Tridiag::zeros(n);
    let mut element_k = Vec::with_capacity(ncell);
    let gauss = [
        (-(0.6f64).sqrt(), 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        ((0.6f64).sqrt(), 5.0 / 9.0),
    ];
    for e in 0..ncell {
        let (a, b) = (r[e], r[e + 1]);
        let len = b - a;
        let coef = if 0.5 * (a + b) < jump { p.kappa + p.sigma2 } else { p.kappa };
        let kw = coef * (b.powi(d) - a.powi(d)) / (d as f64 * len * len);
        element_k.push(kw);
        let mut me = [[0.0; 2]; 2];
        for &(x, w) in &gauss {
            let rr = 0.5 * (a + b) + 0.5 * len * x;
            let wt = 0.5 * len * w * rr.powi(d - 1);
            let phi = [(b - rr) / len, (rr - a) / len];
            for i in 0..2 {
                for j in 0..2 {
                    me[i][j] += wt * phi[i] * phi[j];
                }
            }
        }
        let ke = [[kw, -kw], [-kw, kw]];
        let idx = [e, e + 1];
        for i in 0..2 {
            if idx[i] >= n {
                continue;
            }
            for j in 0..2 {
                if idx[j] >= n {
                    continue;
                }
                let (row, col) = (idx[i], idx[j]);
                let (kt, mt) = (ke[i][j], me[i][j]);
                if row == col {
                    k.diag[row] += kt;
                    m.diag[row] += mt;
                } else if col == row + 1 {
                    k.upper[row] += kt;
                    m.upper[row] += mt;
                } else {
                    k.lower[row] += kt;
                    m.lower[row] += mt;
                }
            }
        }
    }
    let mnorm = |v: &[f64]| dot(v, &m.apply(v)).sqrt();
    // energy from nodal differences, free of the cancellation in v'Kv
    let energy = |v: &[f64]| {
        element_k
            .iter()
            .enumerate()
            .map(|(e, kw)| {
                let hi = if e + 1 < n { v[e + 1] } else { 0.0 };
                kw * (hi - v[e]).powi(2)
            })
            .sum::<f64>()
    };
    let mut v = vec![1.0; n];
    let s = mnorm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut lambda;
    let mut previous = f64::INFINITY;
    let mut shifted = k.combine(&m, 0.0);
    let mut shift = 0.0;
    let mut residual = f64::INFINITY;
    let max_iter = 20_000;
    for it in 1..=max_iter {
        let mv = m.apply(&v);
        let x = thomas(&shifted.lower, &shifted.diag, &shifted.upper, &mv);
        let s = mnorm(&x);
        v = x.into_iter().map(|a| a / s).collect();
        let kv = k.apply(&v);
        let mv = m.apply(&v);
        lambda = energy(&v);
        let res: Vec<f64> = kv.iter().zip(&mv).map(|(a, b)| a - lambda * b).collect();
        residual = norm(&res) / (lambda * norm(&mv));
        let change = (lambda - previous).abs() / lambda;
        let stalled = it >= 3 && change <= 1e-11;
        previous = lambda;
        if residual <= 1e-11 || stalled {
            if v[0] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let scale = 1.0 / sphere_measure(p.d).sqrt();
            let mut f: Vec<f64> = v.iter().map(|x| x * scale).collect();
            f.push(0.0);
            return Ok(RadialEigen {
                lambda,
                radii: r,
                f,
                iterations: it,
                residual,
            });
        }
        if residual < 1e-4 || change < 1e-6 {
            let target = lambda * (1.0 - 1e-3);
            if target > shift {
                shift = target;
                shifted = k.combine(&m, shift);
            }
        }
    }
    Err(Error::EigenNotConverged {
        residual,
        iterations: max_iter,
    })
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct TheoremBounds {
    /// `kappa d sigma2 / (kappa + delta sigma2)`.
    pub bound_asym: f64,
    /// `(d/2) min(sigma2, kappa / delta)`.
    pub bound_min: f64,
}

pub fn theorem_bounds(kappa: f64, sigma2: f64, delta: f64, d: usize) -> TheoremBounds {
    let d = d as f64;
    TheoremBounds {
        bound_asym: kappa * d * sigma2 / (kappa + delta * sigma2),
        bound_min: 0.5 * d * sigma2.min(kappa / delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{assemble_diffusion, DiffusivityTensor};
    use crate::grid::{build_grid, Domain};
    use std::f64::consts::PI;

    #[test]
    fn sphere_measures() {
        assert_eq!(sphere_measure(1), 2.0);
        assert!((sphere_measure(2) - 2.0 * PI).abs() < 1e-15);
        assert!((sphere_measure(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_measure(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn thomas_solves() {
        let lower = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, 0.0];
        let x = thomas(&lower, &diag, &upper, &[1.0, 0.0, 1.0]);
        for (a, b) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interval_case_is_quarter_pi_squared() {
        let e = radial_lambda(&RadialProblem::new(0.7, 0.0, 0.3, 1, 2048)).unwrap();
        let want = 0.7 * PI * PI / 4.0;
        assert!((e.lambda - want).abs() < 1e-5 * want);
    }

    #[test]
    fn minimizer_is_monotone_and_normalized() {
        let e = radial_lambda(&RadialProblem::new(0.01, 16.0, 0.25, 2, 1024)).unwrap();
        for w in e.f.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_eq!(*e.f.last().unwrap(), 0.0);
        let mut acc = 0.0;
        for (i, w) in e.radii.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            // Simpson on r f^2 over the element
            let fm = 0.5 * (e.f[i] + e.f[i + 1]);
            let m = 0.5 * (a + b);
            acc += (b - a) / 6.0 * (a * e.f[i].powi(2) + 4.0 * m * fm * fm + b * e.f[i + 1].powi(2));
        }
        assert!((acc * 2.0 * PI - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unaligned_mesh_rejected() {
        let mut p = RadialProblem::new(1.0, 1.0, 0.3, 2, 0);
        p.mesh = Some((0..=10).map(|i| i as f64 / 10.0).collect());
        p.delta = 0.35;
        assert!(matches!(radial_lambda(&p), Err(Error::MeshNotAligned(_))));
        p.delta = 0.3;
        assert!(radial_lambda(&p).is_ok());
    }

    #[test]
    fn bounds_crossover() {
        let (kappa, delta) = (0.01, 0.1);
        let sigma2 = kappa / delta;
        let b = theorem_bounds(kappa, sigma2, delta, 2);
        assert!((b.bound_asym - sigma2).abs() < 1e-15);
        assert!((b.bound_min - sigma2).abs() < 1e-15);
    }

    #[test]
    fn square_laplacian_eigenvalue() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 32.0).unwrap();
        let op = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, 1.0)).unwrap();
        let e = principal_eigenvalue(&g, &op).unwrap();
        let h = g.h();
        let exact_discrete = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((e.lambda - exact_discrete).abs() < 1e-9 * exact_discrete);
        assert!(e.residual <= 1e-8);
        assert!(e.eigenvector.values.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn constant_tensor_scales_eigenvalue() {
        let g = build_grid(Domain::UnitDisk, 1.0 / 16.0).unwrap();
        let one = principal_eigenvalue(&g, &assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, 1.0)).unwrap()).unwrap();
        let c = 0.01 + 0.5 * 3.0;
        let sc = principal_eigenvalue(&g, &assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, c)).unwrap()).unwrap();
        assert!((sc.lambda - c * one.lambda).abs() < 1e-8 * sc.lambda);
    }
}
