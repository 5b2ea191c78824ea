//! Homogeneous isotropic Kraichnan covariance
//! `Q(z) = sigma2 k0^zeta int_{k0 <= |k| <= k1} (I - k^ k^) e^{i k.z} |k|^{-d-zeta} dk`
//! with its mixing and covariance-operator bounds.

use crate::error::{Error, Result};
use crate::eigen::sphere_measure;
use crate::quad::Rule;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KraichnanParams {
    pub sigma2: f64,
    pub zeta: f64,
    pub k0: f64,
    /// May be `f64::INFINITY` when `zeta > 0`.
    pub k1: f64,
    pub d: usize,
}

impl KraichnanParams {
    pub fn new(sigma2: f64, zeta: f64, k0: f64, k1: f64, d: usize) -> Self {
        KraichnanParams { sigma2, zeta, k0, k1, d }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.sigma2 > 0.0) || !(self.k0 > 0.0) {
            return bad("sigma2 and k0 must be positive".into());
        }
        if !(self.d == 2 || self.d == 3) {
            return bad(format!("dimension {} unsupported (2 or 3)", self.d));
        }
        if !(self.k1 > self.k0) {
            return bad(format!("need k0 < k1, got k0 = {}, k1 = {}", self.k0, self.k1));
        }
        if !self.zeta.is_finite() || self.zeta < -(self.d as f64) {
            return bad(format!("zeta = {} below -d is not integrable", self.zeta));
        }
        if self.k1.is_infinite() && self.zeta <= 0.0 {
            return bad(format!("k1 = infinity needs zeta > 0, got {}", self.zeta));
        }
        Ok(())
    }

    /// `k0^zeta int_{k0}^{k1} k^{-1-zeta} dk`: `(1 - (k0/k1)^zeta)/zeta`, or `ln(k1/k0)` at `zeta = 0`.
    pub fn radial_factor(&self) -> f64 {
        if self.zeta == 0.0 {
            (self.k1 / self.k0).ln()
        } else if self.k1.is_infinite() {
            1.0 / self.zeta
        } else {
            -(self.zeta * (self.k0 / self.k1).ln()).exp_m1() / self.zeta
        }
    }
}

/// Angular integrals of the projector against `cos(x k^.e)`: `(parallel, perpendicular)`
/// components relative to the unit vector `e`.
fn angular_moments(d: usize, x: f64) -> (f64, f64) {
    if d == 2 {
        // int_0^{2 pi} sin^2 t cos(x cos t) dt = pi (J0 + J2), cos^2 t gives pi (J0 - J2)
        let (j0, j2) = (libm::jn(0, x), libm::jn(2, x));
        (PI * (j0 + j2), PI * (j0 - j2))
    } else {
        let n = (x.abs() as usize + 24).min(4096);
        let rule = Rule::new(n);
        let mut par = 0.0;
        let mut perp = 0.0;
        for (mu, w) in rule.mapped(-1.0, 1.0) {
            let c = (x * mu).cos();
            par += w * (1.0 - mu * mu) * c;
            perp += w * (1.0 + mu * mu) * c;
        }
        (2.0 * PI * par, PI * perp)
    }
}

/// Evaluates `Q(z)` as a `d x d` matrix.
///
/// Gauss-Legendre panels in `|k|` (at most half an oscillation wide) times closed-form
/// angular moments. An infinite `k1` is truncated where the tail is below `1e-9`
/// of the full radial factor.
pub fn covariance_at(p: &KraichnanParams, z: &[f64]) -> Result<DMatrix<f64>> {
    p.validate()?;
    let d = p.d;
    if z.len() != d || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("z must be a finite point of dimension d".into()));
    }
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (par, perp) = radial_integral(p, r)?;
    let mut q = DMatrix::identity(d, d) * perp;
    if r > 0.0 {
        for i in 0..d {
            for j in 0..d {
                q[(i, j)] += (par - perp) * z[i] * z[j] / (r * r);
            }
        }
    }
    Ok(q)
}

fn radial_integral(p: &KraichnanParams, r: f64) -> Result<(f64, f64)> {
    let kmax = if p.k1.is_finite() {
        p.k1
    } else {
        let tail = 1e-9 * p.radial_factor() * p.zeta;
        p.k0 * tail.powf(-1.0 / p.zeta)
    };
    let rule = Rule::new(10);
    let half_period = if r > 0.0 { PI / r } else { f64::INFINITY };
    let (mut par, mut perp) = (0.0, 0.0);
    let mut a = p.k0;
    let mut panels = 0usize;
    while a < kmax {
        let b = (a + a.min(half_period)).min(kmax);
        for (k, w) in rule.mapped(a, b) {
            let (pa, pe) = angular_moments(p.d, k * r);
            let weight = w * (p.k0 / k).powf(p.zeta) / k;
            par += weight * pa;
            perp += weight * pe;
        }
        a = b;
        panels += 1;
        if panels > 2_000_000 {
            return Err(Error::InvalidParameter(format!(
                "shell too oscillatory at |z| = {r}: more than 2e6 radial panels"
            )));
        }
    }
    if r == 0.0 && p.k1.is_infinite() {
        // the angular moments are constant at the origin, so the tail is exact
        let (pa, pe) = angular_moments(p.d, 0.0);
        let tail = (p.k0 / kmax).powf(p.zeta) / p.zeta;
        par += tail * pa;
        perp += tail * pe;
    }
    Ok((p.sigma2 * par, p.sigma2 * perp))
}

/// Measure of the band `{k^ : |k^ . e| <= 1/2}` on the unit sphere.
pub fn band_measure(d: usize) -> f64 {
    match d {
        2 => 2.0 * PI / 3.0,
        3 => 2.0 * PI,
        _ => f64::NAN,
    }
}

/// `(3/4) sigma2 C'` with `C'` the band measure times the radial factor.
pub fn q_lower_bound(p: &KraichnanParams) -> f64 {
    0.75 * p.sigma2 * band_measure(p.d) * p.radial_factor()
}

/// Monte Carlo estimate of the band fraction, for checking [`band_measure`].
pub fn band_fraction_monte_carlo(d: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let c = match d {
            2 => rng.gen_range(0.0..2.0 * PI).cos(),
            // the first coordinate of a uniform point on the 2-sphere is uniform on [-1, 1]
            _ => rng.gen_range(-1.0..1.0),
        };
        if c.abs() <= 0.5 {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}

pub fn eps_q_upper_bound(p: &KraichnanParams) -> f64 {
    p.sigma2 * p.k0.powi(-(p.d as i32))
}

/// Spectral density `sigma2 k0^zeta |k|^{-d-zeta}` inside the shell, else 0.
pub fn spectral_density(p: &KraichnanParams, k: f64) -> f64 {
    if k < p.k0 || k > p.k1 {
        0.0
    } else {
        p.sigma2 * (p.k0 / k).powf(p.zeta) * k.powi(-(p.d as i32))
    }
}

/// Leray projector `I - k^ k^` applied to `v`.
pub fn project(k: &[f64], v: &[f64]) -> Vec<f64> {
    let k2: f64 = k.iter().map(|x| x * x).sum();
    if k2 == 0.0 {
        return v.to_vec();
    }
    let kv: f64 = k.iter().zip(v).map(|(a, b)| a * b).sum();
    v.iter().zip(k).map(|(vi, ki)| vi - kv * ki / k2).collect()
}

/// Covariance operator on the periodic box `[0, 2 pi)^d` with integer modes.
#[derive(Debug, Clone, Serialize)]
pub struct TorusCheck {
    pub grid: usize,
    /// Smallest lattice radius inside the shell.
    pub k0_snapped: f64,
    /// Largest lattice radius inside the shell (and below Nyquist).
    pub k1_snapped: f64,
    pub modes: usize,
    /// Max of the multiplier over shell modes.
    pub top_mode: f64,
    /// Top eigenvalue by power iteration with FFTs (2D only, else `None`).
    pub top_fft: Option<f64>,
}

fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

pub fn torus_check(p: &KraichnanParams, grid: usize, power_iters: usize, seed: u64) -> Result<TorusCheck> {
    p.validate()?;
    if grid < 4 {
        return Err(Error::InvalidParameter("torus grid needs at least 4 points".into()));
    }
    let nyq = (grid / 2) as f64;
    let mut k0s = f64::INFINITY;
    let mut k1s: f64 = 0.0;
    let mut top: f64 = 0.0;
    let mut modes = 0usize;
    let total = grid.pow(p.d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut k2 = 0.0;
        let mut inside_box = true;
        for _ in 0..p.d {
            let f = signed_freq(rem % grid, grid);
            rem /= grid;
            if f.abs() >= nyq {
                inside_box = false;
            }
            k2 += f * f;
        }
        let k = k2.sqrt();
        if !inside_box || k < p.k0 || k > p.k1 {
            continue;
        }
        modes += 1;
        k0s = k0s.min(k);
        k1s = k1s.max(k);
        top = top.max(spectral_density(p, k));
    }
    if modes == 0 {
        return Err(Error::InvalidParameter("no lattice modes inside the shell".into()));
    }
    let top_fft = if p.d == 2 {
        Some(torus_power_iteration(p, grid, power_iters, seed))
    } else {
        None
    };
    Ok(TorusCheck {
        grid,
        k0_snapped: k0s,
        k1_snapped: k1s,
        modes,
        top_mode: top,
        top_fft,
    })
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex64], n: usize, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
    if inverse {
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }
}

/// Power iteration for the convolution operator with symbol
/// `spectral_density (I - k^ k^)` on real periodic vector fields.
fn torus_power_iteration(p: &KraichnanParams, n: usize, iters: usize, seed: u64) -> f64 {
    let mut planner = FftPlanner::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<Vec<Complex64>> = (0..2)
        .map(|_| (0..n * n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect())
        .collect();
    let nyq = (n / 2) as f64;
    let sq = |u: &[Vec<Complex64>]| u.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>();
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let before = sq(&u);
        for c in u.iter_mut() {
            fft2(&mut planner, c, n, false);
        }
        for i in 0..n {
            for j in 0..n {
                let k = [signed_freq(i, n), signed_freq(j, n)];
                let m = if k[0].abs() >= nyq || k[1].abs() >= nyq {
                    0.0
                } else {
                    spectral_density(p, (k[0] * k[0] + k[1] * k[1]).sqrt())
                };
                let idx = i * n + j;
                let v = [u[0][idx], u[1][idx]];
                let k2 = k[0] * k[0] + k[1] * k[1];
                let kv = if k2 > 0.0 { (v[0] * k[0] + v[1] * k[1]) / k2 } else { Complex64::new(0.0, 0.0) };
                u[0][idx] = (v[0] - kv * k[0]) * m;
                u[1][idx] = (v[1] - kv * k[1]) * m;
            }
        }
        for c in u.iter_mut() {
            fft2(&mut planner, c, n, true);
            c.iter_mut().for_each(|z| z.im = 0.0);
        }
        let after = sq(&u);
        if after == 0.0 {
            return 0.0;
        }
        lambda = (after / before).sqrt();
        let s = 1.0 / after.sqrt();
        u.iter_mut().flatten().for_each(|c| *c *= s);
    }
    lambda
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `zeta > 0`: energy at small wavenumbers, `k1` may be infinite.
    UVcascade,
    /// `-d <= zeta <= 0`: needs finite `k1`.
    IRcascade,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeThresholds {
    /// Required floor on the mixing bound.
    pub q_min: f64,
    /// Allowed ceiling on the covariance-operator bound.
    pub eps_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub params: KraichnanParams,
    pub q_lower: f64,
    pub eps_q_upper: f64,
    pub regime: Regime,
    /// `zeta = 0, d = 2`.
    pub enstrophy_boundary: bool,
    /// `zeta = -d`.
    pub white_in_space: bool,
    /// `q_lower >= q_min` and `eps_q_upper <= eps_max`.
    pub favourable: bool,
}

pub fn regime_report(p: &KraichnanParams, th: RegimeThresholds) -> Result<RegimeReport> {
    p.validate()?;
    let q_lower = q_lower_bound(p);
    let eps_q_upper = eps_q_upper_bound(p);
    Ok(RegimeReport {
        params: *p,
        q_lower,
        eps_q_upper,
        regime: if p.zeta > 0.0 { Regime::UVcascade } else { Regime::IRcascade },
        enstrophy_boundary: p.zeta == 0.0 && p.d == 2,
        white_in_space: p.zeta == -(p.d as f64),
        favourable: q_lower >= th.q_min && eps_q_upper <= th.eps_max,
    })
}

/// Trace of `Q(0)`: `sigma2 |S^{d-1}| (d-1) radial_factor`.
pub fn trace_at_origin(p: &KraichnanParams) -> f64 {
    p.sigma2 * sphere_measure(p.d) * (p.d as f64 - 1.0) * p.radial_factor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_at_origin() {
        let p = KraichnanParams::new(2.0, 4.0 / 3.0, 3.0, 40.0, 2);
        let q = covariance_at(&p, &[0.0, 0.0]).unwrap();
        let expect = 2.0 * PI * (1.0 - (3.0f64 / 40.0).powf(4.0 / 3.0)) / (4.0 / 3.0);
        assert!((q[(0, 0)] - expect).abs() < 1e-12 * expect);
        assert_eq!(q[(0, 1)], 0.0);
        let q3 = covariance_at(&KraichnanParams::new(1.0, 0.5, 1.0, f64::INFINITY, 3), &[0.0; 3]).unwrap();
        assert!((q3.trace() - 8.0 * PI * 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_branch_at_zero_zeta() {
        let p = KraichnanParams::new(1.0, 0.0, 1.0, std::f64::consts::E, 2);
        assert!((p.radial_factor() - 1.0).abs() < 1e-15);
        let near = KraichnanParams::new(1.0, 1e-9, 1.0, std::f64::consts::E, 2);
        assert!((near.radial_factor() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn parameter_rules() {
        assert!(KraichnanParams::new(1.0, 0.0, 1.0, f64::INFINITY, 2).validate().is_err());
        assert!(KraichnanParams::new(1.0, -2.5, 1.0, 5.0, 2).validate().is_err());
        assert!(KraichnanParams::new(1.0, -2.0, 1.0, 5.0, 2).validate().is_ok());
        assert!(KraichnanParams::new(1.0, 1.0, 2.0, 2.0, 2).validate().is_err());
    }

    #[test]
    fn symmetric_and_even_off_origin() {
        let p = KraichnanParams::new(1.0, 4.0 / 3.0, 1.0, 20.0, 2);
        let a = covariance_at(&p, &[0.3, -0.2]).unwrap();
        let b = covariance_at(&p, &[-0.3, 0.2]).unwrap();
        assert!((&a - b.transpose()).norm() < 1e-14);
        assert!((a[(0, 1)] - a[(1, 0)]).abs() < 1e-14);
        let q0 = covariance_at(&p, &[0.0, 0.0]).unwrap();
        assert!(a.trace() < q0.trace());
    }

    #[test]
    fn three_dimensional_angular_moments() {
        // int_{S^2} (I - k^k^) cos(x k^.e): parallel 8 pi (sin x - x cos x)/x^3, see spherical Bessel j1
        let x: f64 = 2.7;
        let (par, _) = angular_moments(3, x);
        let expect = 8.0 * PI * (x.sin() - x * x.cos()) / x.powi(3);
        assert!((par - expect).abs() < 1e-12);
    }

    #[test]
    fn band_fraction_is_one_third_in_two_dimensions() {
        let f = band_fraction_monte_carlo(2, 200_000, 5);
        assert!((f - 1.0 / 3.0).abs() < 5e-3);
        let f3 = band_fraction_monte_carlo(3, 200_000, 6);
        assert!((f3 - 0.5).abs() < 5e-3);
        assert!((band_measure(2) / (2.0 * PI) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regimes() {
        let th = RegimeThresholds { q_min: 0.0, eps_max: f64::INFINITY };
        let k41 = regime_report(&KraichnanParams::new(1.0, 4.0 / 3.0, 1.0, f64::INFINITY, 2), th).unwrap();
        assert_eq!(k41.regime, Regime::UVcascade);
        let ens = regime_report(&KraichnanParams::new(1.0, 0.0, 1.0, 10.0, 2), th).unwrap();
        assert!(ens.enstrophy_boundary);
        assert_eq!(ens.regime, Regime::IRcascade);
        let white = regime_report(&KraichnanParams::new(1.0, -2.0, 1.0, 10.0, 2), th).unwrap();
        assert!(white.white_in_space);
        assert_eq!(eps_q_upper_bound(&KraichnanParams::new(1.0, 1.0, 10.0, 20.0, 2)), 1e-2);
    }

    #[test]
    fn projector_annihilates_wavevector() {
        let k = [3.0, -4.0];
        let pk = project(&k, &k);
        assert!(pk.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn torus_fft_matches_mode_maximum() {
        let p = KraichnanParams::new(1.0, 4.0 / 3.0, 2.5, 9.0, 2);
        let c = torus_check(&p, 32, 300, 1).unwrap();
        assert_eq!(c.k0_snapped, 8f64.sqrt());
        let fft = c.top_fft.unwrap();
        assert!((fft - c.top_mode).abs() < 1e-6 * c.top_mode);
        assert!(c.top_mode <= eps_q_upper_bound(&p));
    }
}
