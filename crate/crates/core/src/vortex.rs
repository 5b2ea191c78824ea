//! Vortex-patch transport noise.
//!
//! Centres sit on the lattice `Z^2 / N` inside `D_delta` and are split into
//! `M^2` classes by residues mod `M`. Each centre carries the field
//! `Gamma * w_r(x - z)` with `w_r(x) = w(x / r) / r`, `w = grad^perp psi` and
//! `psi = psi0 * f_eps`, where `psi0 = log|x| chi(|x|) / (2 pi)` and `f_eps` is
//! the standard bump mollifier at scale `eps`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Domain, Grid, GridKey, VectorField};
use crate::quad::Rule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VortexConfig {
    /// Lattice density.
    pub n: usize,
    /// Partition period.
    pub m: usize,
    /// Boundary layer width.
    pub delta: f64,
    /// Blob radius.
    pub r: f64,
    /// Mollification scale of the unit profile.
    pub eps: f64,
    /// Noise amplitude.
    pub gamma: f64,
}

impl VortexConfig {
    /// Config with the canonical mollification scale `eps = 1/N`.
    pub fn new(n: usize, m: usize, delta: f64, r: f64, gamma: f64) -> Self {
        VortexConfig {
            n,
            m,
            delta,
            r,
            eps: 1.0 / n as f64,
            gamma,
        }
    }

    /// `[12/N, min(M/2N, delta)]`, if nonempty.
    pub fn admissible_r_range(n: usize, m: usize, delta: f64) -> Option<(f64, f64)> {
        let lo = 12.0 / n as f64;
        let hi = (m as f64 / (2.0 * n as f64)).min(delta);
        (lo <= hi).then_some((lo, hi))
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        VortexConfig { gamma, ..*self }
    }
}

/// One violated admissibility constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Violation {
    EmptyLatticeParameters,
    DeltaRange,
    EpsRange,
    Amplitude,
    LatticeSpacing,
    RadiusAboveSeparation,
    RadiusAboveDelta,
    RadiusBelowCore,
    PartitionPeriod,
    MollifierScale,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::EmptyLatticeParameters => "N >= 1 and M >= 1 fails",
            Violation::DeltaRange => "0 < delta < 1/2 fails",
            Violation::EpsRange => "0 < eps < 1/6 fails",
            Violation::Amplitude => "Gamma >= 0 fails",
            Violation::LatticeSpacing => "1/N <= delta fails",
            Violation::RadiusAboveSeparation => "r <= M/(2N) fails",
            Violation::RadiusAboveDelta => "r <= delta fails",
            Violation::RadiusBelowCore => "r >= 12/N fails",
            Violation::PartitionPeriod => "M > 24 fails",
            Violation::MollifierScale => "eps = 1/N fails",
        };
        f.write_str(s)
    }
}

const REL: f64 = 1e-12;

/// Lists every violated constraint; an empty list means admissible.
pub fn validate_config(cfg: &VortexConfig) -> Vec<Violation> {
    let mut v = Vec::new();
    if cfg.n == 0 || cfg.m == 0 {
        v.push(Violation::EmptyLatticeParameters);
        return v;
    }
    let n = cfg.n as f64;
    let m = cfg.m as f64;
    if !(cfg.delta > 0.0 && cfg.delta < 0.5) {
        v.push(Violation::DeltaRange);
    }
    if !(cfg.eps > 0.0 && cfg.eps < 1.0 / 6.0) {
        v.push(Violation::EpsRange);
    }
    if !(cfg.gamma >= 0.0 && cfg.gamma.is_finite()) {
        v.push(Violation::Amplitude);
    }
    if 1.0 / n > cfg.delta * (1.0 + REL) {
        v.push(Violation::LatticeSpacing);
    }
    if cfg.r > m / (2.0 * n) * (1.0 + REL) {
        v.push(Violation::RadiusAboveSeparation);
    }
    if cfg.r > cfg.delta * (1.0 + REL) {
        v.push(Violation::RadiusAboveDelta);
    }
    if cfg.r < 12.0 / n * (1.0 - REL) {
        v.push(Violation::RadiusBelowCore);
    }
    if cfg.m <= 24 {
        v.push(Violation::PartitionPeriod);
    }
    if (cfg.eps * n - 1.0).abs() > 1e-9 {
        v.push(Violation::MollifierScale);
    }
    v
}

fn require_admissible(cfg: &VortexConfig) -> Result<()> {
    let v = validate_config(cfg);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Inadmissible(v.iter().map(|x| x.to_string()).collect()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lattice {
    pub n: usize,
    pub m: usize,
    pub centers: Vec<[f64; 2]>,
    /// Integer coordinates `(k, h)` with centre `(k/N, h/N)`.
    pub indices: Vec<(i64, i64)>,
    /// Class `(k mod M, h mod M)`.
    pub classes: Vec<(usize, usize)>,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn class_index(&self, j: usize) -> usize {
        let (a, b) = self.classes[j];
        a * self.m + b
    }
}

/// Centres `(k/N, h/N)` with `dist(centre, boundary) > delta`, after validation.
pub fn build_lattice(grid: &Grid, cfg: &VortexConfig) -> Result<Lattice> {
    require_admissible(cfg)?;
    enumerate_lattice(grid.domain(), cfg.n, cfg.m, cfg.delta)
}

/// Lattice enumeration without the admissibility check.
pub fn enumerate_lattice(domain: Domain, n: usize, m: usize, delta: f64) -> Result<Lattice> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("N and M must be positive".into()));
    }
    let ni = n as i64;
    let (lo, hi) = match domain {
        Domain::UnitDisk => (-ni, ni),
        Domain::UnitSquare => (0, ni),
    };
    let mut lat = Lattice {
        n,
        m,
        centers: Vec::new(),
        indices: Vec::new(),
        classes: Vec::new(),
    };
    let mi = m as i64;
    for hh in lo..=hi {
        for k in lo..=hi {
            let p = [k as f64 / n as f64, hh as f64 / n as f64];
            if domain.boundary_distance(p) > delta * (1.0 + 1e-12) {
                lat.centers.push(p);
                lat.indices.push((k, hh));
                lat.classes.push((k.rem_euclid(mi) as usize, hh.rem_euclid(mi) as usize));
            }
        }
    }
    if lat.is_empty() {
        return Err(Error::EmptyLattice { delta });
    }
    Ok(lat)
}

/// `exp(-1/t)` for `t > 0`, zero otherwise.
fn bump_tail(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn bump_tail_prime(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp() / (t * t)
    } else {
        0.0
    }
}

/// Smooth cutoff: 1 on `[0, 1/3]`, 0 on `[2/3, inf)`.
pub fn chi(rho: f64) -> f64 {
    let t = 3.0 * (2.0 / 3.0 - rho);
    let a = bump_tail(t);
    let b = bump_tail(1.0 - t);
    if a + b == 0.0 {
        return if t >= 1.0 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

pub fn chi_prime(rho: f64) -> f64 {
    let t = 3.0 * (2.0 / 3.0 - rho);
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let (a, b) = (bump_tail(t), bump_tail(1.0 - t));
    let (da, db) = (bump_tail_prime(t), -bump_tail_prime(1.0 - t));
    // d/dt [a/(a+b)] times dt/drho = -3
    -3.0 * (da * b - a * db) / ((a + b) * (a + b))
}

/// The unmollified stream function `log(rho) chi(rho) / (2 pi)`.
pub fn psi0(rho: f64) -> f64 {
    if rho >= 2.0 / 3.0 {
        0.0
    } else {
        rho.ln() * chi(rho) / (2.0 * PI)
    }
}

/// Unnormalized bump `exp(-1/(1 - s^2))` on `[0, 1)`.
fn bump(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Radial cumulative tables of the normalized bump density.
#[derive(Debug, Clone)]
struct Mollifier {
    c: f64,
    cells: usize,
    /// `m[i] = mass within s_i = i / cells`.
    mass: Vec<f64>,
    /// `l[i] = int_{s_i}^1 2 pi c s bump(s) ln(s) ds`.
    log_tail: Vec<f64>,
    rule: Rule,
}

impl Mollifier {
    fn new() -> Self {
        let cells = 2048;
        let rule = Rule::new(6);
        let raw = rule.composite(0.0, 1.0, 64, |s| 2.0 * PI * s * bump(s));
        let c = 1.0 / raw;
        let mut mass = vec![0.0; cells + 1];
        let mut log_tail = vec![0.0; cells + 1];
        for i in 0..cells {
            let (a, b) = (i as f64 / cells as f64, (i + 1) as f64 / cells as f64);
            mass[i + 1] = mass[i] + rule.integrate(a, b, |s| 2.0 * PI * c * s * bump(s));
        }
        for i in (0..cells).rev() {
            let (a, b) = (i as f64 / cells as f64, (i + 1) as f64 / cells as f64);
            log_tail[i] = log_tail[i + 1] + rule.integrate(a, b, |s| 2.0 * PI * c * s * bump(s) * s.ln());
        }
        Mollifier {
            c,
            cells,
            mass,
            log_tail,
            rule,
        }
    }

    fn density(&self, s: f64) -> f64 {
        self.c * bump(s)
    }

    /// Mass of the unit-scale density within radius `t`.
    fn mass_within(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        let i = ((t * self.cells as f64).floor() as usize).min(self.cells - 1);
        let a = i as f64 / self.cells as f64;
        self.mass[i] + self.rule.integrate(a, t, |s| 2.0 * PI * self.c * s * bump(s))
    }

    fn log_tail_beyond(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let t = t.max(0.0);
        let i = ((t * self.cells as f64).floor() as usize).min(self.cells - 1);
        let b = (i + 1) as f64 / self.cells as f64;
        self.log_tail[i + 1] + self.rule.integrate(t, b, |s| 2.0 * PI * self.c * s * bump(s) * s.ln())
    }
}

/// Normalized mollifier density `f` on `R^2` (radial argument).
pub fn mollifier_density(s: f64) -> f64 {
    thread_local! {
        static C: f64 = Mollifier::new().c;
    }
    C.with(|c| *c * bump(s))
}

/// The mollified stream function and its radial derivative, tabulated on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct VortexProfile {
    pub eps: f64,
    pub cells: usize,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    /// `int |w|^2` over the plane.
    pub norm_w_sq: f64,
}

pub fn default_table_resolution(eps: f64) -> usize {
    4096usize.max((16.0 / eps).ceil() as usize)
}

/// Direct evaluation of `psi(rho)` and `psi'(rho)` without the table.
struct DirectProfile {
    eps: f64,
    moll: Mollifier,
    s_rule: Rule,
    s_panels: usize,
    angles: usize,
}

impl DirectProfile {
    fn new(eps: f64) -> Self {
        DirectProfile {
            eps,
            moll: Mollifier::new(),
            s_rule: Rule::new(8),
            s_panels: 4,
            angles: 96,
        }
    }

    /// Harmonic part `(log|.| / 2 pi) * f_eps` by the mean-value property.
    fn harmonic(&self, rho: f64) -> (f64, f64) {
        let t = rho / self.eps;
        if t >= 1.0 {
            return (rho.ln() / (2.0 * PI), 1.0 / (2.0 * PI * rho));
        }
        let m = self.moll.mass_within(t);
        let tail = self.eps.ln() * (1.0 - m) + self.moll.log_tail_beyond(t);
        let head = if rho > 0.0 { rho.ln() * m } else { 0.0 };
        let d = if rho > 0.0 { m / (2.0 * PI * rho) } else { 0.0 };
        ((head + tail) / (2.0 * PI), d)
    }

    /// Smooth remainder `R = log(rho)(chi - 1) / 2 pi` convolved with `f_eps`.
    fn remainder(&self, rho: f64) -> (f64, f64) {
        if rho + self.eps <= 1.0 / 3.0 {
            return (0.0, 0.0);
        }
        let r_fn = |z: f64| z.ln() * (chi(z) - 1.0) / (2.0 * PI);
        let dr_fn = |z: f64| ((chi(z) - 1.0) / z + z.ln() * chi_prime(z)) / (2.0 * PI);
        let na = self.angles;
        let mut val = 0.0;
        let mut der = 0.0;
        let step = 1.0 / self.s_panels as f64;
        for p in 0..self.s_panels {
            for (s, ws) in self.s_rule.mapped(p as f64 * step, (p + 1) as f64 * step) {
                let weight = ws * s * self.moll.density(s) * (2.0 * PI / na as f64);
                let rad = self.eps * s;
                let mut v = 0.0;
                let mut d = 0.0;
                for a in 0..na {
                    let ang = 2.0 * PI * (a as f64 + 0.5) / na as f64;
                    let zx = rho - rad * ang.cos();
                    let zy = -rad * ang.sin();
                    let z = zx.hypot(zy);
                    v += r_fn(z);
                    d += dr_fn(z) * zx / z;
                }
                val += weight * v;
                der += weight * d;
            }
        }
        (val, der)
    }

    fn eval(&self, rho: f64) -> (f64, f64) {
        if rho >= 2.0 / 3.0 + self.eps {
            return (0.0, 0.0);
        }
        let (a, da) = self.harmonic(rho);
        let (b, db) = self.remainder(rho);
        (a + b, da + db)
    }
}

/// Builds the profile table with `table_resolution` cells on `[0, 1]`.
pub fn build_profile(cfg: &VortexConfig, table_resolution: usize) -> Result<VortexProfile> {
    build_profile_eps(cfg.eps, table_resolution)
}

pub fn build_profile_eps(eps: f64, table_resolution: usize) -> Result<VortexProfile> {
    if !(eps > 0.0 && eps < 1.0 / 6.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} outside (0, 1/6)")));
    }
    let cells_per_eps = table_resolution as f64 * eps;
    if cells_per_eps < 4.0 {
        return Err(Error::CoarseTable { cells_per_eps });
    }
    let direct = DirectProfile::new(eps);
    let n = table_resolution;
    let vals: Vec<(f64, f64)> = (0..=n)
        .into_par_iter()
        .map(|i| direct.eval(i as f64 / n as f64))
        .collect();
    let (psi, dpsi): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
    let mut prof = VortexProfile {
        eps,
        cells: n,
        psi,
        dpsi,
        norm_w_sq: 0.0,
    };
    let rule = Rule::new(4);
    let top = prof.support_radius();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
        if a >= top {
            break;
        }
        acc += rule.integrate(a, b.min(top), |rho| {
            let d = prof.dpsi(rho);
            d * d * rho
        });
    }
    prof.norm_w_sq = 2.0 * PI * acc;
    Ok(prof)
}

impl VortexProfile {
    /// Radius beyond which `psi` and `w` vanish identically.
    pub fn support_radius(&self) -> f64 {
        2.0 / 3.0 + self.eps
    }

    fn locate(&self, rho: f64) -> Option<(usize, f64)> {
        if rho >= self.support_radius() || rho >= 1.0 {
            return None;
        }
        let x = rho * self.cells as f64;
        let i = (x.floor() as usize).min(self.cells - 1);
        Some((i, x - i as f64))
    }

    /// `psi(rho)` by cubic Hermite interpolation of `(psi, psi')`.
    pub fn psi(&self, rho: f64) -> f64 {
        let Some((i, t)) = self.locate(rho) else { return 0.0 };
        let dx = 1.0 / self.cells as f64;
        let (p0, p1) = (self.psi[i], self.psi[i + 1]);
        let (m0, m1) = (self.dpsi[i] * dx, self.dpsi[i + 1] * dx);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }

    /// `psi'(rho)` by Catmull-Rom interpolation of the tabulated derivative.
    pub fn dpsi(&self, rho: f64) -> f64 {
        let Some((i, t)) = self.locate(rho) else { return 0.0 };
        let last = self.cells;
        let y = |k: i64| self.dpsi[k.clamp(0, last as i64) as usize];
        let k = i as i64;
        let (y0, y1, y2, y3) = (y(k - 1), y(k), y(k + 1), y(k + 2));
        let m1 = 0.5 * (y2 - y0);
        let m2 = 0.5 * (y3 - y1);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y1 + (t3 - 2.0 * t2 + t) * m1 + (-2.0 * t3 + 3.0 * t2) * y2 + (t3 - t2) * m2
    }

    /// `w(x) = psi'(|x|) (-x2, x1) / |x|`.
    pub fn w(&self, x: [f64; 2]) -> [f64; 2] {
        let rho = x[0].hypot(x[1]);
        if rho == 0.0 {
            return [0.0, 0.0];
        }
        let d = self.dpsi(rho) / rho;
        [-x[1] * d, x[0] * d]
    }

    /// `w_r(x) = w(x / r) / r`.
    pub fn w_r(&self, x: [f64; 2], r: f64) -> [f64; 2] {
        let v = self.w([x[0] / r, x[1] / r]);
        [v[0] / r, v[1] / r]
    }

    pub fn table_psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn table_dpsi(&self) -> &[f64] {
        &self.dpsi
    }
}

/// A vector field stored by its nonzero interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseField {
    pub nodes: Vec<u32>,
    pub values: Vec<[f64; 2]>,
}

impl SparseField {
    pub fn from_dense(grid: &Grid, u: &VectorField) -> Result<Self> {
        if u.key != grid.key() {
            return Err(Error::GridMismatch);
        }
        let mut out = SparseField {
            nodes: Vec::new(),
            values: Vec::new(),
        };
        for &k in grid.interior_nodes() {
            let v = u.values[k];
            if v != [0.0, 0.0] {
                out.nodes.push(k as u32);
                out.values.push(v);
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self, grid: &Grid) -> VectorField {
        let mut out = grid.zero_vectors();
        for (&k, &v) in self.nodes.iter().zip(&self.values) {
            out.values[k as usize] = v;
        }
        out
    }

    /// Sum of squared values (multiply by `h^2` for the L2 norm).
    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum()
    }

    /// `sum_nodes a . b` over nodes shared by both (both node lists sorted).
    pub fn raw_dot(&self, other: &SparseField) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.nodes.len() && j < other.nodes.len() {
            match self.nodes[i].cmp(&other.nodes[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let (a, b) = (self.values[i], other.values[j]);
                    acc += a[0] * b[0] + a[1] * b[1];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Dense vector `out += c * self`.
    pub fn scatter_add(&self, c: f64, out: &mut [[f64; 2]]) {
        for (&k, v) in self.nodes.iter().zip(&self.values) {
            let o = &mut out[k as usize];
            o[0] += c * v[0];
            o[1] += c * v[1];
        }
    }

    /// `sum_nodes self . dense` (no `h^2` factor).
    pub fn gather(&self, dense: &[[f64; 2]]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.values)
            .map(|(&k, v)| {
                let d = dense[k as usize];
                v[0] * d[0] + v[1] * d[1]
            })
            .sum()
    }
}

/// The sampled family `{Gamma w_r(. - z)}` on a grid.
#[derive(Debug, Clone)]
pub struct VortexBasis {
    pub config: VortexConfig,
    pub lattice: Lattice,
    pub key: GridKey,
    pub h: f64,
    pub fields: Vec<SparseField>,
    /// `int |w|^2` of the unit profile.
    pub norm_w_sq: f64,
    /// `h <= r eps`.
    pub core_resolved: bool,
    pub warnings: Vec<String>,
}

/// Samples `Gamma psi(|x - z| / r)` on the grid and takes the centred discrete
/// curl, so each member is discretely divergence free.
pub fn assemble_basis(grid: &Grid, cfg: &VortexConfig, profile: &VortexProfile) -> Result<VortexBasis> {
    require_admissible(cfg)?;
    if (profile.eps - cfg.eps).abs() > 1e-12 * cfg.eps {
        return Err(Error::InvalidParameter(format!(
            "profile eps {} differs from config eps {}",
            profile.eps, cfg.eps
        )));
    }
    let h = grid.h();
    if h >= cfg.r * (1.0 / 3.0 - cfg.eps) {
        return Err(Error::InvalidParameter(format!(
            "grid spacing {h} does not separate same-class supports (need h < r (1/3 - eps) = {})",
            cfg.r * (1.0 / 3.0 - cfg.eps)
        )));
    }
    let lattice = build_lattice(grid, cfg)?;
    let mut warnings = Vec::new();
    let core_resolved = h <= cfg.r * cfg.eps;
    if !core_resolved {
        warnings.push(format!(
            "grid spacing {h:.3e} exceeds the core radius r*eps = {:.3e}; core values are under-resolved",
            cfg.r * cfg.eps
        ));
    }
    let side = grid.side() as i64;
    let reach = cfg.r * profile.support_radius();
    let span = (reach / h).ceil() as i64 + 2;
    let inv_2h = 0.5 / h;
    let fields: Vec<SparseField> = lattice
        .centers
        .par_iter()
        .map(|&z| {
            let mut out = SparseField {
                nodes: Vec::new(),
                values: Vec::new(),
            };
            if cfg.gamma == 0.0 {
                return out;
            }
            let c = grid.nearest_node(z).expect("centre inside the grid box");
            let (ci, cj) = grid.coords(c);
            let (ci, cj) = (ci as i64, cj as i64);
            let w = 2 * span + 1;
            let mut stream = vec![0.0; (w * w) as usize];
            for dj in -span..=span {
                for di in -span..=span {
                    let (i, j) = (ci + di, cj + dj);
                    if i < 0 || j < 0 || i >= side || j >= side {
                        continue;
                    }
                    let p = grid.point(grid.node_at(i as usize, j as usize));
                    let rho = (p[0] - z[0]).hypot(p[1] - z[1]) / cfg.r;
                    stream[((dj + span) * w + di + span) as usize] = cfg.gamma * profile.psi(rho);
                }
            }
            let at = |di: i64, dj: i64| stream[((dj + span) * w + di + span) as usize];
            for dj in -(span - 1)..=(span - 1) {
                for di in -(span - 1)..=(span - 1) {
                    let (i, j) = (ci + di, cj + dj);
                    if i < 0 || j < 0 || i >= side || j >= side {
                        continue;
                    }
                    let node = grid.node_at(i as usize, j as usize);
                    if !grid.is_interior(node) {
                        continue;
                    }
                    let ux = -(at(di, dj + 1) - at(di, dj - 1)) * inv_2h;
                    let uy = (at(di + 1, dj) - at(di - 1, dj)) * inv_2h;
                    if ux != 0.0 || uy != 0.0 {
                        out.nodes.push(node as u32);
                        out.values.push([ux, uy]);
                    }
                }
            }
            out
        })
        .collect();
    Ok(VortexBasis {
        config: *cfg,
        lattice,
        key: grid.key(),
        h,
        fields,
        norm_w_sq: profile.norm_w_sq,
        core_resolved,
        warnings,
    })
}

impl VortexBasis {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// `int |u_j|^2` by grid quadrature.
    pub fn field_norm_sq(&self, j: usize) -> f64 {
        self.h * self.h * self.fields[j].sum_sq()
    }

    /// Largest centred discrete divergence over all members and interior nodes.
    pub fn max_discrete_divergence(&self, grid: &Grid) -> f64 {
        let inv_2h = 0.5 / grid.h();
        let mut worst = 0.0_f64;
        for f in &self.fields {
            let dense = f.to_dense(grid);
            for &node in f.nodes.iter() {
                let node = node as usize;
                let [e, w, n, s] = grid.neighbors(node);
                let get = |k: Option<usize>, c: usize| k.map_or(0.0, |k| dense.values[k][c]);
                let div = (get(e, 0) - get(w, 0) + get(n, 1) - get(s, 1)) * inv_2h;
                worst = worst.max(div.abs());
            }
        }
        worst
    }

    /// CSV rows `center_x, center_y, class_k, class_h, x, y, u_x, u_y`.
    pub fn write_csv<W: Write>(&self, grid: &Grid, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["center_x", "center_y", "class_k", "class_h", "x", "y", "u_x", "u_y"])?;
        for (j, f) in self.fields.iter().enumerate() {
            let z = self.lattice.centers[j];
            let (ck, ch) = self.lattice.classes[j];
            for (&k, v) in f.nodes.iter().zip(&f.values) {
                let p = grid.point(k as usize);
                wr.write_record(&[
                    format!("{:e}", z[0]),
                    format!("{:e}", z[1]),
                    ck.to_string(),
                    ch.to_string(),
                    format!("{:e}", p[0]),
                    format!("{:e}", p[1]),
                    format!("{:e}", v[0]),
                    format!("{:e}", v[1]),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}
