//! Experiment drivers: the Monte Carlo check of the averaged-equation bound,
//! the decay experiment, the vortex-noise sweep, the eigenvalue sweep and the
//! Kraichnan regime report.
//!
//! Every report carries one-sided verdicts. Nothing here asserts tightness.

use crate::config::ResolvedConfig;
use crate::covariance::{
    continuum_q_at, epsilon_q, geometric_condition, pointwise_q, same_class_orthogonality, ClassOrthogonality,
};
use crate::eigen::{principal_eigenvalue, radial_lambda, theorem_bounds, RadialProblem};
use crate::elliptic::{assemble_diffusion, sym2_min_eigenvalue, DiffusivityTensor, DiscreteOperator, Sym2};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Domain, Grid, ScalarField};
use crate::kraichnan::{
    covariance_at, eps_q_upper_bound, regime_report, torus_check, KraichnanParams, RegimeReport,
    RegimeThresholds, TorusCheck,
};
use crate::spde::{
    energy_report, mean_var, path_seed, run_ensemble, solve_effective, EnergyReport, PathEnsemble, Stepper,
};
use crate::vortex::{
    assemble_basis, build_profile, build_profile_eps, default_table_resolution, enumerate_lattice, validate_config,
    VortexBasis, VortexConfig, VortexProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Squared first zero of `J_0`.
pub const J01_SQ: f64 = 5.783_185_962_946_784;

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

pub fn all_pass(v: &[Verdict]) -> bool {
    v.iter().all(|x| x.pass)
}

/// Dirichlet `lambda_D` of the continuum domain.
pub fn dirichlet_lambda(domain: Domain) -> f64 {
    match domain {
        Domain::UnitSquare => 2.0 * std::f64::consts::PI * std::f64::consts::PI,
        Domain::UnitDisk => J01_SQ,
    }
}

fn center(domain: Domain) -> [f64; 2] {
    match domain {
        Domain::UnitSquare => [0.5, 0.5],
        Domain::UnitDisk => [0.0, 0.0],
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum InitialSpec {
    Bump { center: Option<[f64; 2]>, radius: f64 },
    Eigenfunction,
    RandomSmooth,
}

#[derive(Debug, Clone, Serialize)]
pub enum TestFunctionSpec {
    Plateau { radius: f64, slope: f64 },
    ConstantApprox { slope: f64 },
    Eigenfunction,
}

fn first_eigenfunction(grid: &Grid, kappa: f64) -> Result<ScalarField> {
    let op = assemble_diffusion(grid, &DiffusivityTensor::isotropic(grid, kappa))?;
    let mut v = principal_eigenvalue(grid, &op)?.eigenvector;
    v.values.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(v)
}

/// Nonnegative initial temperature with unit L2 norm.
pub fn initial_field(grid: &Grid, spec: &InitialSpec, seed: u64) -> Result<ScalarField> {
    let domain = grid.domain();
    let f = match spec {
        InitialSpec::Bump { center: c, radius } => {
            let c = c.unwrap_or_else(|| center(domain));
            let r = *radius;
            grid.scalar_from_fn(|p| {
                let s = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (r * r);
                if s < 1.0 {
                    (1.0 - s).powi(2)
                } else {
                    0.0
                }
            })
        }
        InitialSpec::Eigenfunction => first_eigenfunction(grid, 1.0)?,
        InitialSpec::RandomSmooth => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c0 = center(domain);
            let blobs: Vec<([f64; 2], f64, f64)> = (0..6)
                .map(|_| {
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    let rad = rng.gen_range(0.0..0.25);
                    (
                        [c0[0] + rad * a.cos(), c0[1] + rad * a.sin()],
                        rng.gen_range(0.08..0.2),
                        rng.gen_range(0.2..1.0),
                    )
                })
                .collect();
            grid.scalar_from_fn(|p| {
                let ramp = (10.0 * domain.boundary_distance(p)).min(1.0);
                ramp * blobs
                    .iter()
                    .map(|(c, s, a)| a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * s * s)).exp())
                    .sum::<f64>()
            })
        }
    };
    let n = grid.dot(&f, &f)?.sqrt();
    if !(n > 0.0) {
        return Err(Error::InvalidParameter("initial temperature vanishes on the grid".into()));
    }
    Ok(f.scaled(1.0 / n))
}

/// Test function and its exact nodal sup norm.
pub fn test_function(grid: &Grid, spec: &TestFunctionSpec) -> Result<(ScalarField, f64)> {
    let domain = grid.domain();
    let phi = match spec {
        TestFunctionSpec::Plateau { radius, slope } => {
            let c = center(domain);
            grid.scalar_from_fn(|p| ((radius - (p[0] - c[0]).hypot(p[1] - c[1])) * slope).clamp(0.0, 1.0))
        }
        TestFunctionSpec::ConstantApprox { slope } => {
            grid.scalar_from_fn(|p| (slope * domain.boundary_distance(p)).clamp(0.0, 1.0))
        }
        TestFunctionSpec::Eigenfunction => {
            let v = first_eigenfunction(grid, 1.0)?;
            let m = v.max_abs();
            v.scaled(1.0 / m)
        }
    };
    let sup = phi.max_abs();
    Ok((phi, sup))
}

fn parse_domain(cfg: &ResolvedConfig) -> Result<Domain> {
    Domain::parse(cfg.text("domain")?).ok_or_else(|| Error::Config("bad domain".into()))
}

fn initial_spec(cfg: &ResolvedConfig) -> Result<InitialSpec> {
    Ok(match cfg.text("t0_kind")? {
        "bump" => {
            let c = match cfg.reals_or_auto("bump_center_xy")? {
                None => None,
                Some(v) if v.len() == 2 => Some([v[0], v[1]]),
                Some(_) => return Err(Error::Config("bump_center_xy needs two numbers".into())),
            };
            InitialSpec::Bump {
                center: c,
                radius: cfg.real("bump_radius")?,
            }
        }
        "eigenfunction" => InitialSpec::Eigenfunction,
        _ => InitialSpec::RandomSmooth,
    })
}

fn vortex_from(cfg: &ResolvedConfig) -> Result<VortexConfig> {
    Ok(VortexConfig::new(
        cfg.count("lattice_density_n")?,
        cfg.count("class_period_m")?,
        cfg.real("delta_boundary_layer")?,
        cfg.real("vortex_radius_r")?,
        cfg.real_or_auto("gamma_amplitude")?.unwrap_or(1.0),
    ))
}

fn profile_for(cfg: &VortexConfig) -> Result<VortexProfile> {
    build_profile(cfg, default_table_resolution(cfg.eps))
}

fn min_over_mask(values: impl Iterator<Item = f64>, mask: &[bool]) -> f64 {
    values
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(f64::INFINITY, |a, (v, _)| a.min(v))
}

/// Summary of the noise actually used in an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseSummary {
    pub vortex: VortexConfig,
    pub centers: usize,
    pub gamma: f64,
    pub epsilon_q: f64,
    pub epsilon_q_residual: f64,
    /// `min over D_{2 delta}` of `q / 2`.
    pub sigma2_equivalent: f64,
    pub max_q: f64,
    pub norm_w_sq: f64,
    pub warnings: Vec<String>,
}

struct NoiseSetup {
    basis: VortexBasis,
    summary: NoiseSummary,
    qxx: Vec<Sym2>,
}

fn build_noise(grid: &Grid, vc: &VortexConfig, profile: &VortexProfile) -> Result<NoiseSetup> {
    let basis = assemble_basis(grid, vc, profile)?;
    let eq = epsilon_q(grid, &basis.fields, 1e-10)?;
    let qxx = pointwise_q(grid, &basis.fields);
    let mask = grid.inner_layer_mask(2.0 * vc.delta);
    let q_min = min_over_mask(qxx.iter().map(|a| sym2_min_eigenvalue(*a)), &mask);
    let max_q = qxx.iter().map(|a| crate::elliptic::sym2_max_eigenvalue(*a)).fold(0.0, f64::max);
    let summary = NoiseSummary {
        vortex: *vc,
        centers: basis.len(),
        gamma: vc.gamma,
        epsilon_q: eq.value,
        epsilon_q_residual: eq.residual,
        sigma2_equivalent: 0.5 * q_min,
        max_q,
        norm_w_sq: basis.norm_w_sq,
        warnings: basis.warnings.clone(),
    };
    Ok(NoiseSetup { basis, summary, qxx })
}

fn eddy_operator(grid: &Grid, kappa: f64, qxx: &[Sym2]) -> Result<DiscreteOperator> {
    assemble_diffusion(grid, &DiffusivityTensor::eddy(grid, kappa, qxx))
}

/// Parameters of the Monte Carlo check of the averaged-equation bound.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Config {
    pub domain: Domain,
    pub h: f64,
    pub kappa: f64,
    pub vortex: VortexConfig,
    /// `None` picks Gamma so that the right-hand side equals `rhs_target`.
    pub gamma: Option<f64>,
    pub rhs_target: f64,
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub paths: usize,
    pub study_paths: usize,
    pub t0: InitialSpec,
    pub phi: TestFunctionSpec,
    pub seed: u64,
}

impl Theorem1Config {
    pub fn from_resolved(cfg: &ResolvedConfig) -> Result<Self> {
        let slope = cfg.real("phi_slope_per_length")?;
        Ok(Theorem1Config {
            domain: parse_domain(cfg)?,
            h: cfg.real("grid_spacing_h")?,
            kappa: cfg.real("kappa_diffusivity")?,
            vortex: vortex_from(cfg)?,
            gamma: cfg.real_or_auto("gamma_amplitude")?,
            rhs_target: cfg.real("rhs_target")?,
            dt: cfg.real("dt_time_step")?,
            checkpoints: cfg.reals("checkpoint_times")?,
            paths: cfg.count("paths_count")?,
            study_paths: cfg.count("study_paths_count")?,
            t0: initial_spec(cfg)?,
            phi: match cfg.text("phi_kind")? {
                "plateau" => TestFunctionSpec::Plateau {
                    radius: cfg.real("phi_radius")?,
                    slope,
                },
                "constant_approx" => TestFunctionSpec::ConstantApprox { slope },
                _ => TestFunctionSpec::Eigenfunction,
            },
            seed: cfg.seed("seed")?,
        })
    }

    /// The desk case of the built-in defaults.
    pub fn desk() -> Self {
        Self::from_resolved(&ResolvedConfig::defaults(crate::config::Command::Theorem1)).expect("valid defaults")
    }
}

/// Mean, standard error and upper 95% bound of a sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub upper95: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let (mean, var) = mean_var(x);
        let std_err = (var / x.len().max(1) as f64).sqrt();
        Estimate {
            mean,
            std_err,
            upper95: mean + Z95 * std_err,
            samples: x.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointRow {
    pub t: f64,
    pub phi_pairing_effective: f64,
    /// `E <phi, T - T_Q>^2`.
    pub lhs: Estimate,
    pub rhs: f64,
    /// Standard error from the first half of the paths, over the full-sample one.
    pub half_sample_se_ratio: f64,
    /// `E (int |T|)^2`.
    pub abs_integral_sq: Estimate,
    /// `(eps_Q / kappa + 2 |D| exp(-2 lambda t)) ||T0||^2`.
    pub decay_bound: f64,
    pub pass_bound: bool,
    pub pass_decay: bool,
}

/// Coupled `dt` versus `dt/2` comparison fixing the scheme tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub paths: usize,
    pub dt_coarse: f64,
    pub dt_fine: f64,
    pub lhs_coarse: Vec<f64>,
    pub lhs_fine: Vec<f64>,
    /// Largest gap of the bound statistic over checkpoints, relative to the bound.
    pub relative_gap_bound: f64,
    /// Largest gap of `E (int |T|)^2` relative to its bound.
    pub relative_gap_decay: f64,
    /// Largest pathwise gap of `E(t_end)` relative to `||T0||^2 / (2 kappa)`.
    pub relative_gap_energy: f64,
    /// Three times the largest relative gap.
    pub scheme_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremOneReport {
    pub config: Theorem1Config,
    pub noise: NoiseSummary,
    pub t0_l2_sq: f64,
    pub phi_sup: f64,
    pub lambda_q: f64,
    pub lambda_baseline: f64,
    pub rhs: f64,
    pub study: StudyReport,
    pub scheme_tol: f64,
    pub rows: Vec<CheckpointRow>,
    pub energy: EnergyReport,
    pub verdicts: Vec<Verdict>,
    pub note: String,
}

pub struct Theorem1Outcome {
    pub report: TheoremOneReport,
    pub ensemble: PathEnsemble,
}

struct MonteCarloSetup<'a> {
    grid: &'a Grid,
    op: &'a DiscreteOperator,
    fields: &'a [crate::vortex::SparseField],
    t0: &'a ScalarField,
    phi: &'a ScalarField,
    checkpoints: &'a [f64],
    kappa: f64,
    eps_q: f64,
    lambda_q: f64,
    t0_l2_sq: f64,
    phi_sup: f64,
}

impl MonteCarloSetup<'_> {
    fn rhs(&self) -> f64 {
        self.eps_q / (2.0 * self.kappa) * self.t0_l2_sq * self.phi_sup * self.phi_sup
    }

    fn decay_bound(&self, t: f64) -> f64 {
        let area = self.grid.domain().area();
        (self.eps_q / self.kappa + 2.0 * area * (-2.0 * self.lambda_q * t).exp()) * self.t0_l2_sq
    }

    fn effective_pairings(&self, dt: f64) -> Result<Vec<f64>> {
        let traj = solve_effective(self.grid, self.op, self.t0, dt, self.checkpoints)?;
        traj.states.iter().map(|s| self.grid.dot(self.phi, s)).collect()
    }

    fn lhs_samples(ens: &PathEnsemble, pq: &[f64], c: usize) -> Vec<f64> {
        ens.paths
            .iter()
            .map(|p| (p.observations[c].phi_pairing - pq[c]).powi(2))
            .collect()
    }

    fn study(&self, dt: f64, paths: usize, seed: u64) -> Result<StudyReport> {
        let ids: Vec<u64> = (0..paths as u64).collect();
        let study_seed = path_seed(seed, u64::MAX);
        let coarse = Stepper::new(self.grid, self.op, self.fields, dt)?;
        let fine = Stepper::new(self.grid, self.op, self.fields, 0.5 * dt)?;
        let ec = run_ensemble(&coarse, self.t0, self.phi, self.checkpoints, study_seed, &ids, 2)?;
        let ef = run_ensemble(&fine, self.t0, self.phi, self.checkpoints, study_seed, &ids, 1)?;
        let pc = self.effective_pairings(dt)?;
        let pf = self.effective_pairings(0.5 * dt)?;
        let rhs = self.rhs();
        let mut lhs_coarse = Vec::new();
        let mut lhs_fine = Vec::new();
        let mut gap_bound: f64 = 0.0;
        let mut gap_decay: f64 = 0.0;
        for (c, &t) in self.checkpoints.iter().enumerate() {
            let a = Estimate::from_samples(&Self::lhs_samples(&ec, &pc, c)).mean;
            let b = Estimate::from_samples(&Self::lhs_samples(&ef, &pf, c)).mean;
            lhs_coarse.push(a);
            lhs_fine.push(b);
            if rhs > 0.0 {
                gap_bound = gap_bound.max((a - b).abs() / rhs);
            }
            let sq = |e: &PathEnsemble| {
                Estimate::from_samples(
                    &e.paths
                        .iter()
                        .map(|p| p.observations[c].abs_integral.powi(2))
                        .collect::<Vec<_>>(),
                )
                .mean
            };
            gap_decay = gap_decay.max((sq(&ec) - sq(&ef)).abs() / self.decay_bound(t));
        }
        let bound = self.t0_l2_sq / (2.0 * self.kappa);
        let gap_energy = ec
            .paths
            .iter()
            .zip(&ef.paths)
            .map(|(a, b)| {
                let (ea, eb) = (a.observations.last(), b.observations.last());
                match (ea, eb) {
                    (Some(x), Some(y)) => (x.energy_integral - y.energy_integral).abs() / bound,
                    _ => 0.0,
                }
            })
            .fold(0.0, f64::max);
        let scheme_tol = 3.0 * gap_bound.max(gap_decay).max(gap_energy);
        Ok(StudyReport {
            paths,
            dt_coarse: dt,
            dt_fine: 0.5 * dt,
            lhs_coarse,
            lhs_fine,
            relative_gap_bound: gap_bound,
            relative_gap_decay: gap_decay,
            relative_gap_energy: gap_energy,
            scheme_tol,
        })
    }

    fn rows(&self, ens: &PathEnsemble, pq: &[f64], tol: f64) -> Vec<CheckpointRow> {
        let rhs = self.rhs();
        self.checkpoints
            .iter()
            .enumerate()
            .map(|(c, &t)| {
                let samples = Self::lhs_samples(ens, pq, c);
                let lhs = Estimate::from_samples(&samples);
                let half = Estimate::from_samples(&samples[..samples.len() / 2]);
                let abs_sq: Vec<f64> = ens.paths.iter().map(|p| p.observations[c].abs_integral.powi(2)).collect();
                let abs_integral_sq = Estimate::from_samples(&abs_sq);
                let decay_bound = self.decay_bound(t);
                CheckpointRow {
                    t,
                    phi_pairing_effective: pq[c],
                    lhs,
                    rhs,
                    half_sample_se_ratio: if lhs.std_err > 0.0 { half.std_err / lhs.std_err } else { 0.0 },
                    abs_integral_sq,
                    decay_bound,
                    pass_bound: lhs.upper95 <= rhs * (1.0 + tol),
                    pass_decay: abs_integral_sq.upper95 <= decay_bound * (1.0 + tol),
                }
            })
            .collect()
    }
}

fn gamma_for_rhs(grid: &Grid, vc: &VortexConfig, profile: &VortexProfile, target: f64, scale: f64) -> Result<f64> {
    let unit = assemble_basis(grid, &vc.with_gamma(1.0), profile)?;
    let e1 = epsilon_q(grid, &unit.fields, 1e-10)?.value;
    if !(e1 > 0.0) {
        return Err(Error::InvalidParameter("vortex family has zero covariance on this grid".into()));
    }
    Ok((target / (scale * e1)).sqrt())
}

pub fn run_theorem1(cfg: &Theorem1Config) -> Result<Theorem1Outcome> {
    if cfg.paths == 0 {
        return Err(Error::InvalidParameter("paths must be positive".into()));
    }
    if !(cfg.kappa > 0.0) {
        return Err(Error::InvalidParameter("kappa must be positive".into()));
    }
    let grid = build_grid(cfg.domain, cfg.h)?;
    let t0 = initial_field(&grid, &cfg.t0, path_seed(cfg.seed, u64::MAX - 1))?;
    let (phi, phi_sup) = test_function(&grid, &cfg.phi)?;
    let t0_l2_sq = grid.dot(&t0, &t0)?;
    let profile = profile_for(&cfg.vortex)?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => gamma_for_rhs(
            &grid,
            &cfg.vortex,
            &profile,
            cfg.rhs_target,
            t0_l2_sq * phi_sup * phi_sup / (2.0 * cfg.kappa),
        )?,
    };
    let noise = build_noise(&grid, &cfg.vortex.with_gamma(gamma), &profile)?;
    let op = eddy_operator(&grid, cfg.kappa, &noise.qxx)?;
    let lambda_q = principal_eigenvalue(&grid, &op)?.lambda;
    let base = assemble_diffusion(&grid, &DiffusivityTensor::isotropic(&grid, cfg.kappa))?;
    let lambda_baseline = principal_eigenvalue(&grid, &base)?.lambda;
    let mc = MonteCarloSetup {
        grid: &grid,
        op: &op,
        fields: &noise.basis.fields,
        t0: &t0,
        phi: &phi,
        checkpoints: &cfg.checkpoints,
        kappa: cfg.kappa,
        eps_q: noise.summary.epsilon_q,
        lambda_q,
        t0_l2_sq,
        phi_sup,
    };
    let study = if cfg.study_paths > 0 {
        mc.study(cfg.dt, cfg.study_paths, cfg.seed)?
    } else {
        StudyReport {
            paths: 0,
            dt_coarse: cfg.dt,
            dt_fine: 0.5 * cfg.dt,
            lhs_coarse: vec![],
            lhs_fine: vec![],
            relative_gap_bound: 0.0,
            relative_gap_decay: 0.0,
            relative_gap_energy: 0.0,
            scheme_tol: 0.0,
        }
    };
    let tol = study.scheme_tol;
    let pq = mc.effective_pairings(cfg.dt)?;
    let stepper = Stepper::new(&grid, &op, &noise.basis.fields, cfg.dt)?;
    let ids: Vec<u64> = (0..cfg.paths as u64).collect();
    let ensemble = run_ensemble(&stepper, &t0, &phi, &cfg.checkpoints, cfg.seed, &ids, 1)?;
    let rows = mc.rows(&ensemble, &pq, tol);
    let energy = energy_report(&ensemble, cfg.kappa, t0_l2_sq, tol);
    let mut verdicts = Vec::new();
    for r in &rows {
        verdicts.push(Verdict::new(
            format!("bound_t={}", r.t),
            r.pass_bound,
            format!(
                "upper95 {:.6e} <= rhs {:.6e} * (1 + {:.3e})",
                r.lhs.upper95, r.rhs, tol
            ),
        ));
    }
    for r in &rows {
        verdicts.push(Verdict::new(
            format!("decay_bound_t={}", r.t),
            r.pass_decay,
            format!(
                "upper95 {:.6e} <= {:.6e} * (1 + {:.3e})",
                r.abs_integral_sq.upper95, r.decay_bound, tol
            ),
        ));
    }
    verdicts.push(Verdict::new(
        "energy_inequality",
        energy.violations == 0,
        format!(
            "{} of {} paths above bound {:.6e} * (1 + {:.3e}); max ratio {:.6}",
            energy.violations,
            ensemble.paths.len(),
            energy.bound,
            tol,
            energy.max_ratio
        ),
    ));
    Ok(Theorem1Outcome {
        report: TheoremOneReport {
            config: cfg.clone(),
            noise: noise.summary,
            t0_l2_sq,
            phi_sup,
            lambda_q,
            lambda_baseline,
            rhs: mc.rhs(),
            study,
            scheme_tol: tol,
            rows,
            energy,
            verdicts,
            note: "the bound is time-uniform; only the listed checkpoints are checked".into(),
        },
        ensemble,
    })
}

/// Parameters of the decay experiment.
#[derive(Debug, Clone, Serialize)]
pub struct DecayConfig {
    pub domain: Domain,
    pub h: f64,
    pub kappa: f64,
    pub vortex: VortexConfig,
    /// `None` picks Gamma from `intensity_over_kappa`.
    pub gamma: Option<f64>,
    pub intensity_over_kappa: f64,
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub paths: usize,
    pub study_paths: usize,
    pub t0: InitialSpec,
    pub decay_dt: f64,
    pub fit_window: (f64, f64),
    pub seed: u64,
}

impl DecayConfig {
    pub fn from_resolved(cfg: &ResolvedConfig) -> Result<Self> {
        let w = cfg.reals("fit_window")?;
        if w.len() != 2 || !(w[1] > w[0]) || !(w[0] >= 0.0) {
            return Err(Error::Config("fit_window needs start,end with 0 <= start < end".into()));
        }
        Ok(DecayConfig {
            domain: parse_domain(cfg)?,
            h: cfg.real("grid_spacing_h")?,
            kappa: cfg.real("kappa_diffusivity")?,
            vortex: vortex_from(cfg)?,
            gamma: cfg.real_or_auto("gamma_amplitude")?,
            intensity_over_kappa: cfg.real("decay_intensity_over_kappa")?,
            dt: cfg.real("dt_time_step")?,
            checkpoints: cfg.reals("checkpoint_times")?,
            paths: cfg.count("paths_count")?,
            study_paths: cfg.count("study_paths_count")?,
            t0: initial_spec(cfg)?,
            decay_dt: cfg.real("decay_dt_time_step")?,
            fit_window: (w[0], w[1]),
            seed: cfg.seed("seed")?,
        })
    }

    pub fn standard() -> Self {
        Self::from_resolved(&ResolvedConfig::defaults(crate::config::Command::Decay)).expect("valid defaults")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    /// `-d/dt ln <1, T_Q>` by least squares over the window.
    pub rate: f64,
    /// Backward-Euler rate `ln(1 + dt lambda) / dt` predicted by the eigenvalue.
    pub predicted_discrete: f64,
    pub eigenvalue: f64,
    pub points: usize,
}

/// Least-squares slope of `ln <1, T(t)>` over the window, and the number of points used.
pub fn fit_decay_rate(
    grid: &Grid,
    op: &DiscreteOperator,
    t0: &ScalarField,
    dt: f64,
    window: (f64, f64),
) -> Result<(f64, usize)> {
    let start = (window.0 / dt).round() as usize;
    let end = (window.1 / dt).round() as usize;
    let stride = ((end - start) / 16).max(1);
    let times: Vec<f64> = (start..=end).step_by(stride).map(|k| k as f64 * dt).collect();
    if times.len() < 2 {
        return Err(Error::InvalidParameter("fit window too short for the time step".into()));
    }
    let traj = solve_effective(grid, op, t0, dt, &times)?;
    let mut pts = Vec::new();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let m = grid.integral(s)?;
        if m > 0.0 {
            pts.push((*t, m.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::InvalidParameter("mass vanished inside the fit window".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok((-sxy / sxx, pts.len()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub config: DecayConfig,
    pub noise: NoiseSummary,
    /// `kappa lambda_D` of the continuum domain.
    pub kappa_lambda_d_exact: f64,
    /// Discrete `kappa lambda_D`.
    pub kappa_lambda_d: f64,
    /// Discrete `lambda_{D, kappa, Q}`.
    pub lambda_q: f64,
    pub baseline_fit: RateFit,
    pub noisy_fit: RateFit,
    pub enhancement: f64,
    pub study: StudyReport,
    pub scheme_tol: f64,
    pub rows: Vec<CheckpointRow>,
    /// `exp(-2 kappa lambda_D t)` at the checkpoints.
    pub baseline_decay: Vec<f64>,
    pub verdicts: Vec<Verdict>,
}

pub struct DecayOutcome {
    pub report: DecayReport,
    pub ensemble: PathEnsemble,
}

pub fn run_decay(cfg: &DecayConfig) -> Result<DecayOutcome> {
    if cfg.paths == 0 {
        return Err(Error::InvalidParameter("paths must be positive".into()));
    }
    let grid = build_grid(cfg.domain, cfg.h)?;
    let t0 = initial_field(&grid, &cfg.t0, path_seed(cfg.seed, u64::MAX - 1))?;
    if t0.values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("the decay experiment needs T0 >= 0".into()));
    }
    let t0_l2_sq = grid.dot(&t0, &t0)?;
    let profile = profile_for(&cfg.vortex)?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => {
            let unit = build_noise(&grid, &cfg.vortex.with_gamma(1.0), &profile)?;
            let q1 = 2.0 * unit.summary.sigma2_equivalent;
            if !(q1 > 0.0) {
                return Err(Error::InvalidParameter("vortex family leaves q = 0 inside D_2delta".into()));
            }
            (2.0 * cfg.intensity_over_kappa * cfg.kappa / q1).sqrt()
        }
    };
    let noise = build_noise(&grid, &cfg.vortex.with_gamma(gamma), &profile)?;
    let op = eddy_operator(&grid, cfg.kappa, &noise.qxx)?;
    let base = assemble_diffusion(&grid, &DiffusivityTensor::isotropic(&grid, cfg.kappa))?;
    let lambda_q = principal_eigenvalue(&grid, &op)?.lambda;
    let kappa_lambda_d = principal_eigenvalue(&grid, &base)?.lambda;
    let predicted = |lam: f64| (1.0 + cfg.decay_dt * lam).ln() / cfg.decay_dt;
    let (rate, points) = fit_decay_rate(&grid, &base, &t0, cfg.decay_dt, cfg.fit_window)?;
    let baseline_fit = RateFit {
        rate,
        predicted_discrete: predicted(kappa_lambda_d),
        eigenvalue: kappa_lambda_d,
        points,
    };
    let (rate, points) = fit_decay_rate(&grid, &op, &t0, cfg.decay_dt, cfg.fit_window)?;
    let noisy_fit = RateFit {
        rate,
        predicted_discrete: predicted(lambda_q),
        eigenvalue: lambda_q,
        points,
    };
    let phi = grid.scalar_from_fn(|p| if cfg.domain.contains(p) { 1.0 } else { 0.0 });
    let mc = MonteCarloSetup {
        grid: &grid,
        op: &op,
        fields: &noise.basis.fields,
        t0: &t0,
        phi: &phi,
        checkpoints: &cfg.checkpoints,
        kappa: cfg.kappa,
        eps_q: noise.summary.epsilon_q,
        lambda_q,
        t0_l2_sq,
        phi_sup: 1.0,
    };
    let study = mc.study(cfg.dt, cfg.study_paths.max(1), cfg.seed)?;
    let tol = study.scheme_tol;
    let pq = mc.effective_pairings(cfg.dt)?;
    let stepper = Stepper::new(&grid, &op, &noise.basis.fields, cfg.dt)?;
    let ids: Vec<u64> = (0..cfg.paths as u64).collect();
    let ensemble = run_ensemble(&stepper, &t0, &phi, &cfg.checkpoints, cfg.seed, &ids, 1)?;
    let rows = mc.rows(&ensemble, &pq, tol);
    let enhancement = noisy_fit.rate / kappa_lambda_d;
    let mut verdicts = vec![
        Verdict::new(
            "noise_intensity",
            noise.summary.sigma2_equivalent >= 10.0 * cfg.kappa,
            format!(
                "min q/2 on D_2delta = {:.4e} vs 10 kappa = {:.4e}",
                noise.summary.sigma2_equivalent,
                10.0 * cfg.kappa
            ),
        ),
        Verdict::new(
            "baseline_rate",
            (baseline_fit.rate / kappa_lambda_d - 1.0).abs() <= 0.05,
            format!("fitted {:.6e} vs kappa lambda_D {:.6e}", baseline_fit.rate, kappa_lambda_d),
        ),
        Verdict::new(
            "enhancement_factor",
            enhancement >= 2.0,
            format!("fitted rate / kappa lambda_D = {enhancement:.4}"),
        ),
        Verdict::new(
            "rate_matches_eigenvalue",
            (noisy_fit.rate / lambda_q - 1.0).abs() <= 0.10,
            format!("fitted {:.6e} vs lambda_Q {:.6e}", noisy_fit.rate, lambda_q),
        ),
    ];
    for r in &rows {
        verdicts.push(Verdict::new(
            format!("decay_bound_t={}", r.t),
            r.pass_decay,
            format!(
                "upper95 {:.6e} <= {:.6e} * (1 + {:.3e})",
                r.abs_integral_sq.upper95, r.decay_bound, tol
            ),
        ));
    }
    let baseline_decay = cfg
        .checkpoints
        .iter()
        .map(|t| (-2.0 * kappa_lambda_d * t).exp())
        .collect();
    Ok(DecayOutcome {
        report: DecayReport {
            config: cfg.clone(),
            noise: noise.summary,
            kappa_lambda_d_exact: cfg.kappa * dirichlet_lambda(cfg.domain),
            kappa_lambda_d,
            lambda_q,
            baseline_fit,
            noisy_fit,
            enhancement,
            study,
            scheme_tol: tol,
            rows,
            baseline_decay,
            verdicts,
        },
        ensemble,
    })
}

/// Parameters of the vortex-noise sweep.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseSweepConfig {
    pub domain: Domain,
    pub h: f64,
    pub m: usize,
    pub delta: f64,
    pub n_list: Vec<usize>,
    pub gamma_sq_coefficient: f64,
    pub radius_fraction: f64,
    pub geometric_candidates: Vec<usize>,
    pub q_sample_cells: usize,
    pub profile_eps: Vec<f64>,
}

impl NoiseSweepConfig {
    pub fn from_resolved(cfg: &ResolvedConfig) -> Result<Self> {
        Ok(NoiseSweepConfig {
            domain: parse_domain(cfg)?,
            h: cfg.real("grid_spacing_h")?,
            m: cfg.count("class_period_m")?,
            delta: cfg.real("delta_boundary_layer")?,
            n_list: cfg.counts("sweep_n_list")?,
            gamma_sq_coefficient: cfg.real("gamma_sq_coefficient")?,
            radius_fraction: cfg.real("radius_fraction")?,
            geometric_candidates: cfg.counts("geometric_n_candidates")?,
            q_sample_cells: cfg.count("q_sample_cells")?,
            profile_eps: cfg.reals("profile_eps_list")?,
        })
    }

    pub fn standard() -> Self {
        Self::from_resolved(&ResolvedConfig::defaults(crate::config::Command::NoiseSweep)).expect("valid defaults")
    }
}

/// Sample points in `D_{2 delta}`: a coarse set of base points, each refined by
/// an 8 x 8 set of offsets across one lattice cell of size `1/n`.
pub fn q_sample_points(domain: Domain, delta: f64, n: usize, cells: usize) -> Vec<[f64; 2]> {
    let (lo, hi) = match domain {
        Domain::UnitSquare => (2.0 * delta, 1.0 - 2.0 * delta),
        Domain::UnitDisk => (-(1.0 - 2.0 * delta), 1.0 - 2.0 * delta),
    };
    let cells = cells.max(1);
    let mut out = Vec::new();
    for bi in 0..cells {
        for bj in 0..cells {
            let t = |b: usize| {
                if cells == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * b as f64 / (cells - 1) as f64
                }
            };
            let base = [t(bi), t(bj)];
            for oi in 0..8 {
                for oj in 0..8 {
                    let x = [
                        base[0] + oi as f64 / (8.0 * n as f64),
                        base[1] + oj as f64 / (8.0 * n as f64),
                    ];
                    if domain.boundary_distance(x) > 2.0 * delta {
                        out.push(x);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometricScan {
    pub n: usize,
    pub samples: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub r: f64,
    pub gamma: f64,
    pub centers: usize,
    pub epsilon_q: f64,
    /// `M^2 Gamma^2 norm_w_sq`.
    pub epsilon_q_bound: f64,
    pub min_q_discrete: f64,
    pub min_q_continuum: f64,
    /// `Gamma^2 N / (16 pi)`.
    pub q_lower: f64,
    pub norm_w_sq: f64,
    pub orthogonality: ClassOrthogonality,
    pub geometric_ok: bool,
    pub past_threshold: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileNorm {
    pub eps: f64,
    pub norm_w_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSweepReport {
    pub config: NoiseSweepConfig,
    pub geometric_scan: Vec<GeometricScan>,
    pub geometric_threshold: Option<usize>,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<String>,
    /// `max norm_w_sq / ln N` over the sweep.
    pub fitted_c: f64,
    /// `max norm_w_sq / ln(1/eps)` over the extra profile table.
    pub fitted_c_profiles: f64,
    pub profile_norms: Vec<ProfileNorm>,
    pub verdicts: Vec<Verdict>,
}

pub fn run_noise_sweep(cfg: &NoiseSweepConfig) -> Result<NoiseSweepReport> {
    let grid = build_grid(cfg.domain, cfg.h)?;
    let mut geometric_scan = Vec::new();
    let mut cands = cfg.geometric_candidates.clone();
    cands.sort_unstable();
    cands.dedup();
    for &n in &cands {
        let pts = q_sample_points(cfg.domain, cfg.delta, n, cfg.q_sample_cells);
        let failures = pts
            .iter()
            .filter(|&&x| !geometric_condition(cfg.domain, n, cfg.delta, x))
            .count();
        geometric_scan.push(GeometricScan {
            n,
            samples: pts.len(),
            failures,
        });
    }
    let mut geometric_threshold = None;
    for s in geometric_scan.iter().rev() {
        if s.failures == 0 && s.samples > 0 {
            geometric_threshold = Some(s.n);
        } else {
            break;
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &n in &cfg.n_list {
        let Some((lo, hi)) = VortexConfig::admissible_r_range(n, cfg.m, cfg.delta) else {
            skipped.push(format!("N = {n}: empty admissible radius interval"));
            continue;
        };
        let r = lo + cfg.radius_fraction.clamp(0.0, 1.0) * (hi - lo);
        let gamma = (cfg.gamma_sq_coefficient / (n as f64).powf(1.5)).sqrt();
        let vc = VortexConfig::new(n, cfg.m, cfg.delta, r, gamma);
        let violations = validate_config(&vc);
        if !violations.is_empty() {
            let v: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            skipped.push(format!("N = {n}: {}", v.join("; ")));
            continue;
        }
        let profile = profile_for(&vc)?;
        let noise = match build_noise(&grid, &vc, &profile) {
            Ok(x) => x,
            Err(e) => {
                skipped.push(format!("N = {n}: {e}"));
                continue;
            }
        };
        let orthogonality = same_class_orthogonality(&noise.basis);
        let pts = q_sample_points(cfg.domain, cfg.delta, n, cfg.q_sample_cells);
        let mut min_q_continuum = f64::INFINITY;
        let mut geometric_ok = true;
        for &x in &pts {
            min_q_continuum = min_q_continuum.min(sym2_min_eigenvalue(continuum_q_at(cfg.domain, &vc, &profile, x)));
            geometric_ok &= geometric_condition(cfg.domain, n, cfg.delta, x);
        }
        let g2 = gamma * gamma;
        rows.push(SweepRow {
            n,
            r,
            gamma,
            centers: noise.summary.centers,
            epsilon_q: noise.summary.epsilon_q,
            epsilon_q_bound: (cfg.m * cfg.m) as f64 * g2 * profile.norm_w_sq,
            min_q_discrete: 2.0 * noise.summary.sigma2_equivalent,
            min_q_continuum,
            q_lower: g2 * n as f64 / (16.0 * std::f64::consts::PI),
            norm_w_sq: profile.norm_w_sq,
            orthogonality,
            geometric_ok,
            past_threshold: geometric_threshold.is_some_and(|t| n >= t),
            warnings: noise.summary.warnings,
        });
    }
    let mut profile_norms = Vec::new();
    for &eps in &cfg.profile_eps {
        let p = build_profile_eps(eps, default_table_resolution(eps))?;
        profile_norms.push(ProfileNorm {
            eps,
            norm_w_sq: p.norm_w_sq,
        });
    }
    let fitted_c = rows
        .iter()
        .map(|r| r.norm_w_sq / (r.n as f64).ln())
        .fold(0.0, f64::max);
    let fitted_c_profiles = profile_norms
        .iter()
        .map(|p| p.norm_w_sq / (1.0 / p.eps).ln())
        .fold(0.0, f64::max);
    let mut verdicts = Vec::new();
    if rows.is_empty() {
        verdicts.push(Verdict::new("rows", false, "no admissible row in the sweep"));
    }
    for r in &rows {
        verdicts.push(Verdict::new(
            format!("orthogonality_N={}", r.n),
            r.orthogonality.max_abs_dot == 0.0,
            format!(
                "{} same-class pairs, max |<u_i, u_j>| = {:e}",
                r.orthogonality.pairs_checked, r.orthogonality.max_abs_dot
            ),
        ));
        verdicts.push(Verdict::new(
            format!("eps_q_bound_N={}", r.n),
            r.epsilon_q <= r.epsilon_q_bound,
            format!("eps_Q {:.6e} <= M^2 Gamma^2 ||w||^2 = {:.6e}", r.epsilon_q, r.epsilon_q_bound),
        ));
        if r.past_threshold {
            verdicts.push(Verdict::new(
                format!("q_lower_bound_N={}", r.n),
                r.min_q_continuum >= r.q_lower && r.min_q_discrete >= r.q_lower,
                format!(
                    "min q continuum {:.6e}, discrete {:.6e} >= {:.6e}",
                    r.min_q_continuum, r.min_q_discrete, r.q_lower
                ),
            ));
        }
    }
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.n <= a.n {
            continue;
        }
        verdicts.push(Verdict::new(
            format!("eps_q_decreases_N={}->{}", a.n, b.n),
            b.epsilon_q < a.epsilon_q,
            format!("{:.6e} -> {:.6e}", a.epsilon_q, b.epsilon_q),
        ));
        verdicts.push(Verdict::new(
            format!("q_increases_N={}->{}", a.n, b.n),
            b.min_q_continuum > a.min_q_continuum,
            format!(
                "continuum {:.6e} -> {:.6e} (discrete {:.6e} -> {:.6e})",
                a.min_q_continuum, b.min_q_continuum, a.min_q_discrete, b.min_q_discrete
            ),
        ));
        let slope = (b.norm_w_sq - a.norm_w_sq) / ((b.n as f64).ln() - (a.n as f64).ln());
        verdicts.push(Verdict::new(
            format!("norm_growth_N={}->{}", a.n, b.n),
            slope <= fitted_c,
            format!("d norm_w_sq / d ln N = {slope:.5} <= C = {fitted_c:.5}"),
        ));
    }
    Ok(NoiseSweepReport {
        config: cfg.clone(),
        geometric_scan,
        geometric_threshold,
        rows,
        skipped,
        fitted_c,
        fitted_c_profiles,
        profile_norms,
        verdicts,
    })
}

impl NoiseSweepReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "n",
            "r",
            "gamma",
            "centers",
            "epsilon_q",
            "epsilon_q_bound",
            "min_q_discrete",
            "min_q_continuum",
            "q_lower",
            "norm_w_sq",
            "same_class_max_abs_dot",
            "geometric_ok",
        ])?;
        for r in &self.rows {
            wr.write_record(&[
                r.n.to_string(),
                format!("{:e}", r.r),
                format!("{:e}", r.gamma),
                r.centers.to_string(),
                format!("{:e}", r.epsilon_q),
                format!("{:e}", r.epsilon_q_bound),
                format!("{:e}", r.min_q_discrete),
                format!("{:e}", r.min_q_continuum),
                format!("{:e}", r.q_lower),
                format!("{:e}", r.norm_w_sq),
                format!("{:e}", r.orthogonality.max_abs_dot),
                r.geometric_ok.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Parameters of the principal-eigenvalue sweep.
#[derive(Debug, Clone, Serialize)]
pub struct EigenSweepConfig {
    pub kappas: Vec<f64>,
    pub sigma2s: Vec<f64>,
    pub deltas: Vec<f64>,
    pub d: usize,
    pub radial_cells: usize,
    pub include_2d: bool,
    pub h: f64,
    pub trend_steps: usize,
}

impl EigenSweepConfig {
    pub fn from_resolved(cfg: &ResolvedConfig) -> Result<Self> {
        Ok(EigenSweepConfig {
            kappas: cfg.reals("kappa_list")?,
            sigma2s: cfg.reals("sigma2_list")?,
            deltas: cfg.reals("delta_list")?,
            d: cfg.count("dimension_d")?,
            radial_cells: cfg.count("radial_cells")?,
            include_2d: cfg.flag("include_2d")?,
            h: cfg.real("grid_spacing_h")?,
            trend_steps: cfg.count("trend_steps")?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenRow {
    pub kappa: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub d: usize,
    pub lambda_radial: f64,
    pub lambda_2d: Option<f64>,
    pub bound_asym: f64,
    pub bound_min: f64,
    /// `lambda_radial - max(bound_asym, bound_min)`.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendRow {
    pub kappa: f64,
    pub n: usize,
    pub sigma2: f64,
    pub delta: f64,
    pub lambda_radial: f64,
    /// `lambda / (kappa lambda_D)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenSweepReport {
    pub config: EigenSweepConfig,
    /// `lambda_D` of the unit ball in dimension `d`.
    pub lambda_ball: f64,
    pub rows: Vec<EigenRow>,
    pub trend: Vec<TrendRow>,
    pub verdicts: Vec<Verdict>,
}

/// Dirichlet eigenvalue of the unit ball in dimension `d` (radial solver with `sigma2 = 0`).
pub fn ball_lambda(d: usize, cells: usize) -> Result<f64> {
    Ok(radial_lambda(&RadialProblem::new(1.0, 0.0, 0.5, d, cells))?.lambda)
}

pub fn run_eigen_sweep(cfg: &EigenSweepConfig) -> Result<EigenSweepReport> {
    let lambda_ball = ball_lambda(cfg.d, cfg.radial_cells)?;
    let disk = if cfg.include_2d && cfg.d == 2 {
        Some(build_grid(Domain::UnitDisk, cfg.h)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &kappa in &cfg.kappas {
        for &sigma2 in &cfg.sigma2s {
            for &delta in &cfg.deltas {
                let rad = radial_lambda(&RadialProblem::new(kappa, sigma2, delta, cfg.d, cfg.radial_cells))?;
                let lambda_2d = match &disk {
                    Some(g) => {
                        let op = assemble_diffusion(g, &DiffusivityTensor::layered(g, kappa, sigma2, delta))?;
                        Some(principal_eigenvalue(g, &op)?.lambda)
                    }
                    None => None,
                };
                let b = theorem_bounds(kappa, sigma2, delta, cfg.d);
                rows.push(EigenRow {
                    kappa,
                    sigma2,
                    delta,
                    d: cfg.d,
                    lambda_radial: rad.lambda,
                    lambda_2d,
                    bound_asym: b.bound_asym,
                    bound_min: b.bound_min,
                    margin: rad.lambda - b.bound_asym.max(b.bound_min),
                });
            }
        }
    }
    let mut trend = Vec::new();
    for &kappa in &cfg.kappas {
        for n in 1..=cfg.trend_steps {
            let sigma2 = 4f64.powi(n as i32);
            let delta = 0.5f64.powi(n as i32);
            let lam = radial_lambda(&RadialProblem::new(kappa, sigma2, delta, cfg.d, cfg.radial_cells))?.lambda;
            trend.push(TrendRow {
                kappa,
                n,
                sigma2,
                delta,
                lambda_radial: lam,
                ratio: lam / (kappa * lambda_ball),
            });
        }
    }
    let mut verdicts = Vec::new();
    let worst = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    verdicts.push(Verdict::new(
        "lower_bounds",
        rows.iter().all(|r| r.margin >= -1e-6),
        format!("{} rows, smallest margin {worst:.6e}", rows.len()),
    ));
    let flat: Vec<&EigenRow> = rows.iter().filter(|r| r.sigma2 == 0.0).collect();
    if !flat.is_empty() {
        let dev = flat
            .iter()
            .map(|r| (r.lambda_radial / (r.kappa * lambda_ball) - 1.0).abs())
            .fold(0.0, f64::max);
        verdicts.push(Verdict::new(
            "no_noise_baseline",
            dev <= 1e-6,
            format!("sigma2 = 0 rows match kappa lambda_D = kappa * {lambda_ball:.9}; max relative deviation {dev:.3e}"),
        ));
    }
    for &kappa in &cfg.kappas {
        let t: Vec<&TrendRow> = trend.iter().filter(|r| r.kappa == kappa).collect();
        if t.len() >= 2 {
            verdicts.push(Verdict::new(
                format!("trend_increasing_kappa={kappa}"),
                t.windows(2).all(|w| w[1].lambda_radial > w[0].lambda_radial),
                format!(
                    "ratios {}",
                    t.iter().map(|r| format!("{:.3}", r.ratio)).collect::<Vec<_>>().join(", ")
                ),
            ));
        }
        if let Some(r8) = t.iter().find(|r| r.n == 8) {
            verdicts.push(Verdict::new(
                format!("trend_exceeds_100_kappa={kappa}"),
                r8.ratio > 100.0,
                format!("lambda / (kappa lambda_D) at n = 8 is {:.3}", r8.ratio),
            ));
        }
    }
    Ok(EigenSweepReport {
        config: cfg.clone(),
        lambda_ball,
        rows,
        trend,
        verdicts,
    })
}

impl EigenSweepReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "kappa",
            "sigma2",
            "delta",
            "d",
            "lambda_radial",
            "lambda_2d",
            "bound_asym",
            "bound_min",
            "margin",
        ])?;
        for r in &self.rows {
            wr.write_record(&[
                format!("{:e}", r.kappa),
                format!("{:e}", r.sigma2),
                format!("{:e}", r.delta),
                r.d.to_string(),
                format!("{:e}", r.lambda_radial),
                r.lambda_2d.map(|x| format!("{x:e}")).unwrap_or_default(),
                format!("{:e}", r.bound_asym),
                format!("{:e}", r.bound_min),
                format!("{:e}", r.margin),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Parameters of the Kraichnan regime report.
#[derive(Debug, Clone, Serialize)]
pub struct KraichnanSweepConfig {
    pub sigma2: f64,
    pub zetas: Vec<f64>,
    pub k0: f64,
    pub k1s: Vec<f64>,
    pub d: usize,
    pub thresholds: RegimeThresholds,
    pub torus_grid: usize,
    pub seed: u64,
}

impl KraichnanSweepConfig {
    pub fn from_resolved(cfg: &ResolvedConfig) -> Result<Self> {
        Ok(KraichnanSweepConfig {
            sigma2: cfg.real("kr_sigma2")?,
            zetas: cfg.reals("kr_zeta_list")?,
            k0: cfg.real("kr_k0")?,
            k1s: cfg.reals("kr_k1_list")?,
            d: cfg.count("dimension_d")?,
            thresholds: RegimeThresholds {
                q_min: cfg.real("kr_q_min")?,
                eps_max: cfg.real("kr_eps_max")?,
            },
            torus_grid: cfg.count("torus_grid")?,
            seed: cfg.seed("seed")?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KraichnanRow {
    pub regime: RegimeReport,
    /// `lambda_min` and `lambda_max` of `Q(0)` by quadrature.
    pub q0_min_eigenvalue: f64,
    pub q0_max_eigenvalue: f64,
    /// `sigma2 |S^{d-1}| (d-1)/d * radial factor`.
    pub q0_closed_form: f64,
    pub torus: TorusCheck,
}

#[derive(Debug, Clone, Serialize)]
pub struct KraichnanSweepReport {
    pub config: KraichnanSweepConfig,
    pub rows: Vec<KraichnanRow>,
    pub skipped: Vec<String>,
    pub verdicts: Vec<Verdict>,
}

pub fn run_kraichnan_report(cfg: &KraichnanSweepConfig) -> Result<KraichnanSweepReport> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut verdicts = Vec::new();
    for &zeta in &cfg.zetas {
        for &k1 in &cfg.k1s {
            let p = KraichnanParams::new(cfg.sigma2, zeta, cfg.k0, k1, cfg.d);
            if let Err(e) = p.validate() {
                skipped.push(format!("zeta = {zeta}, k1 = {k1}: {e}"));
                continue;
            }
            let regime = regime_report(&p, cfg.thresholds)?;
            let q0 = covariance_at(&p, &vec![0.0; cfg.d])?;
            let eig = q0.clone().symmetric_eigenvalues();
            let q0_min = eig.min();
            let q0_max = eig.max();
            let closed = cfg.sigma2
                * crate::eigen::sphere_measure(cfg.d)
                * (cfg.d as f64 - 1.0)
                / cfg.d as f64
                * p.radial_factor();
            let torus = torus_check(&p, cfg.torus_grid, 400, cfg.seed)?;
            let tag = format!("zeta={zeta},k1={k1}");
            verdicts.push(Verdict::new(
                format!("closed_form_{tag}"),
                (q0_min / closed - 1.0).abs() <= 1e-6 && (q0_max / closed - 1.0).abs() <= 1e-6,
                format!("Q(0) eigenvalues [{q0_min:.9e}, {q0_max:.9e}] vs {closed:.9e}"),
            ));
            verdicts.push(Verdict::new(
                format!("q_lower_{tag}"),
                regime.q_lower <= q0_min * (1.0 + 1e-9),
                format!("q_lower {:.6e} <= lambda_min {:.6e}", regime.q_lower, q0_min),
            ));
            let top = torus.top_fft.unwrap_or(torus.top_mode).max(torus.top_mode);
            verdicts.push(Verdict::new(
                format!("eps_q_upper_{tag}"),
                top <= regime.eps_q_upper * (1.0 + 1e-12),
                format!(
                    "torus top {:.6e} (modes {:.6e}, fft {:?}) <= {:.6e}",
                    top,
                    torus.top_mode,
                    torus.top_fft,
                    eps_q_upper_bound(&p)
                ),
            ));
            rows.push(KraichnanRow {
                regime,
                q0_min_eigenvalue: q0_min,
                q0_max_eigenvalue: q0_max,
                q0_closed_form: closed,
                torus,
            });
        }
    }
    if rows.is_empty() {
        verdicts.push(Verdict::new("rows", false, "no valid parameter combination"));
    }
    Ok(KraichnanSweepReport {
        config: cfg.clone(),
        rows,
        skipped,
        verdicts,
    })
}

impl KraichnanSweepReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "zeta",
            "k0",
            "k1",
            "regime",
            "q_lower",
            "q0_min_eigenvalue",
            "q0_closed_form",
            "eps_q_upper",
            "torus_top_mode",
            "torus_top_fft",
            "favourable",
        ])?;
        for r in &self.rows {
            let p = &r.regime.params;
            wr.write_record(&[
                format!("{:e}", p.zeta),
                format!("{:e}", p.k0),
                format!("{:e}", p.k1),
                format!("{:?}", r.regime.regime),
                format!("{:e}", r.regime.q_lower),
                format!("{:e}", r.q0_min_eigenvalue),
                format!("{:e}", r.q0_closed_form),
                format!("{:e}", r.regime.eps_q_upper),
                format!("{:e}", r.torus.top_mode),
                r.torus.top_fft.map(|x| format!("{x:e}")).unwrap_or_default(),
                r.regime.favourable.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Admissibility of a vortex configuration and the lattice it induces.
#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub vortex: VortexConfig,
    pub domain: Domain,
    pub admissible: bool,
    pub violations: Vec<String>,
    pub admissible_r_range: Option<(f64, f64)>,
    pub lattice_centers: Option<usize>,
    pub grid_spacing_ok: bool,
    pub verdicts: Vec<Verdict>,
}

pub fn run_validate(cfg: &ResolvedConfig) -> Result<ValidateReport> {
    let vortex = vortex_from(cfg)?;
    let domain = parse_domain(cfg)?;
    let h = cfg.real("grid_spacing_h")?;
    let violations: Vec<String> = validate_config(&vortex).iter().map(|v| v.to_string()).collect();
    let admissible = violations.is_empty();
    let lattice_centers = if admissible {
        enumerate_lattice(domain, vortex.n, vortex.m, vortex.delta).ok().map(|l| l.len())
    } else {
        None
    };
    let grid_spacing_ok = h < vortex.r * (1.0 / 3.0 - vortex.eps);
    let verdicts = vec![Verdict::new(
        "admissible",
        admissible,
        if admissible {
            "admissible".to_string()
        } else {
            violations.join("; ")
        },
    )];
    Ok(ValidateReport {
        vortex,
        domain,
        admissible,
        violations,
        admissible_r_range: VortexConfig::admissible_r_range(vortex.n, vortex.m, vortex.delta),
        lattice_centers,
        grid_spacing_ok,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    #[test]
    fn sample_points_stay_inside_the_inner_region() {
        for d in [Domain::UnitSquare, Domain::UnitDisk] {
            let pts = q_sample_points(d, 0.1, 200, 3);
            assert!(!pts.is_empty());
            assert!(pts.iter().all(|&p| d.boundary_distance(p) > 0.2));
        }
    }

    #[test]
    fn estimate_upper_bound() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert!((e.mean - 2.5).abs() < 1e-15);
        assert!((e.upper95 - (2.5 + Z95 * (5.0f64 / 12.0).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn validate_reference_config() {
        let r = run_validate(&ResolvedConfig::defaults(Command::Validate)).unwrap();
        assert!(r.admissible);
        assert!(r.grid_spacing_ok);
        assert!(r.lattice_centers.unwrap() > 0);
    }

    #[test]
    fn test_functions_have_unit_sup() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 32.0).unwrap();
        for spec in [
            TestFunctionSpec::ConstantApprox { slope: 10.0 },
            TestFunctionSpec::Plateau { radius: 0.3, slope: 20.0 },
            TestFunctionSpec::Eigenfunction,
        ] {
            let (_, sup) = test_function(&g, &spec).unwrap();
            assert!((sup - 1.0).abs() < 1e-12);
        }
        let t0 = initial_field(&g, &InitialSpec::RandomSmooth, 3).unwrap();
        assert!(t0.values.iter().all(|&v| v >= 0.0));
        assert!((g.dot(&t0, &t0).unwrap() - 1.0).abs() < 1e-12);
    }
}
