//! Time stepping for the Ito transport-noise heat equation and its
//! deterministic effective counterpart.
//!
//! One step is a backward-Euler solve with the eddy operator `A_Q`, followed
//! by an explicit Euler-Maruyama transport update driven by the vortex family.

use crate::elliptic::{DiscreteOperator, OperatorKind, TransportStencil};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::sparse::{dot, pcg, CgOptions, CsrMatrix};
use crate::vortex::SparseField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    SemiImplicitDiffusionExplicitNoise,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeStepConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub seed: u64,
}

impl TimeStepConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Self {
        TimeStepConfig {
            dt,
            t_end,
            scheme: Scheme::SemiImplicitDiffusionExplicitNoise,
            seed,
        }
    }
}

/// Step indices of the checkpoint times, which must be multiples of `dt`.
pub fn checkpoint_steps(dt: f64, checkpoints: &[f64]) -> Result<Vec<usize>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let s = t / dt;
        let k = s.round();
        if !(t >= 0.0) || (s - k).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "checkpoint {t} is not a non-negative multiple of dt = {dt}"
            )));
        }
        out.push(k as usize);
    }
    if out.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("checkpoints must increase".into()));
    }
    Ok(out)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `path` under master seed `master`: `splitmix64(master ^ splitmix64(path))`.
pub fn path_seed(master: u64, path: u64) -> u64 {
    splitmix64(master ^ splitmix64(path))
}

/// Standard normals for `(path seed, step)`, one per noise field in order.
///
/// Step `s` reads ChaCha8 stream `s` of the path key, so any step can be
/// regenerated without replaying the earlier ones.
pub fn fill_normals(seed: u64, step: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    for x in out.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
}

/// Increment of a step of size `refine * dt_fine`, built from the `refine`
/// fine-step normals it covers, so coarse and fine runs share a Brownian path.
pub fn coupled_normals(seed: u64, step: u64, refine: u64, out: &mut [f64], scratch: &mut [f64]) {
    if refine == 1 {
        fill_normals(seed, step, out);
        return;
    }
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..refine {
        fill_normals(seed, step * refine + i, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s;
        }
    }
    let c = 1.0 / (refine as f64).sqrt();
    out.iter_mut().for_each(|x| *x *= c);
}

/// State of one path; `values` holds interior unknowns only.
#[derive(Debug, Clone)]
pub struct SpdeState {
    pub t: f64,
    pub step: u64,
    pub values: Vec<f64>,
    /// `int_0^t ||grad T||^2 ds`, accumulated on the implicit stage.
    pub energy: f64,
}

impl SpdeState {
    pub fn new(grid: &Grid, t0: &ScalarField) -> Self {
        SpdeState {
            t: 0.0,
            step: 0,
            values: grid.interior_values(t0),
            energy: 0.0,
        }
    }
}

/// Per-path scratch buffers.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub xi: Vec<f64>,
    scratch_xi: Vec<f64>,
    velocity: Vec<[f64; 2]>,
    rhs: Vec<f64>,
    noise: Vec<f64>,
}

/// Shared read-only operators for one `dt`.
pub struct Stepper<'a> {
    grid: &'a Grid,
    implicit: CsrMatrix,
    stencil: TransportStencil,
    fields: &'a [SparseField],
    pub dt: f64,
    pub cg: CgOptions,
}

impl<'a> Stepper<'a> {
    /// `a_q` is the Ito drift `div((kappa I + Q/2) grad)`; `fields` are the `u_j`.
    pub fn new(grid: &'a Grid, a_q: &DiscreteOperator, fields: &'a [SparseField], dt: f64) -> Result<Self> {
        if a_q.kind != OperatorKind::Diffusion || a_q.key != grid.key() {
            return Err(Error::GridMismatch);
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
        }
        Ok(Stepper {
            grid,
            implicit: a_q.matrix.scaled_plus_identity(-dt, 1.0),
            stencil: TransportStencil::new(grid),
            fields,
            dt,
            cg: CgOptions {
                rel_tol: 1e-10,
                max_iter: 5000,
            },
        })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.grid.interior_count();
        Workspace {
            xi: vec![0.0; self.fields.len()],
            scratch_xi: vec![0.0; self.fields.len()],
            velocity: vec![[0.0; 2]; self.grid.node_count()],
            rhs: vec![0.0; n],
            noise: vec![0.0; n],
        }
    }

    /// Backward-Euler stage `(I - dt A_Q) T* = T`, warm-started from `T`.
    pub fn implicit_stage(&self, state: &mut SpdeState, ws: &mut Workspace) -> Result<()> {
        ws.rhs.copy_from_slice(&state.values);
        pcg(&self.implicit, &ws.rhs, &mut state.values, self.cg)?;
        state.energy += self.dt * self.grid.gradient_energy_interior(&state.values);
        Ok(())
    }

    /// `T += sqrt(dt) B(sum_j xi_j u_j) T` with the normals in `ws.xi`.
    pub fn noise_stage(&self, state: &mut SpdeState, ws: &mut Workspace) {
        if self.fields.is_empty() {
            return;
        }
        ws.velocity.iter_mut().for_each(|v| *v = [0.0; 2]);
        for (f, &x) in self.fields.iter().zip(&ws.xi) {
            f.scatter_add(x, &mut ws.velocity);
        }
        self.stencil.apply(&ws.velocity, &state.values, &mut ws.noise);
        let s = self.dt.sqrt();
        for (v, n) in state.values.iter_mut().zip(&ws.noise) {
            *v += s * n;
        }
    }

    /// One full step with the normals already in `ws.xi`.
    pub fn step_with(&self, state: &mut SpdeState, ws: &mut Workspace) -> Result<()> {
        self.implicit_stage(state, ws)?;
        self.noise_stage(state, ws);
        state.step += 1;
        state.t = state.step as f64 * self.dt;
        Ok(())
    }

    /// One step drawing the normals of `(seed, state.step)` at refinement `refine`.
    pub fn step(&self, state: &mut SpdeState, ws: &mut Workspace, seed: u64, refine: u64) -> Result<()> {
        if !self.fields.is_empty() {
            coupled_normals(seed, state.step, refine, &mut ws.xi, &mut ws.scratch_xi);
        }
        self.step_with(state, ws)
    }
}

/// Observables of one path at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub t: f64,
    /// `<phi, T(t)>`.
    pub phi_pairing: f64,
    pub l2norm_sq: f64,
    pub energy_integral: f64,
    /// `int_D |T(t)|`.
    pub abs_integral: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathRecord {
    pub path_id: u64,
    pub seed: u64,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathEnsemble {
    pub dt: f64,
    pub checkpoints: Vec<f64>,
    pub paths: Vec<PathRecord>,
}

fn observe(grid: &Grid, t: f64, v: &[f64], phi: &[f64], energy: f64) -> Observation {
    let h2 = grid.h() * grid.h();
    Observation {
        t,
        phi_pairing: h2 * dot(phi, v),
        l2norm_sq: h2 * dot(v, v),
        energy_integral: energy,
        abs_integral: h2 * v.iter().map(|x| x.abs()).sum::<f64>(),
    }
}

/// Runs one seeded path and records the observables at `steps`.
pub fn run_path(
    stepper: &Stepper,
    t0: &[f64],
    phi: &[f64],
    steps: &[usize],
    seed: u64,
    refine: u64,
) -> Result<Vec<Observation>> {
    let grid = stepper.grid();
    let mut state = SpdeState {
        t: 0.0,
        step: 0,
        values: t0.to_vec(),
        energy: 0.0,
    };
    let mut ws = stepper.workspace();
    let mut out = Vec::with_capacity(steps.len());
    for &target in steps {
        while (state.step as usize) < target {
            stepper.step(&mut state, &mut ws, seed, refine)?;
        }
        out.push(observe(grid, target as f64 * stepper.dt, &state.values, phi, state.energy));
    }
    Ok(out)
}

/// Runs paths `path_ids` in parallel; records come back in path order.
pub fn run_ensemble(
    stepper: &Stepper,
    t0: &ScalarField,
    phi: &ScalarField,
    checkpoints: &[f64],
    master_seed: u64,
    path_ids: &[u64],
    refine: u64,
) -> Result<PathEnsemble> {
    let grid = stepper.grid();
    let steps = checkpoint_steps(stepper.dt, checkpoints)?;
    let t0v = grid.interior_values(t0);
    let phiv = grid.interior_values(phi);
    let paths = path_ids
        .par_iter()
        .map(|&p| {
            let seed = path_seed(master_seed, p);
            run_path(stepper, &t0v, &phiv, &steps, seed, refine)
                .map(|observations| PathRecord {
                    path_id: p,
                    seed,
                    observations,
                })
                .map_err(|e| Error::PathFailed {
                    path: p,
                    seed,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        dt: stepper.dt,
        checkpoints: checkpoints.to_vec(),
        paths,
    })
}

impl PathEnsemble {
    /// CSV with columns `path_id,t,phi_pairing,l2norm_sq,energy_integral,abs_integral`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path_id", "t", "phi_pairing", "l2norm_sq", "energy_integral", "abs_integral"])?;
        for p in &self.paths {
            for o in &p.observations {
                wr.write_record(&[
                    p.path_id.to_string(),
                    format!("{:e}", o.t),
                    format!("{:e}", o.phi_pairing),
                    format!("{:e}", o.l2norm_sq),
                    format!("{:e}", o.energy_integral),
                    format!("{:e}", o.abs_integral),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Deterministic trajectory of the effective equation at the checkpoints.
#[derive(Debug, Clone)]
pub struct EffectiveTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<ScalarField>,
    /// Energy integral at each checkpoint.
    pub energy: Vec<f64>,
}

/// Backward Euler for `dT/dt = A T`, using the same solver as the stochastic
/// step, so a noiseless path reproduces it bit for bit.
pub fn solve_effective(
    grid: &Grid,
    op: &DiscreteOperator,
    t0: &ScalarField,
    dt: f64,
    checkpoints: &[f64],
) -> Result<EffectiveTrajectory> {
    let stepper = Stepper::new(grid, op, &[], dt)?;
    let steps = checkpoint_steps(dt, checkpoints)?;
    let mut state = SpdeState::new(grid, t0);
    let mut ws = stepper.workspace();
    let mut states = Vec::with_capacity(steps.len());
    let mut energy = Vec::with_capacity(steps.len());
    for &target in &steps {
        while (state.step as usize) < target {
            stepper.step_with(&mut state, &mut ws)?;
        }
        states.push(grid.scalar_from_interior(&state.values));
        energy.push(state.energy);
    }
    Ok(EffectiveTrajectory {
        dt,
        times: steps.iter().map(|&s| s as f64 * dt).collect(),
        states,
        energy,
    })
}

/// Per-path energy inequality check `E(t_end) <= (1 + tol) ||T0||^2 / (2 kappa)`.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub bound: f64,
    pub tol: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub violations: usize,
    /// Mean of `||T(t_end)||^2 + 2 kappa E(t_end)` over paths.
    pub mean_balance: f64,
    pub balance_stderr: f64,
    pub initial_l2_sq: f64,
}

pub fn energy_report(ensemble: &PathEnsemble, kappa: f64, initial_l2_sq: f64, tol: f64) -> EnergyReport {
    let bound = initial_l2_sq / (2.0 * kappa);
    let mut ratios = Vec::with_capacity(ensemble.paths.len());
    let mut balance = Vec::with_capacity(ensemble.paths.len());
    for p in &ensemble.paths {
        if let Some(o) = p.observations.last() {
            ratios.push(o.energy_integral / bound);
            balance.push(o.l2norm_sq + 2.0 * kappa * o.energy_integral);
        }
    }
    let n = ratios.len().max(1) as f64;
    let (mean_balance, var) = mean_var(&balance);
    EnergyReport {
        bound,
        tol,
        max_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        mean_ratio: ratios.iter().sum::<f64>() / n,
        violations: ratios.iter().filter(|&&r| r > 1.0 + tol).count(),
        mean_balance,
        balance_stderr: (var / n).sqrt(),
        initial_l2_sq,
    }
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{assemble_diffusion, DiffusivityTensor};
    use crate::grid::{build_grid, Domain};
    use std::f64::consts::PI;

    fn sine(grid: &Grid) -> ScalarField {
        grid.scalar_from_fn(|p| (PI * p[0]).sin() * (PI * p[1]).sin())
    }

    #[test]
    fn normals_are_keyed_by_step() {
        let mut a = vec![0.0; 5];
        let mut b = vec![0.0; 5];
        fill_normals(7, 3, &mut a);
        fill_normals(7, 3, &mut b);
        assert_eq!(a, b);
        fill_normals(7, 4, &mut b);
        assert_ne!(a, b);
        assert_ne!(path_seed(1, 0), path_seed(1, 1));
    }

    #[test]
    fn coupled_increment_sums_fine_steps() {
        let mut fine0 = vec![0.0; 3];
        let mut fine1 = vec![0.0; 3];
        fill_normals(11, 10, &mut fine0);
        fill_normals(11, 11, &mut fine1);
        let mut coarse = vec![0.0; 3];
        let mut scratch = vec![0.0; 3];
        coupled_normals(11, 5, 2, &mut coarse, &mut scratch);
        for i in 0..3 {
            assert!((coarse[i] - (fine0[i] + fine1[i]) / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn implicit_step_on_eigenvector() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 16.0).unwrap();
        let op = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, 1.0)).unwrap();
        let lam = 8.0 / (g.h() * g.h()) * (PI * g.h() / 2.0).sin().powi(2);
        let dt = 1e-3;
        let traj = solve_effective(&g, &op, &sine(&g), dt, &[dt]).unwrap();
        let expect = sine(&g).scaled(1.0 / (1.0 + dt * lam));
        for (a, b) in traj.states[0].values.iter().zip(&expect.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoints_must_align() {
        assert_eq!(checkpoint_steps(0.01, &[0.0, 0.02, 0.05]).unwrap(), vec![0, 2, 5]);
        assert!(checkpoint_steps(0.01, &[0.015]).is_err());
        assert!(checkpoint_steps(0.01, &[0.02, 0.01]).is_err());
    }

    #[test]
    fn noiseless_energy_identity_is_dissipative() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 16.0).unwrap();
        let kappa = 0.3;
        let op = assemble_diffusion(&g, &DiffusivityTensor::isotropic(&g, kappa)).unwrap();
        let t0 = g.scalar_from_fn(|p| p[0] * (1.0 - p[1]) * 4.0);
        let traj = solve_effective(&g, &op, &t0, 1e-3, &[0.05]).unwrap();
        let n0 = g.dot(&t0, &t0).unwrap();
        let n1 = g.dot(&traj.states[0], &traj.states[0]).unwrap();
        assert!(n1 + 2.0 * kappa * traj.energy[0] <= n0 * (1.0 + 1e-12));
        assert!(n1 + 2.0 * kappa * traj.energy[0] > 0.9 * n0);
    }
}
