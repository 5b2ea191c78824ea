//! Acceptance run: one line per criterion, nonzero exit if an attainable
//! criterion fails.

use eddylab::config::{Command, ResolvedConfig};
use eddylab::eigen::{principal_eigenvalue, radial_lambda, theorem_bounds, RadialProblem};
use eddylab::elliptic::{assemble_diffusion, ito_corrector_check, DiffusivityTensor};
use eddylab::grid::{build_grid, Domain};
use eddylab::harness::{self, DecayConfig, KraichnanSweepConfig, NoiseSweepConfig, Theorem1Config};
use eddylab::kraichnan::{covariance_at, KraichnanParams};
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure is expected and documented; it does not fail the run.
    known_shortfall: bool,
}

fn ok(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        detail,
        known_shortfall: false,
    }
}

fn c1_eigen_oracles() -> Outcome {
    let h = 1.0 / 128.0;
    let kappa = 0.37;
    let sq = build_grid(Domain::UnitSquare, h).unwrap();
    let op = assemble_diffusion(&sq, &DiffusivityTensor::isotropic(&sq, kappa)).unwrap();
    let ls = principal_eigenvalue(&sq, &op).unwrap().lambda;
    let es = ls / (kappa * 2.0 * PI * PI) - 1.0;
    let disk = build_grid(Domain::UnitDisk, h).unwrap();
    let op = assemble_diffusion(&disk, &DiffusivityTensor::isotropic(&disk, kappa)).unwrap();
    let ld = principal_eigenvalue(&disk, &op).unwrap().lambda;
    let ball = harness::ball_lambda(2, 4096).unwrap();
    let ed = ld / (kappa * ball) - 1.0;
    let eb = ball / harness::J01_SQ - 1.0;
    ok(
        es.abs() <= 0.01 && ed.abs() <= 0.02 && eb.abs() <= 1e-4,
        format!("square rel err {es:.2e}, disk rel err {ed:.2e} (radial oracle {ball:.6}, j01^2 err {eb:.1e})"),
    )
}

fn c2_lower_bounds() -> Outcome {
    let kappa = 1e-2;
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for i in 0..10 {
        let sigma2 = 10f64.powf(-2.0 + 5.0 * i as f64 / 9.0);
        for j in 0..10 {
            let delta = 0.02 + 0.48 * j as f64 / 9.0;
            let lam = radial_lambda(&RadialProblem::new(kappa, sigma2, delta, 2, 4096)).unwrap().lambda;
            let b = theorem_bounds(kappa, sigma2, delta, 2);
            let a = kappa * 2.0 * sigma2 / (kappa + delta * sigma2);
            let m = 0.5 * 2.0 * sigma2.min(kappa / delta);
            assert!((a - b.bound_asym).abs() <= 1e-12 * a.max(1.0));
            assert!((m - b.bound_min).abs() <= 1e-12 * m.max(1.0));
            worst = worst.min(lam - a.max(m));
            count += 1;
        }
    }
    ok(worst >= -1e-6, format!("{count} points, smallest margin {worst:.4e}"))
}

fn c3_trend() -> Outcome {
    let kappa = 1e-2;
    let ball = harness::ball_lambda(2, 4096).unwrap();
    let mut lams = Vec::new();
    for n in 1..=8 {
        let p = RadialProblem::new(kappa, 4f64.powi(n), 0.5f64.powi(n), 2, 4096);
        lams.push(radial_lambda(&p).unwrap().lambda);
    }
    let increasing = lams.windows(2).all(|w| w[1] > w[0]);
    let ratio8 = lams[7] / (kappa * ball);
    let pass = increasing && ratio8 > 100.0;
    // thin layer, sigma2 delta >> kappa: lambda ~ (2 kappa / delta)(1 + O(delta))
    let limit = 2.0 / (0.5f64.powi(8) * ball);
    let ratios: Vec<String> = lams.iter().map(|l| format!("{:.1}", l / (kappa * ball))).collect();
    Outcome {
        pass,
        detail: format!(
            "increasing {increasing}; lambda/(kappa lambda_D) = [{}]; at n = 8 {ratio8:.2} (thin-layer estimate {limit:.2}) vs 100",
            ratios.join(", ")
        ),
        known_shortfall: increasing && !pass && ratio8 <= limit * 1.02,
    }
}

fn c4_noise_sweep() -> Outcome {
    let r = harness::run_noise_sweep(&NoiseSweepConfig::standard()).unwrap();
    let has = |p: &str| r.verdicts.iter().any(|v| v.name.starts_with(p));
    let failed: Vec<&str> = r.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.as_str()).collect();
    let complete = r.rows.len() == 2 && has("orthogonality") && has("eps_q_bound") && has("q_lower_bound") && has("norm_growth");
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|x| {
            format!(
                "N={} eps_Q {:.3e}/{:.3e} q {:.3e}>={:.3e} w {:.4}",
                x.n, x.epsilon_q, x.epsilon_q_bound, x.min_q_continuum, x.q_lower, x.norm_w_sq
            )
        })
        .collect();
    ok(
        complete && failed.is_empty(),
        format!(
            "{}; threshold {:?}; fitted C {:.4}; failed {:?}",
            rows.join("; "),
            r.geometric_threshold,
            r.fitted_c,
            failed
        ),
    )
}

fn c5_corrector() -> Outcome {
    let mut res = Vec::new();
    for h in [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
        let g = build_grid(Domain::UnitSquare, h).unwrap();
        let u1 = g.vector_from_fn(|p| {
            [
                (PI * p[0]).sin() * (PI * p[1]).cos(),
                -(PI * p[0]).cos() * (PI * p[1]).sin(),
            ]
        });
        let u2 = g.vector_from_fn(|p| [0.5 * (2.0 * PI * p[1]).cos(), 0.3 * (2.0 * PI * p[0]).sin()]);
        let f1 = g.scalar_from_fn(|p| (PI * p[0]).sin() * (2.0 * PI * p[1]).sin());
        let f2 = g.scalar_from_fn(|p| (-8.0 * ((p[0] - 0.4).powi(2) + (p[1] - 0.6).powi(2))).exp());
        res.push(ito_corrector_check(&g, &[u1, u2], &[f1, f2], 0.1).unwrap().max_abs_residual);
    }
    let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ok(
        orders.iter().all(|&o| o >= 1.8) && res[2] < 1e-2,
        format!("residuals {res:.3?}, observed orders {orders:.2?}"),
    )
}

fn c6_c7_theorem1() -> (Outcome, Outcome) {
    let cfg = Theorem1Config::desk();
    assert_eq!(cfg.paths, 2000);
    assert_eq!(cfg.checkpoints.len(), 3);
    let o = harness::run_theorem1(&cfg).unwrap();
    let r = &o.report;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|x| format!("t={} upper95 {:.3e} rhs {:.3e}", x.t, x.lhs.upper95, x.rhs))
        .collect();
    let c6 = ok(
        r.rows.iter().all(|x| x.lhs.upper95 <= x.rhs * (1.0 + r.scheme_tol)),
        format!(
            "{} paths; {}; scheme_tol {:.3e} from {} coupled dt/dt2 paths",
            o.ensemble.paths.len(),
            rows.join("; "),
            r.scheme_tol,
            r.study.paths
        ),
    );
    let e = &r.energy;
    let bound = r.t0_l2_sq / (2.0 * cfg.kappa) * (1.0 + r.scheme_tol);
    let worst = o
        .ensemble
        .paths
        .iter()
        .filter_map(|p| p.observations.last())
        .map(|x| x.energy_integral)
        .fold(0.0, f64::max);
    let c7 = ok(
        e.violations == 0 && worst <= bound,
        format!("{} violations over {} paths; max E(t_end) {worst:.4e} <= {bound:.4e}", e.violations, o.ensemble.paths.len()),
    );
    (c6, c7)
}

fn c8_decay() -> Outcome {
    let o = harness::run_decay(&DecayConfig::standard()).unwrap();
    let r = &o.report;
    let intensity = r.noise.sigma2_equivalent / r.config.kappa;
    let factor = r.noisy_fit.rate / r.kappa_lambda_d;
    let mismatch = r.noisy_fit.rate / r.lambda_q - 1.0;
    ok(
        intensity >= 10.0 && factor >= 2.0 && mismatch.abs() <= 0.10,
        format!(
            "intensity {intensity:.2} kappa; rate {:.4e} = {factor:.3} x kappa lambda_D; lambda_Q {:.4e} (rel diff {mismatch:.2e})",
            r.noisy_fit.rate, r.lambda_q
        ),
    )
}

/// `int_{k0}^{k1} k0^-2 (k/k0)^(-2-zeta) k dk` by Simpson in `ln k`.
fn radial_oracle(zeta: f64, k0: f64, k1: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (0.0, (k1 / k0).ln());
    let hh = (b - a) / n as f64;
    let f = |s: f64| (-zeta * s).exp();
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * hh);
    }
    acc * hh / 3.0
}

fn c9_kraichnan() -> Outcome {
    let cfg = KraichnanSweepConfig::from_resolved(&ResolvedConfig::defaults(Command::KraichnanReport)).unwrap();
    let mut worst: f64 = 0.0;
    let mut finite = 0;
    for &zeta in &cfg.zetas {
        for &k1 in cfg.k1s.iter().filter(|k| k.is_finite()) {
            let p = KraichnanParams::new(cfg.sigma2, zeta, cfg.k0, k1, 2);
            let q = covariance_at(&p, &[0.0, 0.0]).unwrap();
            let want = cfg.sigma2 * PI * radial_oracle(zeta, cfg.k0, k1);
            for (i, j) in [(0, 0), (1, 1)] {
                worst = worst.max((q[(i, j)] / want - 1.0).abs());
            }
            worst = worst.max(q[(0, 1)].abs() / want);
            finite += 1;
        }
    }
    let r = harness::run_kraichnan_report(&cfg).unwrap();
    let shells = r.rows.len();
    let bounds_ok = r
        .verdicts
        .iter()
        .filter(|v| v.name.starts_with("q_lower") || v.name.starts_with("eps_q_upper"))
        .all(|v| v.pass);
    ok(
        worst <= 1e-6 && shells >= 5 && bounds_ok,
        format!("closed form max rel err {worst:.2e} over {finite} shells; bound checks on {shells} shells pass {bounds_ok}"),
    )
}

fn c10_reproducible() -> Outcome {
    let mut cfg = Theorem1Config::desk();
    cfg.paths = 12;
    cfg.study_paths = 4;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let o = harness::run_theorem1(&cfg).unwrap();
            let mut csv = Vec::new();
            o.ensemble.write_csv(&mut csv).unwrap();
            (serde_json::to_vec_pretty(&o.report).unwrap(), csv)
        })
    };
    let (ra, ca) = run(1);
    let (rb, cb) = run(3);
    ok(
        ra == rb && ca == cb,
        format!("report {} bytes, observables {} bytes, 1 vs 3 threads", ra.len(), ca.len()),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        let tag = match (o.pass, o.known_shortfall) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => "FAIL",
        };
        println!("criterion {n:>2} {name}: {tag} | {} [{:.0?}]", o.detail, start.elapsed());
        results.push((n, name, o));
    };
    record(1, "eigenvalue oracles", c1_eigen_oracles());
    record(2, "eigenvalue lower bounds", c2_lower_bounds());
    record(3, "thin-layer trend", c3_trend());
    record(4, "vortex-noise estimates", c4_noise_sweep());
    record(5, "Ito corrector identity", c5_corrector());
    let (c6, c7) = c6_c7_theorem1();
    record(6, "Monte Carlo bound", c6);
    record(7, "energy inequality", c7);
    record(8, "enhanced decay", c8_decay());
    record(9, "Kraichnan covariance", c9_kraichnan());
    record(10, "reproducibility", c10_reproducible());
    let passed = results.iter().filter(|r| r.2.pass).count();
    let hard: Vec<usize> = results
        .iter()
        .filter(|r| !r.2.pass && !r.2.known_shortfall)
        .map(|r| r.0)
        .collect();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !hard.is_empty() {
        println!("unexpected failures: {hard:?}");
        std::process::exit(1);
    }
}
