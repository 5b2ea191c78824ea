use eddylab::config::{parse_text, Command, ResolvedConfig};
use eddylab::eigen::{radial_lambda, theorem_bounds, RadialProblem};
use eddylab::elliptic::{assemble_diffusion, DiffusivityTensor, TransportStencil};
use eddylab::grid::{build_grid, Domain};
use eddylab::kraichnan::{covariance_at, KraichnanParams};
use eddylab::spde::{coupled_normals, fill_normals, path_seed};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn asymptotic_bound_dominates_min_bound(
        kappa in 1e-4f64..1.0,
        sigma2 in 0.0f64..1e4,
        delta in 1e-3f64..0.9,
        d in 2usize..4,
    ) {
        let b = theorem_bounds(kappa, sigma2, delta, d);
        prop_assert!(b.bound_asym >= b.bound_min * (1.0 - 1e-12));
    }

    #[test]
    fn path_seeds_are_distinct(master in any::<u64>(), a in 0u64..1_000_000, b in 0u64..1_000_000) {
        prop_assume!(a != b);
        prop_assert_ne!(path_seed(master, a), path_seed(master, b));
    }

    #[test]
    fn normals_are_a_function_of_seed_and_step(seed in any::<u64>(), step in 0u64..1000) {
        let mut a = vec![0.0; 7];
        let mut b = vec![0.0; 7];
        fill_normals(seed, step, &mut a);
        fill_normals(seed, step, &mut b);
        prop_assert_eq!(&a, &b);
        let mut c = vec![0.0; 7];
        fill_normals(seed, step + 1, &mut c);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn coupled_increment_sums_fine_increments(seed in any::<u64>(), step in 0u64..100) {
        let mut out = vec![0.0; 5];
        let mut scratch = vec![0.0; 5];
        coupled_normals(seed, step, 2, &mut out, &mut scratch);
        let mut f0 = vec![0.0; 5];
        let mut f1 = vec![0.0; 5];
        fill_normals(seed, 2 * step, &mut f0);
        fill_normals(seed, 2 * step + 1, &mut f1);
        for i in 0..5 {
            prop_assert!((out[i] - (f0[i] + f1[i]) / 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn real_values_hash_by_value(x in 1e-6f64..1e6) {
        let a = parse_text(&format!("kappa_diffusivity = {x}")).unwrap();
        let b = parse_text(&format!("kappa_diffusivity = {x:e}")).unwrap();
        let ra = ResolvedConfig::resolve(Command::Theorem1, &a).unwrap();
        let rb = ResolvedConfig::resolve(Command::Theorem1, &b).unwrap();
        prop_assert_eq!(ra.hash(), rb.hash());
        prop_assert_eq!(ra.real("kappa_diffusivity").unwrap(), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transport_stencil_is_skew(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let g = build_grid(Domain::UnitDisk, 1.0 / 16.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<[f64; 2]> = (0..g.node_count()).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let n = g.interior_count();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = TransportStencil::new(&g);
        let mut bv = vec![0.0; n];
        let mut bw = vec![0.0; n];
        s.apply(&u, &v, &mut bv);
        s.apply(&u, &w, &mut bw);
        let lhs = dot(&w, &bv);
        let rhs = -dot(&bw, &v);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn diffusion_operator_is_symmetric_negative(seed in any::<u64>(), sigma2 in 0.0f64..50.0, delta in 0.05f64..0.4) {
        use rand::{Rng, SeedableRng};
        let g = build_grid(Domain::UnitSquare, 1.0 / 16.0).unwrap();
        let op = assemble_diffusion(&g, &DiffusivityTensor::layered(&g, 0.01, sigma2, delta)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = op.dim();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let av = op.apply(&v);
        let aw = op.apply(&w);
        prop_assert!((dot(&w, &av) - dot(&v, &aw)).abs() <= 1e-9 * (1.0 + dot(&w, &av).abs()));
        prop_assert!(dot(&v, &av) <= 0.0);
    }

    #[test]
    fn radial_eigenvalue_obeys_bounds_and_grows_with_sigma2(
        sigma2 in 0.01f64..1e3,
        delta in 0.02f64..0.5,
        d in 2usize..4,
    ) {
        let kappa = 1e-2;
        let a = radial_lambda(&RadialProblem::new(kappa, sigma2, delta, d, 1024)).unwrap().lambda;
        let b = radial_lambda(&RadialProblem::new(kappa, 2.0 * sigma2, delta, d, 1024)).unwrap().lambda;
        let t = theorem_bounds(kappa, sigma2, delta, d);
        prop_assert!(a >= t.bound_asym.max(t.bound_min) - 1e-6);
        prop_assert!(b >= a * (1.0 - 1e-10));
    }

    #[test]
    fn kraichnan_covariance_is_dominated_at_origin(
        zeta in -1.9f64..1.9,
        k1 in 4.0f64..12.0,
        z in prop::array::uniform2(-0.5f64..0.5),
    ) {
        let p = KraichnanParams::new(1.0, zeta, 2.5, k1, 2);
        let q0 = covariance_at(&p, &[0.0, 0.0]).unwrap();
        let qz = covariance_at(&p, &z).unwrap();
        prop_assert!((q0[(0, 0)] - q0[(1, 1)]).abs() <= 1e-9 * q0[(0, 0)]);
        prop_assert!((qz[(0, 1)] - qz[(1, 0)]).abs() <= 1e-9 * q0[(0, 0)]);
        prop_assert!(qz.trace().abs() <= q0.trace() * (1.0 + 1e-9));
    }
}
