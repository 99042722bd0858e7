//! Property tests for the library-wide invariants, on kernels drawn from
//! proptest-chosen seeds.

use dpp_mle::experiments::fit_loglog_slope;
use dpp_mle::geometry::{
    expected_log_likelihood, hessian_matrix, hessian_routes, identity_residuals, weighted_log_likelihood,
};
use dpp_mle::mle::{blockwise_loss, empirical_log_likelihood, likelihood_gradient, sign_orbit_loss};
use dpp_mle::random::{random_block_kernel, random_kernel, random_symmetric};
use dpp_mle::{
    build_table, conjugate_by_signs, determinantal_graph, empirical_table, k_to_l, l_to_k, sample, Execution,
    KernelMatrix, SampleBatch, SignDiagonal, SubsetMask,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn principal_minors_sum_to_normalizer(seed in any::<u64>(), n in 1usize..=9, shift in 0.05f64..2.0) {
        let l = random_kernel(n, shift, &mut rng(seed));
        let table = build_table(&l).unwrap();
        prop_assert!(table.normalization_residual().abs() <= 1e-9);
        let total: f64 = table.probs().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sign_conjugation_preserves_the_process(seed in any::<u64>(), n in 1usize..=6, bits in any::<u64>()) {
        let l = random_kernel(n, 0.5, &mut rng(seed));
        let d = SignDiagonal::from_bits(n, bits);
        let a = build_table(&l).unwrap();
        let b = build_table(&conjugate_by_signs(&l, &d)).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(sign_orbit_loss(&conjugate_by_signs(&l, &d), &l).unwrap().value, 0.0);
    }

    #[test]
    fn inclusion_paths_agree(seed in any::<u64>(), n in 1usize..=6, bits in any::<u32>()) {
        let l = random_kernel(n, 0.5, &mut rng(seed));
        let table = build_table(&l).unwrap();
        let s = SubsetMask::new(bits & ((1u32 << n) - 1), n).unwrap();
        let direct = table.inclusion_probability(s).unwrap();
        prop_assert!((direct - table.inclusion_by_summation(s)).abs() <= 1e-12);
    }

    #[test]
    fn kernel_maps_round_trip(seed in any::<u64>(), n in 1usize..=8) {
        let l = random_kernel(n, 0.5, &mut rng(seed));
        let back = k_to_l(&l_to_k(&l).unwrap()).unwrap();
        prop_assert!(back.frobenius_distance(&l) <= 1e-9 * l.matrix().norm());
    }

    #[test]
    fn hessian_is_negative_semidefinite(seed in any::<u64>(), n in 1usize..=5, blocky in any::<bool>()) {
        let mut r = rng(seed);
        let l = if blocky && n > 1 { random_block_kernel(&[n - 1, 1], 0.5, &mut r) } else { random_kernel(n, 0.5, &mut r) };
        let table = build_table(&l).unwrap();
        let form = hessian_matrix(&table);
        prop_assert!(form.eigenvalues[form.dim() - 1] <= 1e-9 * form.max_abs_eigenvalue());
        let h = random_symmetric(n, &mut r);
        let routes = hessian_routes(&table, &h).unwrap();
        let scale = routes.variance.abs().max(1e-12);
        prop_assert!((routes.variance - routes.derivative).abs() <= 1e-10 * scale);
        prop_assert!((routes.variance - routes.rearranged).abs() <= 1e-10 * scale);
    }

    #[test]
    fn trace_identities_hold(seed in any::<u64>(), n in 1usize..=7) {
        let mut r = rng(seed);
        let l = random_kernel(n, 0.5, &mut r);
        let h = random_symmetric(n, &mut r);
        let res = identity_residuals(&l, &h).unwrap();
        prop_assert!(res.max_abs() <= 1e-9, "{:?}", res);
        prop_assert!(res.matrix_form_residual <= 1e-9);
    }

    #[test]
    fn truth_maximizes_expected_likelihood(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let l_star = random_kernel(n, 0.5, &mut r);
        let other = random_kernel(n, 0.5, &mut r);
        let table = build_table(&l_star).unwrap();
        prop_assert!(expected_log_likelihood(&table, &other).unwrap() <= expected_log_likelihood(&table, &l_star).unwrap() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let l_star = random_kernel(n, 0.5, &mut r);
        let freqs = empirical_table(&sample(&build_table(&l_star).unwrap(), 300, seed)).unwrap();
        let l = random_kernel(n, 0.5, &mut r);
        let h = random_symmetric(n, &mut r);
        let analytic = (likelihood_gradient(&freqs, &l).unwrap() * h.matrix()).trace();
        let step = 1e-5;
        let f = |t: f64| empirical_log_likelihood(&freqs, &KernelMatrix::new(l.matrix() + h.matrix() * t).unwrap()).unwrap();
        let fd = (f(step) - f(-step)) / (2.0 * step);
        prop_assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-2), "{} vs {}", fd, analytic);
    }

    #[test]
    fn objective_and_loss_are_orbit_invariant(seed in any::<u64>(), n in 1usize..=5, b1 in any::<u64>(), b2 in any::<u64>()) {
        let mut r = rng(seed);
        let l_star = random_kernel(n, 0.5, &mut r);
        let hat = random_kernel(n, 0.5, &mut r);
        let freqs = empirical_table(&sample(&build_table(&l_star).unwrap(), 200, seed)).unwrap();
        let (d1, d2) = (SignDiagonal::from_bits(n, b1), SignDiagonal::from_bits(n, b2));
        let a = empirical_log_likelihood(&freqs, &hat).unwrap();
        let b = empirical_log_likelihood(&freqs, &conjugate_by_signs(&hat, &d1)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        let base = sign_orbit_loss(&hat, &l_star).unwrap().value;
        let moved = sign_orbit_loss(&conjugate_by_signs(&hat, &d1), &conjugate_by_signs(&l_star, &d2)).unwrap().value;
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn blockwise_parts_add_up(seed in any::<u64>(), split in 1usize..=3) {
        let mut r = rng(seed);
        let l_star = random_block_kernel(&[split, 4 - split], 0.5, &mut r);
        let hat = random_kernel(4, 0.5, &mut r);
        let graph = determinantal_graph(l_star.matrix(), 0.0);
        let b = blockwise_loss(&hat, &l_star, &graph).unwrap();
        prop_assert!((b.total.powi(2) - b.within.powi(2) - b.cross.powi(2)).abs() <= 1e-12 * b.total.powi(2).max(1.0));
        prop_assert_eq!(b.total, sign_orbit_loss(&hat, &l_star).unwrap().value);
    }

    #[test]
    fn sampling_is_mode_independent(seed in any::<u64>(), n in 1usize..=5, count in 1usize..5000) {
        let table = build_table(&random_kernel(n, 0.5, &mut rng(seed))).unwrap();
        let a = SampleBatch::draw(&table, count, seed, Execution::Sequential);
        let b = SampleBatch::draw(&table, count, seed, Execution::default());
        prop_assert_eq!(a.draws(), b.draws());
    }

    #[test]
    fn loglog_recovers_any_power(exponent in -2.0f64..2.0, scale in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = [1.0f64, 3.0, 10.0, 30.0, 100.0].iter().map(|&x| (x, scale * x.powf(exponent))).collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        prop_assert!((fit.slope - exponent).abs() <= 1e-10);
        prop_assert!((fit.intercept - scale.ln()).abs() <= 1e-9);
    }

    #[test]
    fn zero_weights_are_skipped(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let l = random_kernel(n, 0.5, &mut r);
        let mut w = vec![0.0; 1 << n];
        w[(1 << n) - 1] = 1.0;
        let direct = l.matrix().clone().cholesky().unwrap().determinant().ln()
            - (nalgebra::DMatrix::identity(n, n) + l.matrix()).determinant().ln();
        prop_assert!((weighted_log_likelihood(&w, &l).unwrap() - direct).abs() <= 1e-10);
    }
}
