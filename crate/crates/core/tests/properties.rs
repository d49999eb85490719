mod common;

use common::*;
use ioc_eiv::demos::{generate, noise_scale_from_percent, NoiseSpec};
use ioc_eiv::forward;
use ioc_eiv::kkt_baseline::NormalizationRule;
use ioc_eiv::model::{join_beta, kkt_residual, BilinearStationarity};
use ioc_eiv::numerics::solve_qp;
use ioc_eiv::problems::{positivity_surrogate, spring_damper};
use ioc_eiv::tls_estimator::{self, TlsConfig};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_value_matches_dual_oracle(seed in any::<u64>()) {
        let qp = random_qp(&mut ChaCha8Rng::seed_from_u64(seed));
        let sol = solve_qp(&qp, None).unwrap().ensure_optimal().unwrap();
        let value = qp.objective(&sol.z);
        let oracle = dual_projected_gradient(&qp, 20_000);
        // weak duality holds for any dual point
        prop_assert!(oracle <= value + 1e-9 * (1.0 + value.abs()));
        prop_assert!((value - oracle).abs() <= 1e-6 * (1.0 + value.abs()));
        let kkt = qp.stationarity(&sol.z, &sol.eq_multipliers, &sol.in_multipliers);
        prop_assert!(kkt.amax() <= 1e-8 * (1.0 + qp.c.amax()));
        prop_assert!(sol.in_multipliers.iter().all(|m| *m >= 0.0));
    }

    #[test]
    fn forward_solution_satisfies_kkt(t in proptest::collection::vec(0.05f64..20.0, 3)) {
        for fp in [spring_damper(), positivity_surrogate()] {
            let theta = DVector::from_vec(t.clone());
            let sol = forward::solve(&fp, &theta).unwrap();
            let r = kkt_residual(&fp, &theta, &sol.lambda, &sol.u).unwrap();
            prop_assert!(r.max() <= 1e-8 * (1.0 + theta.amax()), "{:?}", r.block_norms());
        }
    }

    #[test]
    fn forward_solution_is_scale_invariant(t in proptest::collection::vec(0.05f64..20.0, 3), c in 0.01f64..100.0) {
        let fp = spring_damper();
        let theta = DVector::from_vec(t);
        let a = forward::solve(&fp, &theta).unwrap();
        let b = forward::solve(&fp, &(&theta * c)).unwrap();
        prop_assert!((&a.u - &b.u).amax() <= 1e-9);
        prop_assert!((&a.lambda * c - &b.lambda).amax() <= 1e-7 * (1.0 + b.lambda.amax()));
    }

    #[test]
    fn truncated_demos_respect_bounds(seed in any::<u64>(), pct in 1.0f64..40.0) {
        let fp = positivity_surrogate();
        let us = forward::solve(&fp, fp.theta_true.as_ref().unwrap()).unwrap().u;
        let sigma = noise_scale_from_percent(&us, 1, pct).unwrap();
        let spec = NoiseSpec::truncated(&sigma, DVector::zeros(1), DVector::from_element(1, f64::INFINITY), seed);
        let ds = generate(&fp, &us, &spec, 5).unwrap();
        prop_assert!(ds.demos.iter().all(|d| d.iter().all(|v| *v >= 0.0)));
        prop_assert_eq!(ds, generate(&fp, &us, &spec, 5).unwrap());
    }

    #[test]
    fn normalization_hits_its_value(t in proptest::collection::vec(0.01f64..10.0, 3), value in 0.1f64..50.0, index in 0usize..3) {
        let theta = DVector::from_vec(t);
        let s = NormalizationRule::Sum { value }.apply(&theta).unwrap();
        prop_assert!((s.sum() - value).abs() <= 1e-12 * value);
        let c = NormalizationRule::Component { index, value }.apply(&theta).unwrap();
        prop_assert!((c[index] - value).abs() <= 1e-12 * value);
        // rescaling never changes direction
        prop_assert!((&s / s.norm() - &c / c.norm()).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tls_output_is_exactly_optimal(seed in any::<u64>(), d in 2usize..12) {
        let fp = spring_damper();
        let us = forward::solve(&fp, fp.theta_true.as_ref().unwrap()).unwrap().u;
        let sigma = noise_scale_from_percent(&us, 1, 15.0).unwrap();
        let ds = generate(&fp, &us, &NoiseSpec::uniform(&sigma, seed), d).unwrap();
        let cfg = TlsConfig { norm: NormalizationRule::Sum { value: 22.0 }, ..TlsConfig::default() };
        let r = tls_estimator::estimate(&ds, &fp, &cfg).unwrap();
        let bs = BilinearStationarity::new(&fp);
        prop_assert!(bs.apply(&r.u_hat, &join_beta(&r.theta, &r.lambda)).amax() <= 1e-8);
        prop_assert!((r.theta.sum() - 22.0).abs() <= 1e-9);
        for rec in &r.outer_trace {
            prop_assert!(rec.inner_costs.windows(2).all(|w| w[1] <= w[0]));
        }
        // the loop stops at the first delta below tolerance
        prop_assert!(r.outer_trace.iter().skip(1).all(|o| o.sigma_delta >= cfg.sigma_tol));
        let refit = tls_estimator::residual_covariance(&r.u_hat, &ds, cfg.ridge);
        prop_assert!((&refit - &r.sigma_u_hat).amax() <= 1e-15);
    }
}
