use faustmann_core::diffusion::DiffusionModel;
use faustmann_core::hitting::XiEvaluator;
use faustmann_core::impulse::ImpulseSolver;
use faustmann_core::meanfield::{Interaction, MeanField, PayoffSpec, PriceFunction};
use faustmann_core::stationary::{expected_stock, stock_bounds, StationaryDensity};
use faustmann_core::NumericsConfig;
use proptest::prelude::*;

fn evaluator(q: f64, b: f64) -> XiEvaluator {
    XiEvaluator::new(&DiffusionModel::logistic(q, b, 1.0, 1.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn series_matches_quadrature(q in -2.0f64..-0.2, b in 0.2f64..1.0, t in 0.05f64..4.0) {
        let ev = evaluator(q, b);
        let y = 1.0 + t;
        let series = ev.xi_series(y).unwrap();
        let quad = ev.xi_quadrature(y).unwrap();
        prop_assert!((series - quad).abs() <= 1e-7 * quad, "y {y}: {series} vs {quad}");
    }

    #[test]
    fn xi_is_increasing(q in -2.0f64..-0.2, b in 0.2f64..1.0, t in 0.05f64..3.0) {
        let ev = evaluator(q, b);
        let y = 1.0 + t;
        prop_assert!(ev.xi(y).unwrap() < ev.xi(y * 1.1).unwrap());
        prop_assert!(ev.xi_prime(y).unwrap() > 0.0);
    }

    #[test]
    fn speed_identities_hold(q in -2.0f64..-0.2, b in 0.2f64..1.0, x in 0.1f64..6.0) {
        let m = DiffusionModel::logistic(q, b, 1.0, 1.0).unwrap();
        let s = m.scale_density(x).unwrap();
        let sig = m.volatility(x);
        let prod = m.speed_density(x).unwrap() * s * sig * sig;
        prop_assert!((prod - 2.0).abs() < 1e-10);
        let lhs = s * m.drift_speed_integral(x).unwrap();
        prop_assert!((lhs - 1.0).abs() < 1e-6, "x {x}: {lhs}");
    }

    #[test]
    fn controlled_density_is_normalized(q in -2.0f64..-0.2, b in 0.2f64..1.0, t in 0.2f64..4.0) {
        let ev = evaluator(q, b);
        let d = StationaryDensity::controlled(&ev, 1.0 + t).unwrap();
        let total = d.cdf(d.upper()).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-8);
        let mid = d.cdf(1.0 + 0.5 * t).unwrap();
        prop_assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn expected_stock_stays_between_bounds(q in -2.0f64..-0.2, b in 0.2f64..1.0, t in 0.05f64..20.0) {
        let ev = evaluator(q, b);
        let (z1, z2) = stock_bounds(&ev).unwrap();
        let c = expected_stock(&ev, 1.0 + t).unwrap();
        prop_assert!(z1 - 1e-9 <= c && c <= z2 + 1e-9, "{z1} <= {c} <= {z2}");
    }

    #[test]
    fn threshold_grows_with_cost(q in -2.0f64..-0.2, b in 0.2f64..1.0, k in 0.1f64..3.0) {
        let solver = ImpulseSolver::new(evaluator(q, b), NumericsConfig::default());
        let lo = solver.optimal_threshold_basic(k).unwrap();
        let hi = solver.optimal_threshold_basic(1.5 * k).unwrap();
        prop_assert!(lo.threshold < hi.threshold);
        prop_assert!(lo.value > hi.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn harvest_rate_ordering(q in -2.0f64..-0.2, b in 0.2f64..1.0, k in 0.5f64..2.0) {
        let model = DiffusionModel::logistic(q, b, 1.0, 1.0).unwrap();
        let payoff = PayoffSpec {
            cost: k,
            phi: PriceFunction::parse("1/(z+1)").unwrap(),
            interaction: Interaction::HarvestRate,
        };
        let mf = MeanField::new(&model, payoff, NumericsConfig::default()).unwrap();
        let c = mf.compare().unwrap();
        prop_assert!(c.holds);
        prop_assert!(c.mfc.value >= c.mfg.equilibria[0].value - 1e-9);
    }

    #[test]
    fn verified_optimum_and_rejected_perturbation(k in 0.3f64..2.0) {
        let solver = ImpulseSolver::new(evaluator(-1.0, 0.5), NumericsConfig::default());
        let f = |y: f64| y - 1.0;
        let h = |_: f64| 0.0;
        let sol = solver.solve_auxiliary(f, h, k).unwrap();
        prop_assert!(solver.verify_solution(&sol, f, h, k).unwrap().passed);
        let mut off = sol;
        off.threshold *= 1.1;
        prop_assert!(!solver.verify_solution(&off, f, h, k).unwrap().passed);
    }
}
