use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use forecast_sde::data::{
    build_curve, detect_curtailment, split_train_test, truncate_forecast, CurtailmentConfig,
    ForecastCurve, Segment,
};
use forecast_sde::likelihood::{beta_transition_logpdf, matched_beta_shapes, pairwise_sum};
use forecast_sde::model::{lamperti_forward, lamperti_inverse, ModelParams};
use forecast_sde::moments::{integrate_v_moments, integrate_z_moments, IntegratorConfig};
use forecast_sde::simulate::{
    empirical_bands, quantile_sorted, simulate_paths, InitialCondition, SimConfig,
};

const DT: f64 = 1.0 / 144.0;

fn segment(day: i64, x: Vec<f64>, p_raw: Vec<f64>) -> Segment {
    Segment {
        id: format!("s{day}"),
        provider: "t".into(),
        start: Utc.with_ymd_and_hms(2020, 1, 1, 13, 0, 0).unwrap() + chrono::Duration::days(day),
        delta_seconds: 600.0,
        x,
        p_raw,
        curtailed: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn truncation_stays_in_range(p in -1.0f64..2.0, eps in 0.0f64..0.49) {
        let q = truncate_forecast(p, eps).unwrap();
        prop_assert!(q >= eps && q <= 1.0 - eps);
        if (eps..=1.0 - eps).contains(&p) {
            prop_assert_eq!(q, p);
        }
    }

    #[test]
    fn lamperti_round_trip(theta0 in 0.1f64..10.0, alpha in 0.001f64..1.0, p in 0.01f64..0.99, x in 0.0f64..=1.0) {
        let params = ModelParams::tracking(theta0, alpha).unwrap();
        let z = lamperti_forward(x - p, p, &params).unwrap();
        prop_assert!(z <= 0.0 && z >= params.z_min() - 1e-12);
        let v = lamperti_inverse(z, p, &params).unwrap();
        prop_assert!((v - (x - p)).abs() < 1e-10);
    }

    #[test]
    fn moments_are_feasible(
        theta0 in 0.3f64..5.0,
        alpha in 0.005f64..0.3,
        a in 0.05f64..0.95,
        b in 0.05f64..0.95,
        x0 in 0.0f64..=1.0,
        plain in any::<bool>(),
    ) {
        let params = if plain { ModelParams::plain(theta0, alpha) } else { ModelParams::tracking(theta0, alpha) }.unwrap();
        let curve = ForecastCurve::new(vec![0.0, DT], vec![a, b], 0.02).unwrap();
        let v0 = x0 - a;
        let m = integrate_v_moments(v0, 0.0, DT, &curve, &params, &IntegratorConfig::default()).unwrap();
        prop_assert!(m.variance() >= -1e-12);
        prop_assert!(m.m1.abs() <= 1.0);
        let z0 = lamperti_forward(v0, a, &params).unwrap();
        let zm = integrate_z_moments(z0, 0.0, DT, &curve, &params, &IntegratorConfig::default()).unwrap();
        prop_assert!(zm.var > 0.0 && zm.var.is_finite());
    }

    #[test]
    fn matched_beta_is_a_density_with_the_given_mean(mu in -0.9f64..0.9, sd in 1e-3f64..0.5) {
        let (shapes, adjusted) = matched_beta_shapes(mu, sd * sd, 0.02).unwrap();
        prop_assert!(shapes.xi1 > 0.0 && shapes.xi2 > 0.0);
        if !adjusted {
            prop_assert!((shapes.mean() - mu).abs() < 1e-10);
            prop_assert!((shapes.variance() / (sd * sd) - 1.0).abs() < 1e-9);
        }
        let lp = beta_transition_logpdf(shapes.mean(), &shapes).unwrap();
        prop_assert!(lp.is_finite());
        prop_assert!(beta_transition_logpdf(1.5, &shapes).is_err() || beta_transition_logpdf(1.5, &shapes).unwrap() == f64::NEG_INFINITY);
    }

    #[test]
    fn pairwise_sum_is_order_insensitive(xs in prop::collection::vec(-1e3f64..1e3, 0..300)) {
        let naive: f64 = xs.iter().sum();
        let mut rev = xs.clone();
        rev.reverse();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        prop_assert!((pairwise_sum(&xs) - pairwise_sum(&rev)).abs() <= 1e-9 * (1.0 + naive.abs()));
    }

    #[test]
    fn quantiles_are_monotone(mut xs in prop::collection::vec(-10f64..10.0, 1..200), q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0) {
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(quantile_sorted(&xs, lo) <= quantile_sorted(&xs, hi));
        prop_assert_eq!(quantile_sorted(&xs, 0.0), xs[0]);
        prop_assert_eq!(quantile_sorted(&xs, 1.0), xs[xs.len() - 1]);
    }

    #[test]
    fn split_is_disjoint_and_complete(n in 2usize..30) {
        let segs: Vec<Segment> = (0..n as i64)
            .map(|d| segment(d, vec![0.5; 145], vec![0.5; 25]))
            .collect();
        let (train, test) = split_train_test(segs).unwrap();
        prop_assert_eq!(train.segments.len() + test.segments.len(), n);
        prop_assert!(train.segments.iter().all(|a| test.segments.iter().all(|b| a.id != b.id)));
        prop_assert!(!train.segments.is_empty() && !test.segments.is_empty());
    }

    #[test]
    fn curtailment_detection_is_stable_under_small_noise(seed in 0u64..1000, at in 0usize..130, level in 0.4f64..0.8) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = CurtailmentConfig::default();
        let p = vec![level; 25];
        // production follows the forecast up to noise well inside the flat tolerance
        let mut x: Vec<f64> = (0..145).map(|_| level + 0.002 * (rng.random::<f64>() - 0.5)).collect();
        prop_assert!(!detect_curtailment(&segment(0, x.clone(), p.clone()), &cfg));
        // a capped stretch far below the forecast is found wherever it sits
        for xi in &mut x[at..at + 12] {
            *xi = level - 0.3 + 0.002 * rng.random::<f64>();
        }
        prop_assert!(detect_curtailment(&segment(0, x, p), &cfg));
    }

    #[test]
    fn curve_interpolates_truncated_knots(knots in prop::collection::vec(-0.2f64..1.2, 25)) {
        let seg = segment(0, vec![0.5; 145], knots.clone());
        let curve = build_curve(&seg, 0.02).unwrap();
        for (k, raw) in knots.iter().enumerate() {
            let t = (k * 6) as f64 * DT;
            prop_assert!((curve.value(t) - raw.clamp(0.02, 0.98)).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bands_nest_and_simulated_paths_stay_bounded(
        knots in prop::collection::vec(0.05f64..0.95, 5),
        seed in any::<u64>(),
        theta0 in 0.5f64..4.0,
        alpha in 0.01f64..0.2,
    ) {
        let params = ModelParams::tracking(theta0, alpha).unwrap();
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.25).collect();
        let curve = ForecastCurve::new(times, knots, 0.02).unwrap();
        let grid: Vec<f64> = (0..=144).map(|i| i as f64 * DT).collect();
        let cfg = SimConfig { n_paths: 200, seed, ..Default::default() };
        let bundle = simulate_paths(&params, &curve, &grid, &cfg, InitialCondition::Error(0.0)).unwrap();
        prop_assert!(bundle.paths.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
        let bands = empirical_bands(&bundle, &[0.5, 0.9]).unwrap();
        let (inner, outer) = (&bands.bands[0], &bands.bands[1]);
        for i in 0..grid.len() {
            prop_assert!(outer.lower[i] <= inner.lower[i] && inner.lower[i] <= inner.upper[i] && inner.upper[i] <= outer.upper[i]);
        }
    }
}
