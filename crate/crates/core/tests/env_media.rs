use homog::env_media::{sample_environment, MediumSpec, SampledEnvironment};
use proptest::prelude::*;

fn renewal(seed: u64, half_width: f64) -> SampledEnvironment {
    sample_environment(&MediumSpec::plateau(2.0, 0.1, 0.1, seed), half_width, 0.01, seed).unwrap()
}

/// Trapezoid of `1/a` over the nodes of `fine` inside `[l1, l2]`.
fn resistance_oracle(fine: &SampledEnvironment, l1: f64, l2: f64) -> f64 {
    let i1 = ((l1 - fine.x[0]) / fine.dx).round() as usize;
    let i2 = ((l2 - fine.x[0]) / fine.dx).round() as usize;
    (i1..i2).map(|j| 0.5 * fine.dx * (1.0 / fine.a[j] + 1.0 / fine.a[j + 1])).sum()
}

/// Maximal node runs with `V >= level` (or `<=`), as index pairs.
fn node_runs(env: &SampledEnvironment, level: f64, above: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (j, &v) in env.v.iter().enumerate() {
        let inside = if above { v >= level } else { v <= level };
        match (start, inside) {
            (None, true) => start = Some(j),
            (Some(s), false) => {
                out.push((s, j - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, env.len() - 1));
    }
    out
}

#[test]
fn constant_medium_values_and_resistance() {
    let env = sample_environment(&MediumSpec::constant(1.0, 0.5), 10.0, 0.01, 0).unwrap();
    assert!(env.a.iter().all(|&a| a == 1.0));
    assert!(env.v.iter().all(|&v| v == 0.5));
    assert!((env.resistance_integral(0.0, 3.0).unwrap() - 3.0).abs() < 1e-12);
    let half = sample_environment(&MediumSpec::constant(0.5, 0.0), 10.0, 0.01, 0).unwrap();
    assert!((half.resistance_integral(-1.0, 0.0).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(half.find_hill(0.5, 1.0), None);
    assert!(half.find_valley(0.5, 1.0).is_some());
}

#[test]
fn periodic_cosine_nodes() {
    let env = sample_environment(&MediumSpec::periodic(4.0, "cosine"), 8.0, 0.01, 0).unwrap();
    for x in [0.0, 1.0, 2.0, 3.3] {
        let expect = 0.5 * (1.0 - (std::f64::consts::PI * 2.0 * x / 4.0).cos());
        assert!((env.v_at(x) - expect).abs() < 1e-3, "V({x})");
    }
    // Nearest components of {V >= 1/2} are [-3, -1] and [1, 3]; the window
    // is pushed against the end closest to the origin.
    let (lo, hi) = env.find_hill(0.5, 1.0).unwrap();
    let near = |a: f64, b: f64| (a - b).abs() < 1e-6;
    assert!((near(lo, -2.0) && near(hi, -1.0)) || (near(lo, 1.0) && near(hi, 2.0)), "({lo}, {hi})");
}

#[test]
fn resistance_matches_fine_quadrature() {
    let env = renewal(42, 50.0);
    let fine = sample_environment(&MediumSpec::plateau(2.0, 0.1, 0.1, 42), 50.0, 0.001, 42).unwrap();
    for (l1, l2) in [(0.0, 10.0), (-20.0, -3.0), (-7.5, 12.25)] {
        let r = env.resistance_integral(l1, l2).unwrap();
        let oracle = resistance_oracle(&fine, l1, l2);
        assert!((r - oracle).abs() <= 1e-4 * oracle.max(1.0), "[{l1},{l2}] {r} vs {oracle}");
    }
}

#[test]
fn resistance_rejects_bad_bounds() {
    let env = renewal(42, 10.0);
    assert!(env.resistance_integral(2.0, 1.0).is_err());
    assert!(env.resistance_integral(0.0, 11.0).is_err());
    assert_eq!(env.resistance_integral(1.0, 1.0).unwrap(), 0.0);
}

#[test]
fn census_matches_node_scan_and_golden() {
    let env = renewal(42, 200.0);
    let (hills, valleys) = env.census(0.1, 0.9);
    assert_eq!(hills, node_runs(&env, 0.9, true).len());
    assert_eq!(valleys, node_runs(&env, 0.1, false).len());
    let golden: serde_json::Value = serde_json::from_str(include_str!("golden/census_seed42.json")).unwrap();
    assert_eq!(hills as u64, golden["hills_at_0.9"].as_u64().unwrap());
    assert_eq!(valleys as u64, golden["valleys_at_0.1"].as_u64().unwrap());
}

fn check_against_scan(env: &SampledEnvironment, h: f64, y: f64, above: bool) {
    let found = if above { env.find_hill(h, y) } else { env.find_valley(h, y) };
    let runs = node_runs(env, h, above);
    // A run of nodes is a sufficient witness; the interpolated component may be slightly longer.
    let witness = runs.iter().any(|&(s, e)| env.resistance_integral(env.x[s], env.x[e]).unwrap() >= y);
    if witness {
        assert!(found.is_some(), "h={h} y={y}: scan finds a component, search does not");
    }
    let Some((l1, l2)) = found else { return };
    let r = env.resistance_integral(l1, l2).unwrap();
    assert!((r - y).abs() <= 1e-6 * y.max(1.0), "resistance {r} vs {y}");
    for (j, &x) in env.x.iter().enumerate() {
        if x > l1 + env.dx && x < l2 - env.dx {
            let v = env.v[j];
            assert!(if above { v >= h - 1e-12 } else { v <= h + 1e-12 }, "V({x}) = {v} breaks level {h}");
        }
    }
}

#[test]
fn hill_and_valley_search_agree_with_exhaustive_scan() {
    let env = renewal(42, 200.0);
    check_against_scan(&env, 0.9, 5.0, true);
    check_against_scan(&env, 0.1, 5.0, false);
    for h in [0.3, 0.5, 0.7] {
        for y in [0.5, 2.0, 10.0] {
            check_against_scan(&env, h, y, true);
            check_against_scan(&env, h, y, false);
        }
    }
}

#[test]
fn valley_is_hill_of_reflected_potential() {
    let env = renewal(7, 100.0);
    let flipped = SampledEnvironment::from_values(env.dx, env.a.clone(), env.v.iter().map(|v| 1.0 - v).collect(), env.kappa, env.seed).unwrap();
    for (h, y) in [(0.2, 1.0), (0.4, 3.0), (0.1, 5.0)] {
        let valley = env.find_valley(h, y);
        let hill = flipped.find_hill(1.0 - h, y);
        match (valley, hill) {
            (Some(a), Some(b)) => assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6, "{a:?} vs {b:?}"),
            (None, None) => {}
            other => panic!("h={h} y={y}: {other:?}"),
        }
    }
}

#[test]
fn hills_and_valleys_exist_on_a_large_window() {
    let env = renewal(42, 500.0);
    for h in [0.1, 0.5, 0.9] {
        for y in [1.0, 5.0, 20.0] {
            assert!(env.find_hill(h, y).is_some(), "no hill h={h} y={y}");
            assert!(env.find_valley(1.0 - h, y).is_some(), "no valley h={} y={y}", 1.0 - h);
        }
    }
}

#[test]
fn window_averages_decorrelate() {
    let env = renewal(3, 2000.0);
    let spread = |len: f64| {
        let k = (len / env.dx) as usize;
        let means: Vec<f64> = env.v.chunks_exact(k).map(|c| c.iter().sum::<f64>() / k as f64).collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
    };
    let slope = (spread(160.0).ln() - spread(10.0).ln()) / 16f64.ln();
    assert!((-1.0..=-0.25).contains(&slope), "log-log slope {slope}");
}

#[test]
fn csv_round_trip_is_exact() {
    let env = renewal(11, 20.0);
    let back = SampledEnvironment::from_csv(&env.to_csv()).unwrap();
    assert_eq!(back.a, env.a);
    assert_eq!(back.v, env.v);
    assert_eq!(back.seed, env.seed);
    assert_eq!(back.to_csv(), env.to_csv());
}

#[test]
fn invalid_media_are_rejected() {
    assert!(sample_environment(&MediumSpec::plateau(2.0, 0.1, 0.0, 0), 10.0, 0.01, 0).is_err());
    assert!(sample_environment(&MediumSpec::plateau(-1.0, 0.1, 0.1, 0), 10.0, 0.01, 0).is_err());
    assert!(sample_environment(&MediumSpec::plateau(2.0, 0.1, 0.1, 0), 10.0, 0.0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_media_satisfy_invariants(seed in 0u64..10_000, mean in 0.5f64..5.0, radius in 0.05f64..1.0, a_min in 0.05f64..0.9) {
        let spec = MediumSpec::plateau(mean, radius, a_min, seed);
        let env = sample_environment(&spec, 30.0, 0.01, seed).unwrap();
        prop_assert!(env.check_invariants(a_min).is_ok());
        prop_assert!(env.v.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(env.a.iter().all(|&a| a >= a_min && a <= 1.0));
        let again = sample_environment(&spec, 30.0, 0.01, seed).unwrap();
        prop_assert_eq!(again.to_csv(), env.to_csv());
    }

    #[test]
    fn resistance_is_additive(seed in 0u64..1000, u in 0.0f64..1.0, w in 0.0f64..1.0, z in 0.0f64..1.0) {
        let env = renewal(seed, 20.0);
        let mut p = [-20.0 + 40.0 * u, -20.0 + 40.0 * w, -20.0 + 40.0 * z];
        p.sort_by(f64::total_cmp);
        let whole = env.resistance_integral(p[0], p[2]).unwrap();
        let parts = env.resistance_integral(p[0], p[1]).unwrap() + env.resistance_integral(p[1], p[2]).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        prop_assert!(whole >= p[2] - p[0] - 1e-12);
    }

    #[test]
    fn resistance_window_has_requested_resistance(seed in 0u64..1000, c in -10.0f64..10.0, y in 0.1f64..10.0) {
        let env = renewal(seed, 30.0);
        let (l1, l2) = env.resistance_window(c, y, -30.0, 30.0).unwrap();
        prop_assert!((env.resistance_integral(l1, l2).unwrap() - y).abs() <= 1e-9 * y.max(1.0));
    }
}
