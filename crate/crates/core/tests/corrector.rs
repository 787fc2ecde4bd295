use homog::corrector::{build_interpolated_subsolution, ergodic_mean, find_near_touch_interval, Corrector, CorrectorSolution, Window};
use homog::effective_h::{Construction, EhOptions};
use homog::env_media::{sample_environment, MediumSpec, SampledEnvironment};
use homog::harness::fixture;
use homog::nonlinearity::{LevelInterval, Nonlinearity};
use homog::Error;

const WINDOW: Window = Window { half_width: 60.0, burn_in: 60.0 };

fn medium(seed: u64, half_width: f64) -> SampledEnvironment {
    sample_environment(&MediumSpec::plateau(2.0, 1.0, 0.1, seed), half_width, 0.01, seed).unwrap()
}

fn flat(v0: f64, half_width: f64) -> SampledEnvironment {
    sample_environment(&MediumSpec::constant(1.0, v0), half_width, 0.01, 0).unwrap()
}

fn sup_diff(a: &CorrectorSolution, b: &CorrectorSolution) -> f64 {
    assert_eq!((a.first, a.len()), (b.first, b.len()));
    a.f.iter().zip(&b.f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn equilibrium_and_logistic_closed_forms() {
    let env = flat(0.0, 20.0);
    let g = Nonlinearity::parabola();
    let c = Corrector::new(&env, &g, 0.0, Window { half_width: 5.0, burn_in: 5.0 }).unwrap();
    assert!(c.integrate_ode(4.0, -3.0, 2.0, 3.0, None).unwrap().iter().all(|&(_, f)| f == 2.0));
    let path = c.integrate_ode(4.0, 1.0, 0.0, 4.0, None).unwrap();
    for &(x, f) in &path {
        assert!((f - 2.0 * (2.0 * (x - 1.0)).tanh()).abs() < 1e-7, "x={x}");
    }
    // The deficit at distance 3 is 2 - 2 tanh(6) = 2.46e-5.
    assert!(((2.0 - path.last().unwrap().1) - (2.0 - 2.0 * 6f64.tanh())).abs() <= 1e-8);
    assert!(c.integrate_ode(4.0, 0.0, c.confinement_radius(4.0) + 2.0, 1.0, None).is_err());
}

#[test]
fn minimal_solution_of_the_control_relaxes_to_the_equilibrium() {
    // V = 0 and lambda = beta = 1 on [0, 1]: f' = 1 - f^2 from f = 0 is tanh.
    let env = flat(0.0, 40.0);
    let g = Nonlinearity::parabola();
    let c = Corrector::new(&env, &g, 1.0, Window { half_width: 10.0, burn_in: 10.0 }).unwrap();
    let iv = g.level_intervals(1.0, 1.0)[1];
    assert!(iv.low_left && iv.p1 == 0.0);
    let lo = c.minimal_solution(1.0, &iv).unwrap();
    for k in 0..lo.len() {
        let expect = (lo.x(k) + 20.0).tanh();
        assert!((lo.f[k] - expect).abs() < 1e-7, "x={}", lo.x(k));
    }
    assert!((lo.f[lo.len() - 1] - 1.0).abs() < 1e-12);
}

#[test]
fn zero_width_interval_is_rejected() {
    let env = medium(1, 130.0);
    let g = Nonlinearity::parabola();
    let c = Corrector::new(&env, &g, 1.0, WINDOW).unwrap();
    let iv = LevelInterval { p1: 0.5, p2: 0.5, low_left: true };
    assert!(matches!(c.minimal_solution(1.25, &iv), Err(Error::Domain(_))));
    assert!(Corrector::new(&env, &g, 1.0, Window { half_width: 100.0, burn_in: 60.0 }).is_err());
}

#[test]
fn burn_in_doubling_on_a_periodic_medium() {
    let env = sample_environment(&MediumSpec::periodic(4.0, "cosine"), 140.0, 0.01, 0).unwrap();
    let g = Nonlinearity::parabola();
    for iv in g.level_intervals(1.05, 1.0) {
        let short = Corrector::new(&env, &g, 1.0, Window { half_width: 20.0, burn_in: 50.0 }).unwrap();
        let long = Corrector::new(&env, &g, 1.0, Window { half_width: 20.0, burn_in: 100.0 }).unwrap();
        for (a, b) in [
            (short.minimal_solution(1.05, &iv).unwrap(), long.minimal_solution(1.05, &iv).unwrap()),
            (short.maximal_solution(1.05, &iv).unwrap(), long.maximal_solution(1.05, &iv).unwrap()),
        ] {
            assert!(sup_diff(&a, &b) <= 1e-6, "{iv:?}: {}", sup_diff(&a, &b));
        }
        // The limit is periodic with the medium's period.
        let lo = long.minimal_solution(1.05, &iv).unwrap();
        let shift = (4.0 / env.dx).round() as usize;
        let drift = (0..lo.len() - shift).map(|k| (lo.f[k] - lo.f[k + shift]).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-6, "period drift {drift}");
    }
}

#[test]
fn burn_in_doubling_on_a_random_medium() {
    let env = medium(42, 260.0);
    for (name, lambda, beta) in [("p2", 2.0, 1.0), ("double_well", 2.5, 0.75)] {
        let g = fixture(name).unwrap();
        let short = Corrector::new(&env, &g, beta, Window { half_width: 60.0, burn_in: 100.0 }).unwrap();
        let long = Corrector::new(&env, &g, beta, Window { half_width: 60.0, burn_in: 200.0 }).unwrap();
        for iv in g.level_intervals(lambda, beta) {
            let a = short.minimal_solution(lambda, &iv).unwrap();
            let b = long.minimal_solution(lambda, &iv).unwrap();
            assert!(sup_diff(&a, &b) <= 1e-6, "{name} {iv:?}: {}", sup_diff(&a, &b));
        }
    }
}

#[test]
fn endpoint_starts_envelope_all_confined_solutions() {
    let env = medium(42, 130.0);
    for (name, lambda, beta) in [("p2", 2.0, 1.0), ("p2", 1.0, 1.0), ("double_well", 1.6, 0.5), ("twin_peaks", 2.0, 0.65)] {
        let g = fixture(name).unwrap();
        let c = Corrector::new(&env, &g, beta, WINDOW).unwrap();
        for iv in g.level_intervals(lambda, beta) {
            let (lo, hi) = c.extremal_pair(lambda, &iv).unwrap();
            for i in 0..33 {
                let start = iv.p1 + iv.width() * i as f64 / 32.0;
                let s = c.solve_from(lambda, &iv, start).unwrap();
                for k in 0..s.len() {
                    assert!(s.f[k] >= lo.f[k] - 1e-9 && s.f[k] <= hi.f[k] + 1e-9, "{name} {iv:?} start {start} at x={}", s.x(k));
                }
            }
            for s in [&lo, &hi] {
                assert!(s.f.iter().all(|&f| f >= iv.p1 - 1e-6 && f <= iv.p2 + 1e-6), "{name}: confinement");
                assert!(s.residual_sup <= 1e-6 * lambda.max(1.0), "{name}: residual {}", s.residual_sup);
            }
        }
    }
}

#[test]
fn reversal_maps_minimal_to_maximal() {
    let env = medium(5, 130.0);
    let rev = SampledEnvironment::from_values(env.dx, env.a.iter().rev().copied().collect(), env.v.iter().rev().copied().collect(), env.kappa, env.seed).unwrap();
    let g = fixture("double_well").unwrap();
    let g_rev = g.transformed(-1.0, 0.0, 0.0);
    let (lambda, beta) = (1.6, 0.5);
    let c = Corrector::new(&env, &g, beta, WINDOW).unwrap();
    let c_rev = Corrector::new(&rev, &g_rev, beta, WINDOW).unwrap();
    for iv in g.level_intervals(lambda, beta) {
        let iv_rev = LevelInterval { p1: -iv.p2, p2: -iv.p1, low_left: !iv.low_left };
        let lo = c.minimal_solution(lambda, &iv).unwrap();
        let hi_rev = c_rev.maximal_solution(lambda, &iv_rev).unwrap();
        let n = lo.len();
        let worst = (0..n).map(|k| (lo.f[k] + hi_rev.f[n - 1 - k]).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{iv:?}: {worst}");
    }
}

#[test]
fn extremal_solutions_increase_with_the_level() {
    let env = medium(42, 130.0);
    let g = Nonlinearity::parabola();
    let c = Corrector::new(&env, &g, 1.0, WINDOW).unwrap();
    let on_right = |lambda: f64| *g.level_intervals(lambda, 1.0).last().unwrap();
    let mut prev: Option<CorrectorSolution> = None;
    for lambda in [1.0, 1.2, 1.5, 2.0, 3.0] {
        let iv = on_right(lambda);
        let (lo, hi) = c.extremal_pair(lambda, &iv).unwrap();
        if let Some(p) = prev {
            assert!(p.f.iter().zip(&lo.f).all(|(a, b)| a < b), "not ordered below lambda {lambda}");
        }
        prev = Some(hi);
    }
}

#[test]
fn ergodic_means_of_closed_forms() {
    assert_eq!(ergodic_mean(&[1.25; 201]).0, 1.25);
    let f: Vec<f64> = (-2000..=2000).map(|k| 2.0 * (2.0 * k as f64 * 0.005).tanh()).collect();
    let (m, err) = ergodic_mean(&f);
    assert!(m.abs() <= 1e-9);
    assert!(err >= 0.0);
}

#[test]
fn corrector_mean_is_stable_across_seeds() {
    // At lambda(theta) both extremal means bracket theta; their seed-to-seed
    // spread is the statistical error of the window average.
    let g = Nonlinearity::parabola();
    let golden: serde_json::Value = serde_json::from_str(include_str!("golden/corrector_seed42.json")).unwrap();
    let opts = EhOptions { window: Window { half_width: 200.0, burn_in: 100.0 }, ..EhOptions::default() };
    let mut means = Vec::new();
    for seed in [42u64, 1, 2, 3, 4] {
        let env = medium(seed, 320.0);
        let c = Corrector::new(&env, &g, 1.0, opts.window).unwrap();
        let iv = *g.level_intervals(2.0, 1.0).last().unwrap();
        means.push(c.minimal_solution(2.0, &iv).unwrap().mean);
    }
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    let sd = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    assert!((means[0] - golden["mean_lower"].as_f64().unwrap()).abs() <= 1e-9, "seed 42 mean {}", means[0]);
    assert!((means[0] - avg).abs() <= 3.0 * sd + 1e-12, "seed 42 mean {} vs {avg} +- {sd}", means[0]);
    let env = medium(42, 320.0);
    let cons = Construction::new(&g, &env, 1.0, opts.clone()).unwrap();
    let (lo, hi, _) = cons.certificate_pair(1.5).unwrap();
    assert!(lo.mean <= 1.5 + 1e-5 && hi.mean >= 1.5 - 1e-5);
}

#[test]
fn near_touch_interval_passes_a_direct_gap_scan() {
    let env = medium(42, 520.0);
    let g = Nonlinearity::parabola();
    let opts = EhOptions { window: Window { half_width: 400.0, burn_in: 100.0 }, ..EhOptions::default() };
    let window = opts.window;
    let cons = Construction::new(&g, &env, 1.0, opts).unwrap();
    let c = Corrector::new(&env, cons.full(), 1.0, window).unwrap();
    let (lower, upper, lambda) = cons.certificate_pair(0.0).unwrap();
    assert_eq!(lambda, 1.0);
    let c_r = c.lipschitz_bound(lambda);
    for delta in [0.2, 0.05] {
        let (l1, l2) = find_near_touch_interval(&env, &lower, &upper, delta, 1.0, c_r).unwrap();
        assert!((env.resistance_integral(l1, l2).unwrap() - 1.0).abs() <= 1e-3);
        for k in 0..lower.len() {
            let x = lower.x(k);
            if x >= l1 && x <= l2 {
                assert!(upper.f[k] - lower.f[k] <= delta, "gap at {x}");
            }
        }
    }
    let gmin = upper.f.iter().zip(&lower.f).map(|(u, l)| u - l).fold(f64::INFINITY, f64::min);
    assert!(matches!(find_near_touch_interval(&env, &lower, &upper, 0.5 * gmin, 1.0, c_r), Err(Error::Search(_))));
}

#[test]
fn subsolution_constants_and_degenerate_pair() {
    let env = medium(42, 130.0);
    let g = Nonlinearity::parabola();
    let c = Corrector::new(&env, &g, 1.0, WINDOW).unwrap();
    let iv = *g.level_intervals(2.0, 1.0).last().unwrap();
    let lo = c.minimal_solution(2.0, &iv).unwrap();
    let s = build_interpolated_subsolution(&c, &lo, &lo, 0.5, 1.0).unwrap();
    assert_eq!(s.f_delta, lo.f);
    assert!(s.margin >= 0.0);
    let radius = c.confinement_radius(2.0);
    assert!((radius - 2f64.sqrt()).abs() < 1e-12);
    assert!((s.c_r - 2.0 * radius).abs() < 1e-9);
    assert_eq!(s.c0, 2.0 * (s.c_r + 2.0));
}
