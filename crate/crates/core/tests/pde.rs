use homog::env_media::{sample_environment, MediumSpec, SampledEnvironment};
use homog::harness::fixture;
use homog::nonlinearity::Nonlinearity;
use homog::pde_reference::{comparison_probe, effective_slope, solve_cauchy, PdeOptions};
use homog::Error;

fn medium(seed: u64, half_width: f64) -> SampledEnvironment {
    let half_width = half_width.max(120.0);
    sample_environment(&MediumSpec::plateau(2.0, 1.0, 0.1, seed), half_width, 0.01, seed).unwrap()
}

fn opts(dx: f64, t_final: f64) -> PdeOptions {
    PdeOptions { dx, t_final, snapshots: 4, ..PdeOptions::default() }
}

#[test]
fn affine_data_in_a_flat_medium() {
    let env = sample_environment(&MediumSpec::constant(1.0, 0.0), 60.0, 0.01, 0).unwrap();
    let run = solve_cauchy(&env, &Nonlinearity::parabola(), 1.0, 1.0, &opts(0.1, 10.0)).unwrap();
    assert!((run.h_l - 1.0).abs() <= 1e-3 && (run.h_u - 1.0).abs() <= 1e-3, "[{}, {}]", run.h_l, run.h_u);
    assert!(run.series.iter().all(|&(_, s)| (s - 1.0).abs() <= 1e-3));
    assert!(run.gradient_within_box(1e-2));
}

#[test]
fn zero_coupling_gives_the_nonlinearity() {
    let env = medium(42, 80.0);
    let g = fixture("double_well").unwrap();
    for theta in [-1.0, 0.5, 1.5, 2.5] {
        let run = solve_cauchy(&env, &g, 0.0, theta, &opts(0.1, 8.0)).unwrap();
        let (lo, hi) = effective_slope(&run).unwrap();
        assert!((lo - g.eval(theta)).abs() <= 1e-3 && (hi - g.eval(theta)).abs() <= 1e-3, "theta {theta}: [{lo}, {hi}] vs {}", g.eval(theta));
    }
}

#[test]
fn grid_refinement_on_a_periodic_medium() {
    let env = sample_environment(&MediumSpec::periodic(1.0, "cosine"), 80.0, 0.005, 0).unwrap();
    let g = Nonlinearity::parabola();
    let coarse = solve_cauchy(&env, &g, 1.0, 0.0, &opts(0.05, 16.0)).unwrap();
    let fine = solve_cauchy(&env, &g, 1.0, 0.0, &opts(0.025, 16.0)).unwrap();
    let ratio = coarse.dt / fine.dt;
    assert!(ratio > 3.5 && ratio < 4.5, "dt ratio {ratio}");
    let (c, f) = (coarse.snapshots.last().unwrap().1, fine.snapshots.last().unwrap().1);
    assert!((c - f).abs() <= 5e-3, "coarse {c} vs fine {f}");
}

#[test]
fn dual_resolution_consistency_on_a_random_medium() {
    let env = medium(42, 80.0);
    let g = Nonlinearity::parabola();
    let coarse = solve_cauchy(&env, &g, 1.0, 2.0, &opts(0.1, 16.0)).unwrap();
    let fine = solve_cauchy(&env, &g, 1.0, 2.0, &opts(0.05, 16.0)).unwrap();
    let (c, f) = (coarse.snapshots.last().unwrap().1, fine.snapshots.last().unwrap().1);
    assert!((c - f).abs() <= 1e-2, "coarse {c} vs fine {f}");
    assert!(coarse.gradient_within_box(1e-2) && fine.gradient_within_box(1e-2));
    assert!(coarse.cfl_margin > 0.0);
}

#[test]
fn slopes_sit_between_pure_nonlinearity_and_full_coupling() {
    // 0 <= V <= 1 pins the effective slope between G(theta) and G(theta) + beta.
    let env = medium(3, 80.0);
    let g = Nonlinearity::parabola();
    for theta in [-1.5, 0.0, 1.0] {
        let run = solve_cauchy(&env, &g, 1.0, theta, &opts(0.1, 16.0)).unwrap();
        assert!(run.h_l >= g.eval(theta) - 1e-9 && run.h_u <= g.eval(theta) + 1.0 + 1e-9, "theta {theta}: [{}, {}]", run.h_l, run.h_u);
    }
}

#[test]
fn comparison_of_shifted_data() {
    let env = medium(9, 60.0);
    let g = fixture("double_well").unwrap();
    let o = opts(0.05, 2.0);
    let data = |x: f64| 0.3 * (1.7 * x).sin() + 0.1 * x;
    assert_eq!(comparison_probe(&env, &g, 0.5, data, data, 2.0, &o).unwrap(), 0.0);
    let excess = comparison_probe(&env, &g, 0.5, data, |x| data(x) + 1.0, 2.0, &o).unwrap();
    assert!(excess <= 1e-9, "excess {excess}");
}

#[test]
fn too_few_snapshots_is_a_config_error() {
    let env = medium(1, 40.0);
    let o = PdeOptions { snapshots: 3, ..opts(0.1, 4.0) };
    assert!(matches!(solve_cauchy(&env, &Nonlinearity::parabola(), 1.0, 0.0, &o), Err(Error::Config(_))));
}
