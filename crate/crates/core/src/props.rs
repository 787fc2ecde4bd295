//! Randomized property suites: ordering and separation of corrector
//! solutions, the log-gap bound near touching points, confinement, the
//! comparison principle of the scheme and stability in `G`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::{find_near_touch_interval, Corrector, CorrectorSolution, Tolerances, Window};
use crate::effective_h::{Construction, EhOptions};
use crate::env_media::SampledEnvironment;
use crate::error::{Error, Result};
use crate::harness::{at, ExperimentConfig};
use crate::nonlinearity::{LevelInterval, Nonlinearity, Slope};
use crate::pde_reference::{comparison_probe, PdeOptions};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest observed value of the checked quantity.
    pub worst: f64,
    pub bound: f64,
    pub pass: bool,
    pub note: String,
}

impl PropReport {
    fn new(name: &str, trials: usize, violations: usize, worst: f64, bound: f64, note: String) -> Self {
        PropReport { name: name.into(), trials, violations, worst, bound, pass: trials > 0 && violations == 0, note }
    }
}

pub fn reports_csv(reports: &[PropReport]) -> String {
    let mut s = String::from("name,trials,violations,worst,bound,pass\n");
    for r in reports {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.name, r.trials, r.violations, r.worst, r.bound, r.pass));
    }
    s
}

fn random_interval(g: &Nonlinearity, rng: &mut ChaCha8Rng, lambda: f64, beta: f64) -> Option<LevelInterval> {
    let ivs: Vec<LevelInterval> = g.level_intervals(lambda, beta).into_iter().filter(|iv| iv.width() > 1e-6).collect();
    if ivs.is_empty() {
        None
    } else {
        Some(ivs[rng.gen_range(0..ivs.len())])
    }
}

/// Pairs of solutions started inside a level interval and integrated in its
/// invariant direction never change order.
pub fn non_crossing(c: &Corrector<'_>, rng: &mut ChaCha8Rng, trials: usize, span: f64) -> Result<PropReport> {
    let m0 = c.g.global_min().g;
    let w = c.window.half_width;
    let (mut done, mut bad, mut worst) = (0, 0, 0.0f64);
    let mut attempts = 0;
    while done < trials && attempts < 20 * trials {
        attempts += 1;
        let lambda = m0 + rng.gen_range(0.05..(c.beta + 2.0));
        let Some(iv) = random_interval(c.g, rng, lambda, c.beta) else { continue };
        let f1 = rng.gen_range(iv.p1..iv.p2);
        let f2 = rng.gen_range(iv.p1..iv.p2);
        if (f2 - f1).abs() < 1e-9 {
            continue;
        }
        let x0 = rng.gen_range(-0.5 * w..0.5 * w);
        let x1 = if iv.low_left { x0 + span } else { x0 - span };
        let a = c.integrate_ode(lambda, x0, f1, x1, None)?;
        let b = c.integrate_ode(lambda, x0, f2, x1, None)?;
        let s0 = (f2 - f1).signum();
        let cross = a.iter().zip(&b).map(|(p, q)| -(q.1 - p.1) * s0).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(cross);
        if cross > 1e-12 {
            bad += 1;
        }
        done += 1;
    }
    Ok(PropReport::new("non_crossing", done, bad, worst, 1e-12, format!("{span}-long integrations, max sign-reversed difference")))
}

/// Minimal solutions at `lambda1 < lambda2` on right-hand level intervals
/// stay at distance `>= (lambda2 - lambda1) / C_R - 10 tol_ode`.
pub fn separation(c: &Corrector<'_>, tol: &Tolerances, rng: &mut ChaCha8Rng, pairs: usize) -> Result<(PropReport, Vec<CorrectorSolution>)> {
    let base = c.g.global_min().g + c.beta;
    let (mut done, mut bad, mut worst) = (0, 0, f64::NEG_INFINITY);
    let mut sols = Vec::new();
    let right = |lambda: f64| c.g.level_intervals(lambda, c.beta).into_iter().next_back();
    while done < pairs {
        let l1 = base + rng.gen_range(0.1..3.0);
        let l2 = base + rng.gen_range(0.1..3.0);
        let (l1, l2) = (l1.min(l2), l1.max(l2));
        if l2 - l1 < 1e-3 {
            continue;
        }
        let (Some(i1), Some(i2)) = (right(l1), right(l2)) else { continue };
        let s1 = c.minimal_solution(l1, &i1)?;
        let s2 = c.minimal_solution(l2, &i2)?;
        let sup = s1.f.iter().zip(&s2.f).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
        let need = (l2 - l1) / c.lipschitz_bound(l2) - 10.0 * tol.ode(l2);
        worst = worst.max(need - sup);
        if sup < need {
            bad += 1;
        }
        sols.push(s1);
        sols.push(s2);
        done += 1;
    }
    Ok((PropReport::new("separation", done, bad, worst, 0.0, "max of required minus observed sup distance".into()), sols))
}

/// Near-touch scans on an ordered pair with a positive gap: the interval has
/// the requested resistance, the gap stays below `delta` on it and
/// `|log gap(x) - log gap(x*)| <= C_R R(x*, x)`.
pub fn gronwall_scans(
    env: &SampledEnvironment,
    lower: &CorrectorSolution,
    upper: &CorrectorSolution,
    c_r: f64,
    rng: &mut ChaCha8Rng,
    scans: usize,
) -> Result<PropReport> {
    let gap: Vec<f64> = upper.f.iter().zip(&lower.f).map(|(u, l)| u - l).collect();
    let gmin = gap.iter().copied().fold(f64::INFINITY, f64::min);
    if !(gmin > 0.0) {
        return Ok(PropReport::new("gronwall", 0, 0, f64::NAN, 0.0, "pair touches, no positive gap to scan".into()));
    }
    let (mut bad, mut worst) = (0, f64::NEG_INFINITY);
    let mut failures = Vec::new();
    for _ in 0..scans {
        let delta = rng.gen_range(1.25 * gmin..(1.25 * gmin).max(0.5));
        let y0 = rng.gen_range(0.25..2.0);
        let (l1, l2) = match find_near_touch_interval(env, lower, upper, delta, y0, c_r) {
            Ok(v) => v,
            Err(e) => {
                bad += 1;
                failures.push(e.to_string());
                continue;
            }
        };
        let res = env.resistance_integral(l1, l2)?;
        let ks: Vec<usize> = (0..gap.len()).filter(|&k| lower.x(k) >= l1 - 1e-9 && lower.x(k) <= l2 + 1e-9).collect();
        let kstar = *ks.iter().min_by(|&&a, &&b| gap[a].total_cmp(&gap[b])).expect("nonempty interval");
        let mut excess = (y0 * (1.0 - 1e-6) - res).max(ks.iter().map(|&k| gap[k] - delta).fold(f64::NEG_INFINITY, f64::max));
        for &k in &ks {
            let r = env.resistance_integral(lower.x(kstar.min(k)), lower.x(kstar.max(k)))?;
            excess = excess.max((gap[k].ln() - gap[kstar].ln()).abs() - c_r * r - 1e-6);
        }
        worst = worst.max(excess);
        if excess > 0.0 {
            bad += 1;
        }
    }
    let note = if failures.is_empty() { "max excess over the three bounds".into() } else { failures.join("; ") };
    Ok(PropReport::new("gronwall", scans, bad, worst, 0.0, note))
}

/// Every solution stays inside the sublevel set `{G <= lambda}`.
pub fn confinement(g: &Nonlinearity, sols: &[&CorrectorSolution]) -> PropReport {
    let (mut bad, mut worst) = (0, f64::NEG_INFINITY);
    for s in sols {
        let (lo, hi) = g.coercivity_bounds(s.lambda).unwrap_or((f64::NAN, f64::NAN));
        let out = (lo - s.min()).max(s.max() - hi);
        worst = worst.max(out);
        if !(out <= 1e-9 * (1.0 + lo.abs().max(hi.abs()))) {
            bad += 1;
        }
    }
    PropReport::new("confinement", sols.len(), bad, worst, 0.0, "max distance outside the sublevel set".into())
}

/// Random ordered pairs of initial data `g1 <= g2`.
pub fn comparison_trials(env: &SampledEnvironment, g: &Nonlinearity, beta: f64, rng: &mut ChaCha8Rng, trials: usize, t_final: f64) -> Result<PropReport> {
    let opts = PdeOptions { dx: 0.05, ..PdeOptions::default() };
    let (mut bad, mut worst) = (0, f64::NEG_INFINITY);
    for _ in 0..trials {
        let slope = rng.gen_range(-1.0..1.0);
        let waves: Vec<(f64, f64, f64)> =
            (0..3).map(|_| (rng.gen_range(0.0..0.3), rng.gen_range(0.2..2.0), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
        let (lift, bump, k, phase) = (if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.5) }, rng.gen_range(0.0..0.5), rng.gen_range(0.2..2.0), rng.gen_range(0.0..std::f64::consts::TAU));
        let g1 = |x: f64| slope * x + waves.iter().map(|(a, k, p)| a * (k * x + p).sin()).sum::<f64>();
        let g2 = |x: f64| g1(x) + lift + bump * (1.0 + (k * x + phase).sin());
        let v = comparison_probe(env, g, beta, g1, g2, t_final, &opts)?;
        worst = worst.max(v);
        if v > 1e-6 * t_final {
            bad += 1;
        }
    }
    Ok(PropReport::new("comparison", trials, bad, worst, 1e-6 * t_final, format!("T={t_final}, excess of u1 - u2 over its initial sup")))
}

/// `G` with every breakpoint value moved by at most `eps`, slopes kept.
pub fn perturbed(g: &Nonlinearity, eps: f64, rng: &mut ChaCha8Rng) -> Result<Nonlinearity> {
    for _ in 0..20 {
        let mut spec = g.to_spec();
        for (bp, k) in spec.breakpoints.iter_mut().zip(g.knots()) {
            bp.g += eps * rng.gen_range(-1.0..1.0);
            if k.dl != k.dr {
                return Err(Error::Class("stability perturbation needs a C1 nonlinearity".into()));
            }
            bp.dg = Some(Slope::Both(k.dl));
        }
        if let Ok(h) = Nonlinearity::from_spec(&spec) {
            return Ok(h);
        }
    }
    Err(Error::Class("no admissible perturbation found".into()))
}

/// Curves of `G` and of a perturbation within `eps` agree to `eps + 2 tol_x`.
pub fn stability(cfg: &ExperimentConfig, env: &SampledEnvironment, g: &Nonlinearity, beta: f64, eps: f64, rng: &mut ChaCha8Rng) -> Result<PropReport> {
    let h = perturbed(g, eps, rng)?;
    let opts = EhOptions { certificates: false, ..cfg.eh_options() };
    let thetas = cfg.thetas();
    let a = Construction::new(g, env, beta, opts.clone())?.curve(&thetas)?;
    let b = Construction::new(&h, env, beta, opts)?.curve(&thetas)?;
    let moved = a.points.iter().zip(&b.points).map(|(p, q)| (p.lambda - q.lambda).abs()).fold(0.0, f64::max);
    let bound = eps + 2.0 * cfg.tolerances.tol_x;
    let dist = g.sup_distance(&h, cfg.theta_grid.min - 5.0, cfg.theta_grid.max + 5.0, 4000);
    Ok(PropReport::new(
        "stability",
        thetas.len(),
        usize::from(moved > bound),
        moved,
        bound,
        format!("sup |G - G_eps| = {dist:.3e}"),
    ))
}

/// Counts and seeds of the suites.
#[derive(Clone, Copy, Debug)]
pub struct SuiteSizes {
    pub non_crossing: usize,
    pub separation: usize,
    pub gronwall: usize,
    pub comparison: usize,
    pub comparison_t: f64,
    pub stability_eps: f64,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes { non_crossing: 200, separation: 50, gronwall: 50, comparison: 20, comparison_t: 4.0, stability_eps: 0.01 }
    }
}

/// Solution-level suites on the first seed of `cfg`.
pub fn suite_solutions(cfg: &ExperimentConfig, sizes: &SuiteSizes) -> Result<Vec<PropReport>> {
    let seed = cfg.seeds[0];
    let prep = cfg.prepare()?;
    let env = cfg.sample(&prep, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let cons = Construction::new(&prep.g, &env, prep.beta, cfg.eh_options()).map_err(|e| at(e, seed, None))?;
    let g = cons.full().clone();
    let short = Window { half_width: 100.0_f64.min(cfg.window.half_width), burn_in: 50.0_f64.min(cfg.window.burn_in) };
    let c = Corrector::new(&env, &g, prep.beta, short)?;
    let mut out = vec![non_crossing(&c, &mut rng, sizes.non_crossing, 20.0)?];
    let (sep, mut sols) = separation(&c, &cfg.tolerances, &mut rng, sizes.separation)?;
    out.push(sep);
    let flats = cons.flat_pieces()?;
    match flats.first() {
        Some(&(lo, hi, _)) => {
            let theta = 0.5 * (lo + hi);
            let (lower, upper, lambda) = cons.certificate_pair(theta).map_err(|e| at(e, seed, Some(theta)))?;
            let full = Corrector::new(&env, &g, prep.beta, cfg.window)?;
            out.push(gronwall_scans(&env, &lower, &upper, full.lipschitz_bound(lambda), &mut rng, sizes.gronwall)?);
            sols.push(lower);
            sols.push(upper);
        }
        None => out.push(PropReport::new("gronwall", 0, 0, f64::NAN, 0.0, "no flat piece for this configuration".into())),
    }
    let refs: Vec<&CorrectorSolution> = sols.iter().collect();
    out.push(confinement(&g, &refs));
    Ok(out)
}

/// Scheme-level suites on the first seed of `cfg`.
pub fn suite_scheme(cfg: &ExperimentConfig, sizes: &SuiteSizes) -> Result<Vec<PropReport>> {
    let seed = cfg.seeds[0];
    let prep = cfg.prepare()?;
    let env = cfg.sample(&prep, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
    let g = Construction::new(&prep.g, &env, prep.beta, cfg.eh_options())?.full().clone();
    Ok(vec![
        comparison_trials(&env, &g, prep.beta, &mut rng, sizes.comparison, sizes.comparison_t)?,
        stability(cfg, &env, &g, prep.beta, sizes.stability_eps, &mut rng)?,
    ])
}
