//! Explicit monotone finite differences for `u_t = a u_xx + G(u_x) + beta V`
//! with affine data `u(0, x) = theta x`, evolved in the variable `w = u - theta x`.
//!
//! The numerical Hamiltonian is local Lax-Friedrichs,
//! `G((p- + p+)/2) + (s_j/2)(p+ - p-)` with `s_j = max(0, 1.1 L - 2 a_j / dx)`,
//! which is the smallest viscosity keeping the scheme monotone once the
//! physical diffusion is counted.

use serde::{Deserialize, Serialize};

use crate::env_media::SampledEnvironment;
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    pub dx: f64,
    pub t_final: f64,
    /// Number of dyadic snapshots `T/2^(k-1), ..., T/2, T`.
    pub snapshots: usize,
    /// Fixed step; `None` takes `cfl_safety` times the stability limit.
    #[serde(default)]
    pub dt: Option<f64>,
    pub cfl_safety: f64,
    pub viscosity_factor: f64,
    /// Padding around the sublevel set `{G <= G(theta) + beta}`.
    pub box_pad: f64,
    /// Observe the mean of `w(t, .)` over `|x| <= observe_radius`; 0 reads `x = 0`.
    #[serde(default)]
    pub observe_radius: f64,
    /// Points in the recorded slope series.
    pub series_len: usize,
    /// Oscillation threshold for the inconclusive flag.
    pub tol: f64,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions {
            dx: 0.05,
            t_final: 64.0,
            snapshots: 4,
            dt: None,
            cfl_safety: 0.9,
            viscosity_factor: 1.1,
            box_pad: 0.25,
            observe_radius: 0.0,
            series_len: 256,
            tol: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdeRun {
    pub theta: f64,
    pub beta: f64,
    pub seed: u64,
    pub dx: f64,
    pub dt: f64,
    pub t_final: f64,
    pub half_width: f64,
    pub gradient_box: (f64, f64),
    pub lipschitz: f64,
    pub cfl_margin: f64,
    /// `(t, w(t, 0) / t)`.
    pub series: Vec<(f64, f64)>,
    pub snapshots: Vec<(f64, f64)>,
    /// Extremes of `u_x` over the trusted zone for `t >= 1`.
    pub gradient_range: (f64, f64),
    pub h_l: f64,
    pub h_u: f64,
    pub richardson: f64,
    pub inconclusive: bool,
}

#[derive(Serialize)]
struct Summary {
    #[serde(rename = "H_L")]
    h_l: f64,
    #[serde(rename = "H_U")]
    h_u: f64,
    richardson: f64,
    cfl_margin: f64,
}

impl PdeRun {
    pub fn series_csv(&self) -> String {
        let mut s = String::from("t,slope\n");
        for (t, v) in &self.series {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Summary { h_l: self.h_l, h_u: self.h_u, richardson: self.richardson, cfl_margin: self.cfl_margin })
            .expect("plain numbers serialize")
    }

    /// True when `u_x` stayed inside the certified box after `t = 1`.
    pub fn gradient_within_box(&self, tol: f64) -> bool {
        let (lo, hi) = self.gradient_box;
        let pad = tol * (1.0 + lo.abs().max(hi.abs()));
        self.gradient_range.0 >= lo - pad && self.gradient_range.1 <= hi + pad
    }
}

/// Grid, coefficients and step for one run.
struct Scheme<'a> {
    g: &'a Nonlinearity,
    theta: f64,
    beta: f64,
    a: Vec<f64>,
    v: Vec<f64>,
    visc: Vec<f64>,
    dx: f64,
    dt: f64,
    /// Index of `x = 0`.
    mid: usize,
}

impl<'a> Scheme<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(env: &SampledEnvironment, g: &'a Nonlinearity, beta: f64, theta: f64, half_width: f64, dx: f64, lipschitz: f64, opts: &PdeOptions) -> Result<(Self, f64)> {
        let k = (dx / env.dx).round();
        if k < 1.0 || (k * env.dx - dx).abs() > 1e-9 * dx {
            return Err(Error::Resolution(format!("pde dx={dx} is not a multiple of the environment step {}", env.dx)));
        }
        let k = k as usize;
        let n = (half_width / dx).ceil() as usize + 2;
        let emid = (env.len() - 1) / 2;
        if n * k > emid {
            return Err(Error::Domain(format!(
                "pde domain half-width {} exceeds the sampled environment ({})",
                n as f64 * dx,
                env.half_width
            )));
        }
        let idx = |i: usize| emid + i * k - n * k;
        let a: Vec<f64> = (0..=2 * n).map(|i| env.a[idx(i)]).collect();
        let v: Vec<f64> = (0..=2 * n).map(|i| env.v[idx(i)]).collect();
        let s = opts.viscosity_factor * lipschitz;
        let visc: Vec<f64> = a.iter().map(|&aj| (s - 2.0 * aj / dx).max(0.0)).collect();
        let limit = a
            .iter()
            .zip(&visc)
            .map(|(&aj, &sj)| dx * dx / (2.0 * aj + sj * dx))
            .fold(f64::INFINITY, f64::min);
        let a_max = a.iter().cloned().fold(0.0, f64::max);
        let spec_limit = dx * dx / (2.0 * a_max + dx * lipschitz);
        let dt = match opts.dt {
            Some(dt) => {
                if dt > limit.min(spec_limit) {
                    return Err(Error::Config(format!("dt={dt} violates the CFL bound {}", limit.min(spec_limit))));
                }
                dt
            }
            None => opts.cfl_safety * dx * dx / (2.0 * a_max + opts.viscosity_factor * lipschitz * dx),
        };
        let margin = 1.0 - dt / limit.min(spec_limit);
        Ok((Scheme { g, theta, beta, a, v, visc, dx, dt, mid: n }, margin))
    }

    fn len(&self) -> usize {
        self.a.len()
    }

    /// One explicit step on `lo..=hi`; cells `lo-1` and `hi+1` are ghosts
    /// filled by linear extrapolation.
    fn step(&self, w: &mut [f64], next: &mut [f64], lo: usize, hi: usize) {
        w[lo - 1] = 2.0 * w[lo] - w[lo + 1];
        w[hi + 1] = 2.0 * w[hi] - w[hi - 1];
        let (dx, dt, th) = (self.dx, self.dt, self.theta);
        let inv = 1.0 / dx;
        for j in lo..=hi {
            let pm = th + (w[j] - w[j - 1]) * inv;
            let pp = th + (w[j + 1] - w[j]) * inv;
            let ham = self.g.eval(0.5 * (pm + pp)) + 0.5 * self.visc[j] * (pp - pm);
            let diff = self.a[j] * (pp - pm) * inv;
            next[j] = w[j] + dt * (diff + ham + self.beta * self.v[j]);
        }
        w[lo..=hi].copy_from_slice(&next[lo..=hi]);
    }

    fn observe(&self, w: &[f64], radius: f64) -> f64 {
        let r = (radius / self.dx).round() as usize;
        if r == 0 {
            return w[self.mid];
        }
        let s: f64 = w[self.mid - r..=self.mid + r].iter().sum();
        s / (2 * r + 1) as f64
    }

    fn gradient_extremes(&self, w: &[f64], lo: usize, hi: usize) -> (f64, f64) {
        let mut out = (f64::INFINITY, f64::NEG_INFINITY);
        for j in lo..hi {
            let p = self.theta + (w[j + 1] - w[j]) / self.dx;
            out.0 = out.0.min(p);
            out.1 = out.1.max(p);
        }
        out
    }
}

/// Distance from the observation zone still able to influence it after time `s`.
fn reach(speed: f64, a_max: f64, s: f64) -> f64 {
    speed * s + 6.0 * (a_max * s).sqrt()
}

/// Gradient box `{G <= G(theta) + beta}` padded, with the Lipschitz constant on it.
pub fn gradient_box(g: &Nonlinearity, beta: f64, theta: f64, pad: f64) -> Result<((f64, f64), f64)> {
    let level = g.eval(theta) + beta;
    let (lo, hi) = g
        .coercivity_bounds(level)
        .ok_or_else(|| Error::Numerical(format!("no sublevel set at level {level}")))?;
    let (lo, hi) = (lo.min(theta) - pad, hi.max(theta) + pad);
    Ok(((lo, hi), g.lipschitz_on(lo, hi)))
}

pub fn solve_cauchy(env: &SampledEnvironment, g: &Nonlinearity, beta: f64, theta: f64, opts: &PdeOptions) -> Result<PdeRun> {
    if opts.snapshots < 4 {
        return Err(Error::Config(format!("need at least 4 dyadic snapshots, got {}", opts.snapshots)));
    }
    if !(opts.t_final > 0.0 && opts.dx > 0.0) {
        return Err(Error::Config("t_final and dx must be positive".into()));
    }
    let (gbox, lip) = gradient_box(g, beta, theta, opts.box_pad)?;
    let a_max = env.a_max();
    let observe = opts.observe_radius.max(opts.dx);
    let half_width = observe + 2.0 * opts.dx + reach(lip, a_max, opts.t_final);
    let (sch, cfl_margin) = Scheme::new(env, g, beta, theta, half_width, opts.dx, lip, opts)?;
    let steps_per = (opts.t_final / sch.dt / (1u64 << (opts.snapshots - 1)) as f64).ceil() as usize;
    let nsteps = steps_per << (opts.snapshots - 1);
    let scheme = Scheme { dt: opts.t_final / nsteps as f64, ..sch };
    let n = scheme.len();
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    let record = (nsteps / opts.series_len.max(1)).max(1);
    let mut series = Vec::new();
    let mut snaps = Vec::new();
    let mut grange = (f64::INFINITY, f64::NEG_INFINITY);
    let obs_cells = (observe / opts.dx).ceil() as usize + 1;
    for s in 1..=nsteps {
        let t_left = (nsteps - s + 1) as f64 * scheme.dt;
        let zone = ((reach(lip, a_max, t_left) / opts.dx).ceil() as usize + obs_cells).min(scheme.mid - 1);
        let (lo, hi) = (scheme.mid - zone, scheme.mid + zone);
        scheme.step(&mut w, &mut next, lo, hi);
        let t = s as f64 * scheme.dt;
        if s % record == 0 || s == nsteps {
            series.push((t, scheme.observe(&w, opts.observe_radius) / t));
            if t >= 1.0 {
                // Trusted zone: cells whose value can still reach the observation at this t.
                let tz = ((reach(lip, a_max, opts.t_final - t) / opts.dx).floor() as usize + obs_cells).min(zone - 1);
                let (a, b) = scheme.gradient_extremes(&w, scheme.mid - tz, scheme.mid + tz);
                grange = (grange.0.min(a), grange.1.max(b));
                let pad = 0.5 * (gbox.1 - gbox.0);
                if !(a >= gbox.0 - pad && b <= gbox.1 + pad) {
                    return Err(Error::Numerical(format!(
                        "stability: gradient range [{a}, {b}] left the certified box [{}, {}] at t={t}",
                        gbox.0, gbox.1
                    )));
                }
            }
        }
        if s % steps_per == 0 && (s / steps_per).is_power_of_two() {
            snaps.push((t, scheme.observe(&w, opts.observe_radius) / t));
        }
    }
    if grange.0 > grange.1 {
        grange = (theta, theta);
    }
    let mut run = PdeRun {
        theta,
        beta,
        seed: env.seed,
        dx: opts.dx,
        dt: scheme.dt,
        t_final: opts.t_final,
        half_width: scheme.mid as f64 * opts.dx,
        gradient_box: gbox,
        lipschitz: lip,
        cfl_margin,
        series,
        snapshots: snaps,
        gradient_range: grange,
        h_l: f64::NAN,
        h_u: f64::NAN,
        richardson: f64::NAN,
        inconclusive: false,
    };
    let (hl, hu) = effective_slope(&run)?;
    run.h_l = hl;
    run.h_u = hu;
    let k = run.snapshots.len();
    run.richardson = 2.0 * run.snapshots[k - 1].1 - run.snapshots[k - 2].1;
    let (s1, s2, s3) = (run.snapshots[k - 3].1, run.snapshots[k - 2].1, run.snapshots[k - 1].1);
    run.inconclusive = (s2 - s1) * (s3 - s2) < 0.0 && hu - hl > 10.0 * opts.tol;
    Ok(run)
}

/// `(min, max)` of the slope over the last three dyadic snapshots.
pub fn effective_slope(run: &PdeRun) -> Result<(f64, f64)> {
    let k = run.snapshots.len();
    if k < 4 {
        return Err(Error::Config(format!("effective slope needs 4 dyadic snapshots, run has {k}")));
    }
    let last = &run.snapshots[k - 3..];
    let lo = last.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = last.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Evolves `u1(0) = g1 <= u2(0) = g2` and returns the largest excess of
/// `u1 - u2` over `sup (g1 - g2)` seen in the trusted zone.
pub fn comparison_probe<F1, F2>(env: &SampledEnvironment, g: &Nonlinearity, beta: f64, g1: F1, g2: F2, t_final: f64, opts: &PdeOptions) -> Result<f64>
where
    F1: Fn(f64) -> f64,
    F2: Fn(f64) -> f64,
{
    let dx = opts.dx;
    // Slope range of the data, probed on a coarse grid first to size the domain.
    let probe = |f: &dyn Fn(f64) -> f64, hw: f64| {
        let m = (hw / dx) as i64;
        let mut r = (f64::INFINITY, f64::NEG_INFINITY);
        for i in -m..m {
            let s = (f((i + 1) as f64 * dx) - f(i as f64 * dx)) / dx;
            r = (r.0.min(s), r.1.max(s));
        }
        r
    };
    let span = env.half_width - 4.0 * dx;
    let (r1, r2) = (probe(&g1, span), probe(&g2, span));
    let (plo, phi) = (r1.0.min(r2.0), r1.1.max(r2.1));
    let level = g.eval(plo).max(g.eval(phi)).max(g.eval(plo.max(0.0).min(phi))) + beta;
    let (blo, bhi) = g.coercivity_bounds(level).ok_or_else(|| Error::Numerical("no sublevel set".into()))?;
    let (blo, bhi) = (blo.min(plo) - opts.box_pad, bhi.max(phi) + opts.box_pad);
    let lip = g.lipschitz_on(blo, bhi);
    let a_max = env.a_max();
    let observe = 1.0;
    let half_width = observe + 2.0 * dx + reach(lip, a_max, t_final);
    let (sch, _) = Scheme::new(env, g, beta, 0.0, half_width, dx, lip, opts)?;
    let nsteps = (t_final / sch.dt).ceil() as usize;
    let scheme = Scheme { dt: t_final / nsteps as f64, ..sch };
    let n = scheme.len();
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 - scheme.mid as f64) * dx).collect();
    let mut u1: Vec<f64> = xs.iter().map(|&x| g1(x)).collect();
    let mut u2: Vec<f64> = xs.iter().map(|&x| g2(x)).collect();
    let sup0 = u1.iter().zip(&u2).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    let mut next = vec![0.0; n];
    let obs_cells = (observe / dx).ceil() as usize + 1;
    let mut worst: f64 = 0.0;
    for s in 1..=nsteps {
        let t_left = (nsteps - s + 1) as f64 * scheme.dt;
        let zone = ((reach(lip, a_max, t_left) / dx).ceil() as usize + obs_cells).min(scheme.mid - 1);
        let (lo, hi) = (scheme.mid - zone, scheme.mid + zone);
        scheme.step(&mut u1, &mut next, lo, hi);
        scheme.step(&mut u2, &mut next, lo, hi);
        let tz = ((reach(lip, a_max, t_left - scheme.dt) / dx).floor() as usize + obs_cells).min(zone - 1);
        for j in scheme.mid - tz..=scheme.mid + tz {
            worst = worst.max(u1[j] - u2[j] - sup0);
        }
    }
    Ok(worst.max(0.0))
}
