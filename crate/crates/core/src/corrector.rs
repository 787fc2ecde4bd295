//! Stationary solutions of the corrector ODE `a f' + G(f) + beta V = lambda`.
//!
//! Minimal and maximal confined solutions on a level interval are obtained by
//! long initial value problems started at the interval endpoints, integrated
//! in the direction in which the interval is invariant.

use serde::{Deserialize, Serialize};

use crate::env_media::SampledEnvironment;
use crate::error::{Error, Result};
use crate::nonlinearity::{LevelInterval, Nonlinearity};

/// RK45 step tolerance.
pub const STEP_TOL: f64 = 1e-9;

/// Cells where `f` moves more than this are re-integrated by the residual check.
const STEEP_CELL: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Evaluation window `[-W, W]`.
    #[serde(rename = "W")]
    pub half_width: f64,
    pub burn_in: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative to `max(1, |lambda|)`.
    pub tol_ode: f64,
    pub tol_gap: f64,
    pub tol_mean: f64,
    pub tol_x: f64,
    pub tol_flat: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tol_ode: 1e-6, tol_gap: 1e-3, tol_mean: 1e-5, tol_x: 1e-2, tol_flat: 1e-3 }
    }
}

impl Tolerances {
    pub fn ode(&self, lambda: f64) -> f64 {
        self.tol_ode * lambda.abs().max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorSolution {
    pub lambda: f64,
    pub beta: f64,
    pub interval: LevelInterval,
    /// Environment index of the first stored node (`x = -W`).
    pub first: usize,
    pub dx: f64,
    pub x0: f64,
    pub f: Vec<f64>,
    pub residual_sup: f64,
    /// Five-point centered-difference residual, reported for comparison.
    pub residual_fd: f64,
    pub mean: f64,
    pub mean_err: f64,
}

impl CorrectorSolution {
    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }
    pub fn len(&self) -> usize {
        self.f.len()
    }
    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
    pub fn min(&self) -> f64 {
        self.f.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn max(&self) -> f64 {
        self.f.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self, env: &SampledEnvironment, g: &Nonlinearity) -> String {
        let res = pointwise_defect(env, g, self.beta, self.lambda, self.first, &self.f);
        let mut s = String::from("x,f,residual\n");
        for (k, (f, r)) in self.f.iter().zip(&res).enumerate() {
            s.push_str(&format!("{},{},{}\n", self.x(k), f, r));
        }
        s
    }
}

/// Trapezoid mean with a 10-segment jackknife error.
pub fn ergodic_mean(f: &[f64]) -> (f64, f64) {
    let n = f.len();
    if n < 2 {
        return (f.first().copied().unwrap_or(0.0), 0.0);
    }
    let trap = |lo: usize, hi: usize| -> f64 {
        let s: f64 = f[lo..=hi].iter().sum::<f64>() - 0.5 * (f[lo] + f[hi]);
        s / (hi - lo) as f64
    };
    let mean = trap(0, n - 1);
    let segs = 10.min(n - 1);
    let bounds: Vec<usize> = (0..=segs).map(|k| k * (n - 1) / segs).collect();
    let seg_sums: Vec<f64> = bounds.windows(2).map(|w| trap(w[0], w[1]) * (w[1] - w[0]) as f64).collect();
    let total: f64 = seg_sums.iter().sum();
    let len = (n - 1) as f64;
    let loo: Vec<f64> = bounds
        .windows(2)
        .zip(&seg_sums)
        .map(|(w, s)| (total - s) / (len - (w[1] - w[0]) as f64))
        .collect();
    let m = loo.iter().sum::<f64>() / segs as f64;
    let var = loo.iter().map(|x| (x - m) * (x - m)).sum::<f64>() * (segs as f64 - 1.0) / segs as f64;
    (mean, var.sqrt())
}

/// Cell data for the right-hand side `(lambda - beta V - G(f)) / a` with
/// `a`, `V` linear in `x` over one grid cell.
struct Cell {
    x: f64,
    dx: f64,
    a0: f64,
    da: f64,
    v0: f64,
    dv: f64,
}

impl Cell {
    fn new(env: &SampledEnvironment, j: usize) -> Self {
        Cell { x: env.x[j], dx: env.dx, a0: env.a[j], da: env.a[j + 1] - env.a[j], v0: env.v[j], dv: env.v[j + 1] - env.v[j] }
    }
    #[inline]
    fn rhs(&self, g: &Nonlinearity, beta: f64, lambda: f64, x: f64, f: f64) -> f64 {
        let t = (x - self.x) / self.dx;
        (lambda - beta * (self.v0 + t * self.dv) - g.eval(f)) / (self.a0 + t * self.da)
    }
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Bounds applied after every accepted step.
#[derive(Clone, Copy)]
enum Guard {
    /// Project onto `[lo, hi]`; overshoot beyond `slack` is an error.
    Clamp { lo: f64, hi: f64, slack: f64 },
    /// Abort when `|f|` exceeds the bound.
    Escape(f64),
}

struct Stepper<'a> {
    g: &'a Nonlinearity,
    /// Corners of `g`; steps are cut to land on them.
    corners: &'a [f64],
    beta: f64,
    lambda: f64,
    tol: f64,
    h: f64,
}

impl Stepper<'_> {
    /// Advance `f` across one cell in the direction `dir = +-1`.
    fn cross_cell(&mut self, cell: &Cell, dir: f64, mut f: f64, guard: Guard) -> Result<f64> {
        let (mut x, x_end) = if dir > 0.0 { (cell.x, cell.x + cell.dx) } else { (cell.x + cell.dx, cell.x) };
        let (g, beta, lambda) = (self.g, self.beta, self.lambda);
        let mut k = [0.0f64; 7];
        k[0] = cell.rhs(g, beta, lambda, x, f);
        let mut rejects = 0;
        while (x_end - x) * dir > 1e-15 * cell.dx {
            let h = self.h.min(cell.dx).min((x_end - x).abs()) * dir;
            for s in 1..7 {
                let mut y = f;
                for (r, kr) in k.iter().enumerate().take(s) {
                    y += h * DP_A[s][r] * kr;
                }
                k[s] = cell.rhs(g, beta, lambda, x + DP_C[s] * h, y);
            }
            let mut y5 = f;
            for r in 0..6 {
                y5 += h * DP_A[6][r] * k[r];
            }
            let err = (h * DP_E.iter().zip(&k).map(|(e, kk)| e * kk).sum::<f64>()).abs();
            let scale = self.tol * f.abs().max(1.0);
            if err <= scale || self.h < 1e-12 {
                let cross = self.corners.iter().find(|&&pk| (pk - f) * (pk - y5) < 0.0 && (f - pk).abs() > 1e-9 && (y5 - pk).abs() > 1e-9);
                if let Some(&pk) = cross {
                    let hn = h.abs() * (pk - f) / (y5 - f);
                    if hn > 1e-12 {
                        self.h = hn;
                        continue;
                    }
                }
                x += h;
                f = y5;
                // FSAL: the last stage is the derivative at the new point.
                k[0] = k[6];
                let fac = if err == 0.0 { 5.0 } else { (0.9 * (scale / err).powf(0.2)).clamp(0.2, 5.0) };
                self.h = (h.abs() * fac).min(cell.dx).max(1e-12);
                match guard {
                    Guard::Clamp { lo, hi, slack } => {
                        if f < lo - slack || f > hi + slack {
                            return Err(Error::Numerical(format!("corrector left its level interval [{lo}, {hi}] with f={f} at x={x}")));
                        }
                        if f < lo || f > hi {
                            f = f.clamp(lo, hi);
                            k[0] = cell.rhs(g, beta, lambda, x, f);
                        }
                    }
                    Guard::Escape(b) => {
                        if !f.is_finite() || f.abs() > b {
                            return Err(Error::Numerical(format!("escape: |f|={} exceeded the guard {b} at x={x}", f.abs())));
                        }
                    }
                }
                rejects = 0;
            } else {
                self.h = (h.abs() * (0.9 * (scale / err).powf(0.2)).clamp(0.1, 0.9)).max(1e-12);
                rejects += 1;
                if rejects > 60 {
                    return Err(Error::Numerical(format!("step size collapse at x={x}")));
                }
                if !y5.is_finite() {
                    self.h *= 0.1;
                }
            }
        }
        Ok(f)
    }
}

/// Deduced invariant-direction bookkeeping for a level interval.
fn start_dir(interval: &LevelInterval) -> f64 {
    if interval.low_left {
        1.0
    } else {
        -1.0
    }
}

const GL3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Per-node residual: at node `k` the larger of the defects of the adjacent cells.
fn pointwise_defect(env: &SampledEnvironment, g: &Nonlinearity, beta: f64, lambda: f64, first: usize, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let dx = env.dx;
    let kinks = g.breakpoints();
    let d: Vec<f64> = (0..n)
        .map(|k| {
            let j = first + k;
            (lambda - beta * env.v[j] - g.eval(f[k])) / env.a[j]
        })
        .collect();
    let mut cell_def = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let cell = Cell::new(env, first + k);
        let (f0, f1, d0, d1) = (f[k], f[k + 1], d[k], d[k + 1]);
        let herm = |t: f64| {
            let (t2, t3) = (t * t, t * t * t);
            (2.0 * t3 - 3.0 * t2 + 1.0) * f0 + (t3 - 2.0 * t2 + t) * dx * d0 + (3.0 * t2 - 2.0 * t3) * f1 + (t3 - t2) * dx * d1
        };
        // Across a breakpoint of G the solution loses a derivative, and on
        // steep cells the cubic interpolant is too coarse; integrate those
        // cells tightly instead.
        let (lo, hi) = (f0.min(f1), f0.max(f1));
        let integral = if hi - lo > STEEP_CELL || kinks.iter().any(|&pk| pk > lo && pk < hi) {
            let mut st = Stepper { g, corners: &kinks, beta, lambda, tol: 1e-13, h: dx / 16.0 };
            match st.cross_cell(&cell, 1.0, f0, Guard::Escape(f64::INFINITY)) {
                Ok(end) => (end - f0) / dx,
                Err(_) => f64::NAN,
            }
        } else {
            GL3.iter().map(|&(z, w)| {
                let t = 0.5 * (z + 1.0);
                0.5 * w * cell.rhs(g, beta, lambda, cell.x + t * dx, herm(t))
            }).sum::<f64>()
        };
        let a_mid = cell.a0 + 0.5 * cell.da;
        cell_def.push((a_mid * ((f1 - f0) / dx - integral)).abs());
    }
    (0..n)
        .map(|k| {
            let l = if k > 0 { cell_def[k - 1] } else { 0.0 };
            let r = if k < n - 1 { cell_def[k] } else { 0.0 };
            l.max(r)
        })
        .collect()
}

/// `max |a f' + G(f) + beta V - lambda|` with the five-point centered stencil.
pub fn centered_residual(env: &SampledEnvironment, g: &Nonlinearity, beta: f64, lambda: f64, first: usize, f: &[f64]) -> f64 {
    let n = f.len();
    let mut best: f64 = 0.0;
    for k in 2..n.saturating_sub(2) {
        let j = first + k;
        let d = (8.0 * (f[k + 1] - f[k - 1]) - (f[k + 2] - f[k - 2])) / (12.0 * env.dx);
        best = best.max((env.a[j] * d + g.eval(f[k]) + beta * env.v[j] - lambda).abs());
    }
    best
}

/// Corrector problem for one environment and one nonlinearity.
#[derive(Clone, Copy)]
pub struct Corrector<'a> {
    pub env: &'a SampledEnvironment,
    pub g: &'a Nonlinearity,
    pub beta: f64,
    pub window: Window,
}

impl<'a> Corrector<'a> {
    pub fn new(env: &'a SampledEnvironment, g: &'a Nonlinearity, beta: f64, window: Window) -> Result<Self> {
        if window.half_width + window.burn_in > env.half_width + 1e-9 {
            return Err(Error::Config(format!(
                "window {} plus burn-in {} exceeds the environment half width {}",
                window.half_width, window.burn_in, env.half_width
            )));
        }
        if !(window.half_width >= 10.0 * env.dx) {
            return Err(Error::Config("evaluation window too small".into()));
        }
        Ok(Corrector { env, g, beta, window })
    }

    fn node(&self, x: f64) -> usize {
        let m = self.env.len() / 2;
        (m as i64 + (x / self.env.dx).round() as i64).clamp(0, self.env.len() as i64 - 1) as usize
    }

    /// Sup of the coercivity box of solutions at level `lambda`.
    pub fn confinement_radius(&self, lambda: f64) -> f64 {
        self.g.coercivity_bounds(lambda).map(|(lo, hi)| lo.abs().max(hi.abs())).unwrap_or(0.0)
    }

    /// Lipschitz constant of `G` on `[-R, R]`, `R` the confinement radius.
    pub fn lipschitz_bound(&self, lambda: f64) -> f64 {
        let r = self.confinement_radius(lambda);
        self.g.lipschitz_on(-r, r)
    }

    /// Unconfined solution from `(x0, f0)` to `x1` at the grid nodes passed.
    pub fn integrate_ode(&self, lambda: f64, x0: f64, f0: f64, x1: f64, guard: Option<f64>) -> Result<Vec<(f64, f64)>> {
        let guard = guard.unwrap_or_else(|| self.confinement_radius(lambda) + 1.0);
        if !f0.is_finite() || f0.abs() > guard {
            return Err(Error::Numerical(format!("escape: initial value {f0} exceeds the guard {guard}")));
        }
        let (j0, j1) = (self.node(x0), self.node(x1));
        let corners = self.g.breakpoints();
        let mut st = Stepper { g: self.g, corners: &corners, beta: self.beta, lambda, tol: STEP_TOL, h: self.env.dx };
        let mut out = vec![(self.env.x[j0], f0)];
        let mut f = f0;
        if j1 >= j0 {
            for j in j0..j1 {
                f = st.cross_cell(&Cell::new(self.env, j), 1.0, f, Guard::Escape(guard))?;
                out.push((self.env.x[j + 1], f));
            }
        } else {
            for j in (j1..j0).rev() {
                f = st.cross_cell(&Cell::new(self.env, j), -1.0, f, Guard::Escape(guard))?;
                out.push((self.env.x[j], f));
            }
        }
        Ok(out)
    }

    /// Confined solution started at `start` at the far end of the burn-in.
    pub fn solve_from(&self, lambda: f64, interval: &LevelInterval, start: f64) -> Result<CorrectorSolution> {
        let (lo, hi) = (interval.p1, interval.p2);
        if !(hi > lo) {
            if self.beta == 0.0 {
                return Ok(self.constant_solution(lambda, interval, lo));
            }
            return Err(Error::Domain("level interval of zero width".into()));
        }
        let w = self.window.half_width;
        let b = self.window.burn_in;
        let (i_lo, i_hi) = (self.node(-w), self.node(w));
        let (b_lo, b_hi) = (self.node(-w - b), self.node(w + b));
        let dir = start_dir(interval);
        let guard = Guard::Clamp { lo, hi, slack: 10.0 * STEP_TOL * lo.abs().max(hi.abs()).max(1.0) + 1e-9 };
        let corners = self.g.breakpoints();
        let mut st = Stepper { g: self.g, corners: &corners, beta: self.beta, lambda, tol: STEP_TOL, h: self.env.dx };
        let n = i_hi - i_lo + 1;
        let mut f = vec![0.0; n];
        let mut val = start.clamp(lo, hi);
        if dir > 0.0 {
            for j in b_lo..i_hi {
                if j >= i_lo {
                    f[j - i_lo] = val;
                }
                val = st.cross_cell(&Cell::new(self.env, j), 1.0, val, guard)?;
            }
            f[n - 1] = val;
        } else {
            for j in (i_lo..b_hi).rev() {
                if j < i_hi {
                    f[j + 1 - i_lo] = val;
                }
                val = st.cross_cell(&Cell::new(self.env, j), -1.0, val, guard)?;
            }
            f[0] = val;
        }
        Ok(self.finish(lambda, *interval, i_lo, f))
    }

    fn constant_solution(&self, lambda: f64, interval: &LevelInterval, p: f64) -> CorrectorSolution {
        let w = self.window.half_width;
        let (i_lo, i_hi) = (self.node(-w), self.node(w));
        self.finish(lambda, *interval, i_lo, vec![p; i_hi - i_lo + 1])
    }

    fn finish(&self, lambda: f64, interval: LevelInterval, first: usize, f: Vec<f64>) -> CorrectorSolution {
        let residual_sup = pointwise_defect(self.env, self.g, self.beta, lambda, first, &f).into_iter().fold(0.0, f64::max);
        let residual_fd = centered_residual(self.env, self.g, self.beta, lambda, first, &f);
        let (mean, mean_err) = ergodic_mean(&f);
        CorrectorSolution {
            lambda,
            beta: self.beta,
            interval,
            first,
            dx: self.env.dx,
            x0: self.env.x[first],
            f,
            residual_sup,
            residual_fd,
            mean,
            mean_err,
        }
    }

    /// Residual of a stored solution against the equation at level `lambda`.
    pub fn residual(&self, sol: &CorrectorSolution, lambda: f64) -> f64 {
        pointwise_defect(self.env, self.g, self.beta, lambda, sol.first, &sol.f).into_iter().fold(0.0, f64::max)
    }

    pub fn minimal_solution(&self, lambda: f64, interval: &LevelInterval) -> Result<CorrectorSolution> {
        self.solve_from(lambda, interval, interval.p1)
    }

    pub fn maximal_solution(&self, lambda: f64, interval: &LevelInterval) -> Result<CorrectorSolution> {
        self.solve_from(lambda, interval, interval.p2)
    }

    /// Both extremal solutions; a single solve when `p1 = p2`.
    pub fn extremal_pair(&self, lambda: f64, interval: &LevelInterval) -> Result<(CorrectorSolution, CorrectorSolution)> {
        let lo = self.minimal_solution(lambda, interval)?;
        if interval.width() == 0.0 {
            return Ok((lo.clone(), lo));
        }
        Ok((lo, self.maximal_solution(lambda, interval)?))
    }
}

/// Gap sequence `f_upper - f_lower`.
fn gaps(lower: &CorrectorSolution, upper: &CorrectorSolution) -> Result<Vec<f64>> {
    if lower.first != upper.first || lower.len() != upper.len() {
        return Err(Error::Config("solutions live on different windows".into()));
    }
    Ok(upper.f.iter().zip(&lower.f).map(|(u, l)| u - l).collect())
}

/// Interval of resistance `y0` on which `f_upper - f_lower <= delta`.
/// `c_r` is the Lipschitz constant used for the Gronwall expansion.
pub fn find_near_touch_interval(
    env: &SampledEnvironment,
    lower: &CorrectorSolution,
    upper: &CorrectorSolution,
    delta: f64,
    y0: f64,
    c_r: f64,
) -> Result<(f64, f64)> {
    let gap = gaps(lower, upper)?;
    let n = gap.len();
    let (xa, xb) = (lower.x(0), lower.x(n - 1));
    let verify = |l1: f64, l2: f64| -> f64 {
        let k1 = ((l1 - xa) / lower.dx).floor().max(0.0) as usize;
        let k2 = (((l2 - xa) / lower.dx).ceil() as usize).min(n - 1);
        gap[k1..=k2].iter().copied().fold(0.0, f64::max)
    };
    if gap.iter().all(|&g| g == 0.0) {
        return env.resistance_window(0.0, y0, xa, xb).ok_or_else(|| Error::Search("window shorter than the resistance target".into()));
    }
    // Gronwall route: a point with gap <= delta exp(-C_R y0) controls the gap
    // over the following interval of resistance y0.
    let (kmin, gmin) = gap.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &g)| if g < acc.1 { (k, g) } else { acc });
    if gmin <= delta * (-c_r * y0).exp() {
        let x = lower.x(kmin);
        if let Some((l1, l2)) = env.resistance_window(x - 1e9, y0, x, xb).or_else(|| env.resistance_window(x + 1e9, y0, xa, x)) {
            if verify(l1, l2) <= delta {
                return Ok((l1, l2));
            }
        }
    }
    // Sliding scan over windows of resistance y0, minimizing the max gap.
    let cum: Vec<f64> = (0..n).map(|k| env.resistance_integral(env.x[0], lower.x(k)).unwrap_or(0.0)).collect();
    let mut best = (f64::INFINITY, 0usize, 0usize);
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let (mut rr, mut pushed) = (0usize, 0usize);
    for left in 0..n {
        while rr < n && cum[rr] - cum[left] < y0 {
            rr += 1;
        }
        if rr >= n {
            break;
        }
        while pushed <= rr {
            while dq.back().is_some_and(|&b| gap[b] <= gap[pushed]) {
                dq.pop_back();
            }
            dq.push_back(pushed);
            pushed += 1;
        }
        while dq.front().is_some_and(|&f| f < left) {
            dq.pop_front();
        }
        let m = gap[*dq.front().unwrap()];
        if m < best.0 {
            best = (m, left, rr);
        }
    }
    if best.0 <= delta {
        let l1 = lower.x(best.1);
        let (a, b) = env
            .resistance_window(l1 - 1e9, y0, l1, lower.x(best.2))
            .ok_or_else(|| Error::Search("resistance bisection failed".into()))?;
        return Ok((a, b));
    }
    Err(Error::Search(format!(
        "no interval of resistance {y0} with gap <= {delta}; best max gap {} (a longer window may help)",
        best.0
    )))
}

#[derive(Clone, Debug)]
pub struct Subsolution {
    pub f_delta: Vec<f64>,
    pub xi: Vec<f64>,
    pub c0: f64,
    pub c_r: f64,
    /// `min_x [a f_delta' + G(f_delta) + beta V - (lambda - C0 delta)]`.
    pub margin: f64,
    /// Consistency check: the same margin from five-point differences of `f_delta`.
    pub margin_fd: f64,
    pub interval: (f64, f64),
    pub r: f64,
    pub n: f64,
    /// `max a xi'`, bounded by 2 by construction.
    pub a_xi_max: f64,
}

/// Interpolated subsolution `f_delta = xi f_lower + (1 - xi) f_upper`.
pub fn build_interpolated_subsolution(
    c: &Corrector<'_>,
    lower: &CorrectorSolution,
    upper: &CorrectorSolution,
    delta: f64,
    y0: f64,
) -> Result<Subsolution> {
    let env = c.env;
    let lambda = lower.lambda;
    let c_r = c.lipschitz_bound(lambda);
    let c0 = 2.0 * (c_r + 2.0);
    let gap = gaps(lower, upper)?;
    let n_nodes = gap.len();
    let (l1, l2) = find_near_touch_interval(env, lower, upper, delta, y0, c_r)?;
    let y_act = env.resistance_integral(l1, l2)?;
    let k_of = |x: f64| ((x - lower.x0) / lower.dx).round().clamp(0.0, (n_nodes - 1) as f64) as usize;
    // Largest r with gap < 2 delta on [L1 - r, L2 + r].
    let (k1, k2) = (k_of(l1), k_of(l2));
    let (mut a, mut b) = (k1, k2);
    while a > 0 && gap[a - 1] < 2.0 * delta && (k1 - a) < (k2 - k1).max(1) {
        a -= 1;
    }
    while b + 1 < n_nodes && gap[b + 1] < 2.0 * delta && (b - k2) < (k2 - k1).max(1) {
        b += 1;
    }
    let r = ((k1 - a).min(b - k2)) as f64 * lower.dx;
    if !(r > 0.0) {
        return Err(Error::Resolution("no room around the near-touch interval at this grid spacing".into()));
    }
    let lo_k = k_of(l1 - 2.0 * r);
    let hi_k = k_of(l2 + 2.0 * r);
    let a_low = (lo_k..=hi_k).map(|k| env.a[lower.first + k]).fold(f64::INFINITY, f64::min);
    let n = (2.0 / r).max(4.0 * env.kappa / a_low).ceil();
    let eps = 1.0 / n;
    if eps < 2.0 * lower.dx {
        return Err(Error::Resolution(format!("mollifier half-width {eps} is below two grid cells ({})", 2.0 * lower.dx)));
    }
    // xi = (1_(L1,L2)/(y a)) integrated, then convolved with a triangular kernel.
    let raw = |x: f64| -> f64 {
        if x <= l1 {
            0.0
        } else if x >= l2 {
            1.0
        } else {
            env.resistance_integral(l1, x).unwrap_or(0.0) / y_act
        }
    };
    let zeta = |x: f64| -> f64 {
        if x <= l1 || x >= l2 {
            0.0
        } else {
            1.0 / (y_act * env.a_at(x))
        }
    };
    let kernel = |s: f64| (1.0 - s.abs() / eps).max(0.0) / eps;
    let quad = |h: &dyn Fn(f64) -> f64, x: f64| -> f64 {
        // Composite Gauss-Legendre on [-eps, eps] split at the kernel apex and
        // at the discontinuities of zeta.
        let mut cuts = vec![-eps, 0.0, eps];
        for p in [x - l1, x - l2] {
            if p > -eps && p < eps {
                cuts.push(p);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut s = 0.0;
        for w in cuts.windows(2) {
            let m = 16;
            let hstep = (w[1] - w[0]) / m as f64;
            for i in 0..m {
                let c0 = w[0] + (i as f64 + 0.5) * hstep;
                for (z, wt) in GL3 {
                    let t = c0 + 0.5 * hstep * z;
                    s += 0.5 * hstep * wt * kernel(t) * h(x - t);
                }
            }
        }
        s
    };
    let mut xi = vec![0.0; n_nodes];
    let mut dxi = vec![0.0; n_nodes];
    for k in 0..n_nodes {
        let x = lower.x(k);
        if x <= l1 - eps {
            continue;
        }
        if x >= l2 + eps {
            xi[k] = 1.0;
            continue;
        }
        xi[k] = quad(&raw, x);
        dxi[k] = quad(&zeta, x);
    }
    let g = c.g;
    let beta = c.beta;
    let mut f_delta = vec![0.0; n_nodes];
    let mut margin = f64::INFINITY;
    let mut a_xi_max: f64 = 0.0;
    for k in 0..n_nodes {
        let j = lower.first + k;
        let (fl, fu) = (lower.f[k], upper.f[k]);
        let fd = xi[k] * fl + (1.0 - xi[k]) * fu;
        f_delta[k] = fd;
        let a = env.a[j];
        a_xi_max = a_xi_max.max(a * dxi[k]);
        // a f_delta' from the product rule with a f' = lambda - beta V - G(f).
        let a_fd_prime = a * dxi[k] * (fl - fu) + lambda - beta * env.v[j] - (xi[k] * g.eval(fl) + (1.0 - xi[k]) * g.eval(fu));
        let m = a_fd_prime + g.eval(fd) + beta * env.v[j] - (lambda - c0 * delta);
        margin = margin.min(m);
    }
    let mut margin_fd = f64::INFINITY;
    for k in 2..n_nodes.saturating_sub(2) {
        let j = lower.first + k;
        let d = (8.0 * (f_delta[k + 1] - f_delta[k - 1]) - (f_delta[k + 2] - f_delta[k - 2])) / (12.0 * lower.dx);
        margin_fd = margin_fd.min(env.a[j] * d + g.eval(f_delta[k]) + beta * env.v[j] - (lambda - c0 * delta));
    }
    Ok(Subsolution { f_delta, xi, c0, c_r, margin, margin_fd, interval: (l1, l2), r, n, a_xi_max })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorCertificate {
    pub theta: f64,
    pub lambda: f64,
    #[serde(skip)]
    pub f_lower: Option<CorrectorSolution>,
    #[serde(skip)]
    pub f_upper: Option<CorrectorSolution>,
    pub gap_inf: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub residual_lower: f64,
    pub residual_upper: f64,
    pub mean_err: f64,
    pub interval_lower: LevelInterval,
    pub interval_upper: LevelInterval,
}

impl CorrectorCertificate {
    pub fn new(theta: f64, lambda: f64, lower: CorrectorSolution, upper: CorrectorSolution) -> Self {
        let gap_inf = upper.f.iter().zip(&lower.f).map(|(u, l)| u - l).fold(f64::INFINITY, f64::min);
        CorrectorCertificate {
            theta,
            lambda,
            gap_inf: gap_inf.max(0.0),
            mean_lower: lower.mean,
            mean_upper: upper.mean,
            residual_lower: lower.residual_sup,
            residual_upper: upper.residual_sup,
            mean_err: lower.mean_err.max(upper.mean_err),
            interval_lower: lower.interval,
            interval_upper: upper.interval,
            f_lower: Some(lower),
            f_upper: Some(upper),
        }
    }

    /// Drop the stored solution arrays.
    pub fn compact(mut self) -> Self {
        self.f_lower = None;
        self.f_upper = None;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub residual_ok: bool,
    pub residual_slack: f64,
    pub gap_ok: bool,
    pub gap_slack: f64,
    pub mean_ok: bool,
    pub mean_slack: f64,
    pub pass: bool,
}

/// Checks (i) residuals, (ii) vanishing gap, (iii) mean ordering around theta.
/// Residuals are recomputed at the certificate's level when a corrector is given.
pub fn verify_certificate(cert: &CorrectorCertificate, tol: &Tolerances, c: Option<&Corrector<'_>>) -> CertificateReport {
    let (mut rl, mut ru) = (cert.residual_lower, cert.residual_upper);
    if let (Some(c), Some(l), Some(u)) = (c, cert.f_lower.as_ref(), cert.f_upper.as_ref()) {
        rl = c.residual(l, cert.lambda);
        ru = c.residual(u, cert.lambda);
    }
    let tol_ode = tol.ode(cert.lambda);
    let residual_slack = tol_ode - rl.max(ru);
    let gap_slack = tol.tol_gap - cert.gap_inf;
    let mean_slack = (cert.theta - (cert.mean_lower - tol.tol_mean)).min(cert.mean_upper + tol.tol_mean - cert.theta);
    let residual_ok = residual_slack >= 0.0;
    let gap_ok = gap_slack >= 0.0;
    let mean_ok = mean_slack >= 0.0;
    CertificateReport { residual_ok, residual_slack, gap_ok, gap_slack, mean_ok, mean_slack, pass: residual_ok && gap_ok && mean_ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_media::{sample_environment, MediumSpec};
    use approx::assert_abs_diff_eq;

    fn flat_env(v0: f64) -> SampledEnvironment {
        sample_environment(&MediumSpec::constant(1.0, v0), 30.0, 0.01, 0).unwrap()
    }

    #[test]
    fn equilibrium_stays_put() {
        let env = flat_env(0.0);
        let g = Nonlinearity::parabola();
        let c = Corrector::new(&env, &g, 0.0, Window { half_width: 10.0, burn_in: 5.0 }).unwrap();
        let path = c.integrate_ode(4.0, 0.0, 2.0, 5.0, None).unwrap();
        assert!(path.iter().all(|&(_, f)| (f - 2.0).abs() < 1e-12));
    }

    #[test]
    fn logistic_relaxation() {
        let env = flat_env(0.0);
        let g = Nonlinearity::parabola();
        let c = Corrector::new(&env, &g, 0.0, Window { half_width: 10.0, burn_in: 5.0 }).unwrap();
        let path = c.integrate_ode(4.0, 0.0, 0.0, 3.0, None).unwrap();
        for &(x, f) in &path {
            assert_abs_diff_eq!(f, 2.0 * (2.0 * x).tanh(), epsilon = 1e-7);
        }
        // 2 - 2 tanh(6) = 2.46e-5 at distance 3 from the start.
        let deficit = 2.0 - path.last().unwrap().1;
        assert_abs_diff_eq!(deficit, 2.0 - 2.0 * 6f64.tanh(), epsilon = 1e-8);
        let back = c.integrate_ode(4.0, 0.0, 0.0, -3.0, None).unwrap();
        assert_abs_diff_eq!(back.last().unwrap().1, -2.0 * (6.0f64).tanh(), epsilon = 1e-7);
    }

    #[test]
    fn guard_triggers_escape() {
        let env = flat_env(0.0);
        let g = Nonlinearity::parabola();
        let c = Corrector::new(&env, &g, 0.0, Window { half_width: 10.0, burn_in: 5.0 }).unwrap();
        let guard = c.confinement_radius(4.0) + 1.0;
        let e = c.integrate_ode(4.0, 0.0, guard + 1.0, 1.0, Some(guard)).unwrap_err();
        assert!(e.to_string().contains("escape"));
    }

    #[test]
    fn means_of_simple_profiles() {
        assert_abs_diff_eq!(ergodic_mean(&[0.7; 101]).0, 0.7, epsilon = 1e-14);
        let f: Vec<f64> = (-500..=500).map(|k| 2.0 * (2.0 * k as f64 * 0.01).tanh()).collect();
        assert!(ergodic_mean(&f).0.abs() < 1e-9);
    }

    #[test]
    fn control_medium_pair_is_constant() {
        // V = 0: on [0, 1] at lambda = beta = 1 the flow f' = 1 - f^2 drives every
        // confined solution to the equilibrium 1.
        let env = flat_env(0.0);
        let g = Nonlinearity::parabola();
        let c = Corrector::new(&env, &g, 1.0, Window { half_width: 10.0, burn_in: 10.0 }).unwrap();
        let iv = g.level_intervals(1.0, 1.0)[1];
        let (lo, hi) = c.extremal_pair(1.0, &iv).unwrap();
        assert!(lo.f.iter().all(|&f| (f - 1.0).abs() < 1e-6));
        assert!(hi.f.iter().all(|&f| (f - 1.0).abs() < 1e-6));
        let cert = CorrectorCertificate::new(1.0, 1.0, lo, hi);
        let rep = verify_certificate(&cert, &Tolerances::default(), Some(&c));
        assert!(rep.pass, "{rep:?}");
        let mut wrong = cert.clone();
        wrong.lambda = 1.1;
        let rep = verify_certificate(&wrong, &Tolerances::default(), Some(&c));
        assert!(!rep.residual_ok);
        assert!((rep.residual_slack + 0.1 - 1.1e-6).abs() < 1e-3);
    }
}
