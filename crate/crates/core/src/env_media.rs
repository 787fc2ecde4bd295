//! Sampled random environments `(a, V)` on a uniform grid.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LIPSCHITZ_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Generator {
    /// Plateaus at random levels with exponential lengths, joined by
    /// smoothstep ramps of width `1.5 * smoothing_radius`.
    PlateauRenewal { mean_plateau_len: f64, level_low: f64, level_high: f64, smoothing_radius: f64 },
    /// Deterministic periodic media; these violate the hill/valley condition
    /// and serve as controls. Profiles: `cosine` (a = 1) and `cosine_diffusive`.
    Periodic { period: f64, profile_id: String },
    Constant { a0: f64, v0: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub generator: Generator,
    pub a_min: f64,
    pub kappa: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MediumSpec {
    pub fn constant(a0: f64, v0: f64) -> Self {
        MediumSpec { generator: Generator::Constant { a0, v0 }, a_min: a0.min(1.0), kappa: 1.0, seed: 0 }
    }

    pub fn plateau(mean_plateau_len: f64, smoothing_radius: f64, a_min: f64, seed: u64) -> Self {
        MediumSpec {
            generator: Generator::PlateauRenewal { mean_plateau_len, level_low: 0.0, level_high: 1.0, smoothing_radius },
            a_min,
            kappa: 1.0 / smoothing_radius,
            seed,
        }
    }

    pub fn periodic(period: f64, profile_id: &str) -> Self {
        MediumSpec {
            generator: Generator::Periodic { period, profile_id: profile_id.to_string() },
            a_min: 1.0,
            kappa: std::f64::consts::PI / period,
            seed: 0,
        }
    }

    /// Media outside the hill/valley hypothesis.
    pub fn is_control(&self) -> bool {
        !matches!(self.generator, Generator::PlateauRenewal { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_min > 0.0 && self.a_min <= 1.0) {
            return Err(Error::Config(format!("a_min must lie in (0, 1], got {}", self.a_min)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config("kappa must be positive".into()));
        }
        match &self.generator {
            Generator::PlateauRenewal { mean_plateau_len, level_low, level_high, smoothing_radius } => {
                if !(*smoothing_radius > 0.0 && *mean_plateau_len > 0.0) {
                    return Err(Error::Config("plateau length and smoothing radius must be positive".into()));
                }
                if level_low.abs() > 1e-12 || (level_high - 1.0).abs() > 1e-12 {
                    return Err(Error::Config("plateau levels must reach exactly 0 and 1".into()));
                }
                if self.kappa * smoothing_radius < 1.0 - 1e-12 {
                    return Err(Error::Config(format!(
                        "kappa={} is below the ramp slope 1/smoothing_radius={}",
                        self.kappa,
                        1.0 / smoothing_radius
                    )));
                }
            }
            Generator::Periodic { period, profile_id } => {
                if !(*period > 0.0) {
                    return Err(Error::Config("period must be positive".into()));
                }
                if profile_id != "cosine" && profile_id != "cosine_diffusive" {
                    return Err(Error::Config(format!("unknown periodic profile {profile_id}")));
                }
                if std::f64::consts::PI / period > self.kappa * (1.0 + 1e-12) {
                    return Err(Error::Config("periodic profile is steeper than kappa".into()));
                }
            }
            Generator::Constant { a0, v0 } => {
                if !(*a0 >= self.a_min && *a0 <= 1.0) || !(0.0..=1.0).contains(v0) {
                    return Err(Error::Config("constant medium out of range".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledEnvironment {
    pub dx: f64,
    pub half_width: f64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub kappa: f64,
    pub seed: u64,
    /// Trapezoid prefix sums of `1/a` from the left edge.
    cum_res: Vec<f64>,
}

/// One side of a renewal path: `ds` are ascending distances from the origin,
/// the current plateau at `level` ends at distance `first_end`.
#[allow(clippy::too_many_arguments)]
fn renewal_side(rng: &mut ChaCha8Rng, ds: &[f64], first_end: f64, mut level: f64, mean_len: f64, ramp: f64, lo: f64, hi: f64) -> Vec<f64> {
    let exp = Exp::new(1.0 / mean_len).expect("positive rate");
    let mut out = Vec::with_capacity(ds.len());
    let mut plateau_end = first_end;
    let mut j = 0;
    while j < ds.len() {
        let next = draw_level(rng, lo, hi);
        let ramp_end = plateau_end + ramp;
        while j < ds.len() && ds[j] < ramp_end {
            let d = ds[j];
            let val = if d <= plateau_end {
                level
            } else {
                let s = ((d - plateau_end) / ramp).clamp(0.0, 1.0);
                level + (next - level) * s * s * (3.0 - 2.0 * s)
            };
            out.push(val);
            j += 1;
        }
        level = next;
        plateau_end = ramp_end + exp.sample(rng);
    }
    out
}

fn draw_level(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.gen();
    if u < 0.25 {
        lo
    } else if u < 0.5 {
        hi
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}

/// Plateau/ramp renewal path on the symmetric grid `xs`, levels in `[lo, hi]`.
/// The plateau covering the origin is drawn first and each side then grows
/// from its own stream, so a wider grid extends the same realization.
fn renewal_path(seed: u64, stream: u64, xs: &[f64], mean_len: f64, ramp: f64, lo: f64, hi: f64) -> Vec<f64> {
    let exp = Exp::new(1.0 / mean_len).expect("positive rate");
    let mut right = ChaCha8Rng::seed_from_u64(seed);
    right.set_stream(2 * stream);
    let mut left = ChaCha8Rng::seed_from_u64(seed);
    left.set_stream(2 * stream + 1);
    let level = draw_level(&mut right, lo, hi);
    let (e_right, e_left) = (exp.sample(&mut right), exp.sample(&mut left));
    let m = xs.len() / 2;
    let ds_right: Vec<f64> = xs[m..].to_vec();
    let ds_left: Vec<f64> = xs[..m].iter().rev().map(|x| -x).collect();
    let r = renewal_side(&mut right, &ds_right, e_right, level, mean_len, ramp, lo, hi);
    let l = renewal_side(&mut left, &ds_left, e_left, level, mean_len, ramp, lo, hi);
    l.into_iter().rev().chain(r).collect()
}

pub fn sample_environment(spec: &MediumSpec, half_width: f64, dx: f64, seed: u64) -> Result<SampledEnvironment> {
    spec.validate()?;
    if !(dx > 0.0) || !(half_width >= 10.0 * dx) {
        return Err(Error::Config(format!("need dx > 0 and half_width >= 10 dx, got dx={dx}, half_width={half_width}")));
    }
    let m = (half_width / dx).round() as i64;
    let xs: Vec<f64> = (-m..=m).map(|j| j as f64 * dx).collect();
    let n = xs.len();
    let (a, v) = match &spec.generator {
        Generator::Constant { a0, v0 } => (vec![*a0; n], vec![*v0; n]),
        Generator::Periodic { period, profile_id } => {
            let w = 2.0 * std::f64::consts::PI / period;
            let v: Vec<f64> = xs.iter().map(|&x| 0.5 * (1.0 - (w * x).cos())).collect();
            let a = if profile_id == "cosine" {
                vec![1.0; n]
            } else {
                let s_lo = spec.a_min.sqrt();
                xs.iter()
                    .map(|&x| {
                        let s = 0.5 * (1.0 + s_lo) + 0.5 * (1.0 - s_lo) * (w * x + 1.0).cos();
                        s * s
                    })
                    .collect()
            };
            (a, v)
        }
        Generator::PlateauRenewal { mean_plateau_len, level_low, level_high, smoothing_radius } => {
            if *smoothing_radius < 2.0 * dx {
                return Err(Error::Resolution(format!("smoothing_radius {smoothing_radius} is below 2 dx = {}", 2.0 * dx)));
            }
            let ramp = 1.5 * smoothing_radius;
            let v = renewal_path(seed, 0, &xs, *mean_plateau_len, ramp, *level_low, *level_high);
            let a = if spec.a_min < 1.0 {
                renewal_path(seed, 1, &xs, *mean_plateau_len, ramp, spec.a_min.sqrt(), 1.0)
                    .into_iter()
                    .map(|s| (s * s).clamp(spec.a_min, 1.0))
                    .collect()
            } else {
                vec![1.0; n]
            };
            (a, v)
        }
    };
    let env = SampledEnvironment::from_parts(dx, xs, a, v, spec.kappa, seed);
    env.check_invariants(spec.a_min)?;
    Ok(env)
}

impl SampledEnvironment {
    fn from_parts(dx: f64, x: Vec<f64>, a: Vec<f64>, v: Vec<f64>, kappa: f64, seed: u64) -> Self {
        let mut cum_res = Vec::with_capacity(a.len());
        cum_res.push(0.0);
        for w in a.windows(2) {
            let last = *cum_res.last().unwrap();
            cum_res.push(last + 0.5 * dx * (1.0 / w[0] + 1.0 / w[1]));
        }
        let half_width = -x[0];
        SampledEnvironment { dx, half_width, x, a, v, kappa, seed, cum_res }
    }

    /// Environment from explicit node values on `x_j = (j - m) dx`.
    pub fn from_values(dx: f64, a: Vec<f64>, v: Vec<f64>, kappa: f64, seed: u64) -> Result<Self> {
        if a.len() != v.len() || a.len().is_multiple_of(2) || a.len() < 21 {
            return Err(Error::Config("need an odd number (>= 21) of equally many a and V values".into()));
        }
        let m = (a.len() / 2) as i64;
        let x = (-m..=m).map(|j| j as f64 * dx).collect();
        let a_min = a.iter().copied().fold(1.0, f64::min);
        let env = Self::from_parts(dx, x, a, v, kappa, seed);
        env.check_invariants(a_min)?;
        Ok(env)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
    pub fn a_max(&self) -> f64 {
        self.a.iter().copied().fold(0.0, f64::max)
    }
    pub fn a_min(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn a_mean(&self) -> f64 {
        self.a.iter().sum::<f64>() / self.a.len() as f64
    }

    pub fn check_invariants(&self, a_min: f64) -> Result<()> {
        let tol = self.kappa * self.dx * (1.0 + LIPSCHITZ_SLACK);
        for j in 0..self.len() {
            let (a, v) = (self.a[j], self.v[j]);
            if !(a >= a_min * (1.0 - 1e-12) && a <= 1.0) || !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("environment value out of range at node {j}: a={a}, V={v}")));
            }
            if j + 1 < self.len() {
                let da = (self.a[j + 1].sqrt() - a.sqrt()).abs();
                let dv = (self.v[j + 1] - v).abs();
                if da > tol || dv > tol {
                    return Err(Error::Config(format!("Lipschitz bound exceeded at node {j}: dsqrt(a)={da}, dV={dv}, bound={tol}")));
                }
            }
        }
        Ok(())
    }

    /// Node index `j` with `x_j <= x < x_{j+1}` and the fraction in the cell.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.x[0]) / self.dx;
        let j = (s.floor().max(0.0) as usize).min(self.len() - 2);
        (j, s - j as f64)
    }

    #[inline]
    pub fn a_at(&self, x: f64) -> f64 {
        let (j, t) = self.locate(x);
        self.a[j] + t * (self.a[j + 1] - self.a[j])
    }
    #[inline]
    pub fn v_at(&self, x: f64) -> f64 {
        let (j, t) = self.locate(x);
        self.v[j] + t * (self.v[j + 1] - self.v[j])
    }

    /// Cumulative resistance from the left edge, linear `1/a` inside cells.
    fn cum_resistance(&self, x: f64) -> f64 {
        let (j, t) = self.locate(x);
        let (r0, r1) = (1.0 / self.a[j], 1.0 / self.a[j + 1]);
        self.cum_res[j] + self.dx * t * (r0 + 0.5 * t * (r1 - r0))
    }

    fn in_window(&self, x: f64) -> bool {
        x >= self.x[0] - 1e-12 && x <= self.x[self.len() - 1] + 1e-12
    }

    pub fn resistance_integral(&self, l1: f64, l2: f64) -> Result<f64> {
        if !self.in_window(l1) || !self.in_window(l2) || !(l1 <= l2) {
            return Err(Error::Domain(format!("resistance bounds ({l1}, {l2}) outside [-{0}, {0}] or unordered", self.half_width)));
        }
        Ok(self.cum_resistance(l2) - self.cum_resistance(l1))
    }

    /// Smallest `x` with cumulative resistance `target`, by bisection.
    fn inverse_resistance(&self, target: f64) -> f64 {
        let (mut lo, mut hi) = (self.x[0], self.x[self.len() - 1]);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cum_resistance(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// x-interval around `center` with resistance `y`, clipped to `[lo, hi]`;
    /// `None` when `[lo, hi]` is too short.
    pub fn resistance_window(&self, center: f64, y: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let (r_lo, r_hi) = (self.cum_resistance(lo), self.cum_resistance(hi));
        if r_hi - r_lo < y * (1.0 - 1e-3) {
            return None;
        }
        let r_c = self.cum_resistance(center.clamp(lo, hi));
        let r1 = (r_c - 0.5 * y).clamp(r_lo, (r_hi - y).max(r_lo));
        let r2 = (r1 + y).min(r_hi);
        Some((self.inverse_resistance(r1).max(lo), self.inverse_resistance(r2).min(hi)))
    }

    /// Maximal components of `{inside(V)}` with linear-interpolation ends.
    pub fn components(&self, level: f64, above: bool) -> Vec<(f64, f64)> {
        let inside = |v: f64| if above { v >= level } else { v <= level };
        let cross = |j: usize| {
            let (v0, v1) = (self.v[j], self.v[j + 1]);
            self.x[j] + self.dx * ((level - v0) / (v1 - v0)).clamp(0.0, 1.0)
        };
        let mut out = Vec::new();
        let mut start: Option<f64> = None;
        for j in 0..self.len() {
            let inn = inside(self.v[j]);
            match (start, inn) {
                (None, true) => start = Some(if j == 0 { self.x[0] } else { cross(j - 1) }),
                (Some(s), false) => {
                    out.push((s, cross(j - 1)));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.x[self.len() - 1]));
        }
        out
    }

    fn find_component(&self, h: f64, y: f64, above: bool) -> Option<(f64, f64)> {
        if !(h > 0.0 && h < 1.0 && y > 0.0) {
            return None;
        }
        let dist = |c: &(f64, f64)| if c.0 <= 0.0 && c.1 >= 0.0 { 0.0 } else { c.0.abs().min(c.1.abs()) };
        let best = self
            .components(h, above)
            .into_iter()
            .filter(|c| self.cum_resistance(c.1) - self.cum_resistance(c.0) >= y)
            .min_by(|p, q| dist(p).total_cmp(&dist(q)))?;
        self.resistance_window(0.0, y, best.0, best.1)
    }

    /// Interval of resistance `y` on which `V >= h`, nearest to the origin.
    pub fn find_hill(&self, h: f64, y: f64) -> Option<(f64, f64)> {
        self.find_component(h, y, true)
    }

    /// Interval of resistance `y` on which `V <= h`, nearest to the origin.
    pub fn find_valley(&self, h: f64, y: f64) -> Option<(f64, f64)> {
        self.find_component(h, y, false)
    }

    /// Counts of maximal intervals with `V >= hi` and `V <= lo`.
    pub fn census(&self, lo: f64, hi: f64) -> (usize, usize) {
        (self.components(hi, true).len(), self.components(lo, false).len())
    }

    /// Every `k`-th node, for coarser solvers.
    pub fn subsample(&self, k: usize) -> Result<Self> {
        if k == 0 || !(self.len() / 2).is_multiple_of(k) {
            return Err(Error::Config(format!("subsampling factor {k} does not divide the half grid")));
        }
        let m = self.len() / 2;
        let idx: Vec<usize> = (0..=2 * m / k).map(|i| i * k).collect();
        Ok(Self::from_parts(
            self.dx * k as f64,
            idx.iter().map(|&i| self.x[i]).collect(),
            idx.iter().map(|&i| self.a[i]).collect(),
            idx.iter().map(|&i| self.v[i]).collect(),
            self.kappa,
            self.seed,
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 40);
        let _ = writeln!(s, "# seed={} dx={} kappa={}", self.seed, self.dx, self.kappa);
        s.push_str("x,a,V\n");
        for j in 0..self.len() {
            let _ = writeln!(s, "{},{},{}", self.x[j], self.a[j], self.v[j]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty environment file".into()))?;
        let mut seed = 0;
        let mut dx = f64::NAN;
        let mut kappa = f64::NAN;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                let bad = || Error::Config(format!("bad header field {tok}"));
                match k {
                    "seed" => seed = v.parse().map_err(|_| bad())?,
                    "dx" => dx = v.parse().map_err(|_| bad())?,
                    "kappa" => kappa = v.parse().map_err(|_| bad())?,
                    _ => {}
                }
            }
        }
        let (mut a, mut v) = (Vec::new(), Vec::new());
        for line in lines.skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                continue;
            }
            let parse = |c: &str| c.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number {c}")));
            a.push(parse(cols[1])?);
            v.push(parse(cols[2])?);
        }
        Self::from_values(dx, a, v, kappa, seed)
    }
}
