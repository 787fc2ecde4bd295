//! Piecewise nonlinearities `G(p)`: a core of strictly monotone cubic Hermite
//! segments between breakpoints, closed by power-law tails
//! `c |p - q|^gamma + s |p - p_end| + d` on both sides.
//!
//! Every local extremum sits on a breakpoint, so extrema, level crossings and
//! the splitting operations used by the gluing recursion are exact up to
//! bisection accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BISECT_ITERS: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Knot {
    pub p: f64,
    pub g: f64,
    /// One-sided derivative from the left.
    pub dl: f64,
    /// One-sided derivative from the right.
    pub dr: f64,
}

/// Power tail. On the left it reads `c (center - p)^gamma + slope (p0 - p) + offset`
/// for `p <= p0`, on the right `c (p - center)^gamma + slope (p - pk) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub c: f64,
    pub center: f64,
    pub slope: f64,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremum {
    pub p: f64,
    pub g: f64,
    pub kind: ExtremumKind,
    pub knot: usize,
}

/// A level interval `[p1, p2]`: the endpoint values are `{lambda - beta, lambda}`
/// and `lambda - beta < G < lambda` strictly inside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelInterval {
    pub p1: f64,
    pub p2: f64,
    /// True when `G(p1) = lambda - beta`; the interval is then forward invariant
    /// for the corrector flow, otherwise backward invariant.
    pub low_left: bool,
}

impl LevelInterval {
    pub fn width(&self) -> f64 {
        self.p2 - self.p1
    }
    pub fn contains(&self, p: f64, tol: f64) -> bool {
        p >= self.p1 - tol && p <= self.p2 + tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub p: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "dG", default, skip_serializing_if = "Option::is_none")]
    pub dg: Option<Slope>,
}

/// Prescribed derivative at a breakpoint; a pair gives the left and right
/// one-sided slopes of a corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Slope {
    Both(f64),
    Sides([f64; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    pub c_minus: f64,
    pub c_plus: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_plus: Option<f64>,
    /// Extra linear growth beyond the end breakpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_plus: Option<f64>,
}

/// Serialized form of a nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    pub breakpoints: Vec<Breakpoint>,
    pub tails: TailSpec,
    /// One-sided slopes at interior extrema as a fraction of the adjacent
    /// secants; 0 gives a C^1 function.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub extremum_kink: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    gamma: f64,
    knots: Vec<Knot>,
    left: Tail,
    right: Tail,
    alpha0: f64,
    alpha1: f64,
}

/// Extrema list with the aggregate levels used by the gluing recursion.
/// Indices are positions in `maxima` / `minima` (global minimum excluded).
#[derive(Clone, Debug)]
pub struct ExtremaProfile {
    pub p_min: f64,
    pub m0: f64,
    pub extrema: Vec<Extremum>,
    pub maxima: Vec<Extremum>,
    pub minima: Vec<Extremum>,
    /// `(M, i)`, largest local maximum.
    pub max: Option<(f64, usize)>,
    /// `(m, j)`, smallest local minimum other than the global one.
    pub min: Option<(f64, usize)>,
    /// `(min{m_i..m_N}, k)`.
    pub tail_min: Option<(f64, usize)>,
}

impl ExtremaProfile {
    pub fn n(&self) -> usize {
        self.maxima.len()
    }
}

/// Output of the small-beta split.
#[derive(Clone, Debug)]
pub enum SmallBetaSplit {
    /// `beta > M - min{m_i..m_N}`: flat level interval `[max{G = M - beta}, p_{2i-1}]`.
    CaseI {
        peak: f64,
        level_max: f64,
        flat: LevelInterval,
        left: Nonlinearity,
        right: Nonlinearity,
        right_min: (f64, f64),
    },
    /// `beta <= M - min{m_i..m_N}`: two level intervals meeting at `p_{2i-1}`.
    CaseII {
        peak: f64,
        level_max: f64,
        flat_left: LevelInterval,
        flat_right: LevelInterval,
        left: Nonlinearity,
        right: Nonlinearity,
        right_min: (f64, f64),
    },
}

fn fritsch_carlson_ok(a: f64, b: f64) -> bool {
    if a < -1e-12 || b < -1e-12 {
        return false;
    }
    let (a, b) = (a.max(0.0), b.max(0.0));
    if a + b - 2.0 <= 0.0 || 2.0 * a + b - 3.0 <= 0.0 || a + 2.0 * b - 3.0 <= 0.0 {
        return true;
    }
    a - (2.0 * a + b - 3.0).powi(2) / (3.0 * (a + b - 2.0)) >= -1e-12
}

impl Nonlinearity {
    pub fn from_spec(spec: &NonlinearitySpec) -> Result<Self> {
        let gamma = spec.gamma;
        if !(gamma > 1.0) {
            return Err(Error::Class(format!("gamma must exceed 1, got {gamma}")));
        }
        let bp = &spec.breakpoints;
        if bp.is_empty() {
            return Err(Error::Class("no breakpoints".into()));
        }
        for w in bp.windows(2) {
            if !(w[1].p > w[0].p) {
                return Err(Error::Class("breakpoints must be strictly increasing in p".into()));
            }
            if w[1].g == w[0].g {
                return Err(Error::Class(format!(
                    "flat segment between p={} and p={}",
                    w[0].p, w[1].p
                )));
            }
        }
        if !(spec.tails.c_minus > 0.0 && spec.tails.c_plus > 0.0) {
            return Err(Error::Class("tail coefficients must be positive".into()));
        }
        let kn = bp.len();
        let secants: Vec<f64> = bp.windows(2).map(|w| (w[1].g - w[0].g) / (w[1].p - w[0].p)).collect();
        // Monotonicity signs including the tails.
        let mut signs = Vec::with_capacity(kn + 1);
        signs.push(-1.0);
        signs.extend(secants.iter().map(|s| s.signum()));
        signs.push(1.0);
        let is_ext = |k: usize| signs[k] != signs[k + 1];

        let p0 = bp[0].p;
        let pk = bp[kn - 1].p;
        let qm = spec.tails.center_minus.unwrap_or(if is_ext(0) || p0 >= 0.0 { p0 } else { 0.0 });
        let qp = spec.tails.center_plus.unwrap_or(if is_ext(kn - 1) || pk <= 0.0 { pk } else { 0.0 });
        if qm < p0 || qp > pk {
            return Err(Error::Class("tail centers must lie on the core side of the end breakpoints".into()));
        }
        let left = Tail {
            c: spec.tails.c_minus,
            center: qm,
            slope: spec.tails.slope_minus.unwrap_or(0.0),
            offset: bp[0].g - spec.tails.c_minus * (qm - p0).powf(gamma),
        };
        let right = Tail {
            c: spec.tails.c_plus,
            center: qp,
            slope: spec.tails.slope_plus.unwrap_or(0.0),
            offset: bp[kn - 1].g - spec.tails.c_plus * (pk - qp).powf(gamma),
        };
        let dtl = -left.c * gamma * (qm - p0).powf(gamma - 1.0) - left.slope;
        let dtr = right.c * gamma * (pk - qp).powf(gamma - 1.0) + right.slope;
        let kink = spec.extremum_kink;
        let mut knots = Vec::with_capacity(kn);
        for k in 0..kn {
            let (mut dl, mut dr);
            if let Some(d) = bp[k].dg {
                (dl, dr) = match d {
                    Slope::Both(d) => (d, d),
                    Slope::Sides([l, r]) => (l, r),
                };
            } else if is_ext(k) && k > 0 && k + 1 < kn {
                dl = kink * secants[k - 1];
                dr = kink * secants[k];
            } else if k > 0 && k + 1 < kn {
                let (h0, h1) = (bp[k].p - bp[k - 1].p, bp[k + 1].p - bp[k].p);
                let (s0, s1) = (secants[k - 1], secants[k]);
                let mut d = (h1 * s0 + h0 * s1) / (h0 + h1);
                if d.signum() != s0.signum() {
                    d = 0.0;
                }
                let cap = 3.0 * s0.abs().min(s1.abs());
                if d.abs() > cap {
                    d = cap * d.signum();
                }
                dl = d;
                dr = d;
            } else {
                dl = f64::NAN;
                dr = f64::NAN;
            }
            if k == 0 {
                dl = dtl;
                if bp[k].dg.is_none() {
                    dr = if is_ext(0) { kink.max(0.0) * secants.first().copied().unwrap_or(0.0) } else { dtl };
                    if kn == 1 {
                        dr = dtr;
                    }
                }
            }
            if k == kn - 1 && kn > 1 {
                dr = dtr;
                if bp[k].dg.is_none() {
                    dl = if is_ext(kn - 1) { kink * secants[kn - 2] } else { dtr };
                }
            }
            knots.push(Knot { p: bp[k].p, g: bp[k].g, dl, dr });
        }
        let mut g = Self::from_parts(gamma, knots, left, right)?;
        if let Some(a0) = spec.alpha0 {
            g.alpha0 = a0;
        }
        if let Some(a1) = spec.alpha1 {
            g.alpha1 = a1;
        }
        g.check_growth()?;
        Ok(g)
    }

    /// Assemble from explicit knots and tails; validates monotone segments and
    /// derives growth constants.
    pub fn from_parts(gamma: f64, knots: Vec<Knot>, left: Tail, right: Tail) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Class("no knots".into()));
        }
        for (k, w) in knots.windows(2).enumerate() {
            let h = w[1].p - w[0].p;
            if !(h > 0.0) {
                return Err(Error::Class("knots must be strictly increasing".into()));
            }
            let s = (w[1].g - w[0].g) / h;
            if s == 0.0 {
                return Err(Error::Class(format!("flat segment {k}")));
            }
            if !fritsch_carlson_ok(w[0].dr / s, w[1].dl / s) {
                return Err(Error::Class(format!(
                    "segment [{}, {}] is not monotone with slopes ({}, {}) and secant {}",
                    w[0].p, w[1].p, w[0].dr, w[1].dl, s
                )));
            }
        }
        let p0 = knots[0].p;
        let pk = knots[knots.len() - 1].p;
        if left.center < p0 || right.center > pk || left.c <= 0.0 || right.c <= 0.0 || left.slope < 0.0 || right.slope < 0.0 {
            return Err(Error::Class("invalid tail".into()));
        }
        let mut g = Nonlinearity { gamma, knots, left, right, alpha0: 0.0, alpha1: 0.0 };
        let k0 = g.knots[0];
        let kk = g.knots[g.knots.len() - 1];
        if (g.tail_left(k0.p) - k0.g).abs() > 1e-9 * (1.0 + k0.g.abs()) || (g.tail_right(kk.p) - kk.g).abs() > 1e-9 * (1.0 + kk.g.abs()) {
            return Err(Error::Class("tails do not meet the core continuously".into()));
        }
        g.derive_growth_constants();
        Ok(g)
    }

    pub fn to_spec(&self) -> NonlinearitySpec {
        NonlinearitySpec {
            gamma: self.gamma,
            alpha0: Some(self.alpha0),
            alpha1: Some(self.alpha1),
            breakpoints: self
                .knots
                .iter()
                .map(|k| Breakpoint { p: k.p, g: k.g, dg: Some(if k.dl == k.dr { Slope::Both(k.dl) } else { Slope::Sides([k.dl, k.dr]) }) })
                .collect(),
            tails: TailSpec {
                c_minus: self.left.c,
                c_plus: self.right.c,
                center_minus: Some(self.left.center),
                center_plus: Some(self.right.center),
                slope_minus: Some(self.left.slope).filter(|s| *s != 0.0),
                slope_plus: Some(self.right.slope).filter(|s| *s != 0.0),
            },
            extremum_kink: 0.0,
        }
    }

    /// `c |p|^gamma` for symmetric pure powers, `c p^2` being the usual parabola.
    pub fn power(c: f64, gamma: f64, reach: f64) -> Result<Self> {
        let pts = [-reach, -0.5 * reach, 0.0, 0.5 * reach, reach];
        let bp = pts
            .iter()
            .map(|&p: &f64| Breakpoint { p, g: c * p.abs().powf(gamma), dg: Some(Slope::Both(c * gamma * p.signum() * p.abs().powf(gamma - 1.0))) })
            .collect();
        Self::from_spec(&NonlinearitySpec {
            gamma,
            alpha0: None,
            alpha1: None,
            breakpoints: bp,
            tails: TailSpec { c_minus: c, c_plus: c, center_minus: Some(0.0), center_plus: Some(0.0), slope_minus: None, slope_plus: None },
            extremum_kink: 0.0,
        })
    }

    /// The parabola `p^2`.
    pub fn parabola() -> Self {
        Self::power(1.0, 2.0, 2.0).expect("parabola is admissible")
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }
    pub fn tails(&self) -> (Tail, Tail) {
        (self.left, self.right)
    }
    pub fn p_first(&self) -> f64 {
        self.knots[0].p
    }
    pub fn p_last(&self) -> f64 {
        self.knots[self.knots.len() - 1].p
    }

    #[inline]
    fn pow_gamma(&self, x: f64) -> f64 {
        if self.gamma == 2.0 {
            x * x
        } else {
            x.powf(self.gamma)
        }
    }
    fn tail_left(&self, p: f64) -> f64 {
        let t = self.left;
        t.c * self.pow_gamma((t.center - p).max(0.0)) + t.slope * (self.p_first() - p) + t.offset
    }
    fn tail_right(&self, p: f64) -> f64 {
        let t = self.right;
        t.c * self.pow_gamma((p - t.center).max(0.0)) + t.slope * (p - self.p_last()) + t.offset
    }

    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        let kn = &self.knots;
        if p <= kn[0].p {
            return self.tail_left(p);
        }
        if p >= kn[kn.len() - 1].p {
            return self.tail_right(p);
        }
        let k = kn.partition_point(|k| k.p <= p) - 1;
        let (a, b) = (&kn[k], &kn[k + 1]);
        let h = b.p - a.p;
        let t = (p - a.p) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * a.g + (t3 - 2.0 * t2 + t) * h * a.dr + (3.0 * t2 - 2.0 * t3) * b.g + (t3 - t2) * h * b.dl
    }

    /// Derivative; at breakpoints the right derivative.
    pub fn slope(&self, p: f64) -> f64 {
        let kn = &self.knots;
        let g = self.gamma;
        if p < kn[0].p {
            let t = self.left;
            return -t.c * g * (t.center - p).max(0.0).powf(g - 1.0) - t.slope;
        }
        if p >= kn[kn.len() - 1].p {
            let t = self.right;
            return t.c * g * (p - t.center).max(0.0).powf(g - 1.0) + t.slope;
        }
        let k = kn.partition_point(|k| k.p <= p) - 1;
        let (qa, qb, qc) = self.segment_slope_quadratic(k);
        let t = (p - kn[k].p) / (kn[k + 1].p - kn[k].p);
        (qa * t + qb) * t + qc
    }

    /// Derivative on segment k as a quadratic `A t^2 + B t + C` in the local
    /// coordinate t.
    fn segment_slope_quadratic(&self, k: usize) -> (f64, f64, f64) {
        let (a, b) = (&self.knots[k], &self.knots[k + 1]);
        let s = (b.g - a.g) / (b.p - a.p);
        let (m0, m1) = (a.dr, b.dl);
        (-6.0 * s + 3.0 * m0 + 3.0 * m1, 6.0 * s - 4.0 * m0 - 2.0 * m1, m0)
    }

    /// Exact `sup |G'|` over `[lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best: f64 = 0.0;
        let kn = &self.knots;
        let p0 = kn[0].p;
        let pk = kn[kn.len() - 1].p;
        if lo < p0 {
            best = best.max(self.slope(lo).abs()).max(self.knots[0].dl.abs());
        }
        if hi > pk {
            best = best.max(self.slope(hi).abs()).max(kn[kn.len() - 1].dr.abs());
        }
        for k in 0..kn.len().saturating_sub(1) {
            let (a, b) = (kn[k].p, kn[k + 1].p);
            if b < lo || a > hi {
                continue;
            }
            let h = b - a;
            let t0 = ((lo - a) / h).clamp(0.0, 1.0);
            let t1 = ((hi - a) / h).clamp(0.0, 1.0);
            let (qa, qb, qc) = self.segment_slope_quadratic(k);
            let f = |t: f64| ((qa * t + qb) * t + qc).abs();
            best = best.max(f(t0)).max(f(t1));
            if qa != 0.0 {
                let tv = -qb / (2.0 * qa);
                if tv > t0 && tv < t1 {
                    best = best.max(f(tv));
                }
            }
        }
        best
    }

    fn sample_range(&self) -> f64 {
        2.0 * self.p_first().abs().max(self.p_last().abs()) + 4.0
    }

    fn derive_growth_constants(&mut self) {
        let g = self.gamma;
        let big = self.sample_range();
        let n = 4000;
        let mut a1: f64 = self.left.c.max(self.right.c) * g;
        let mut minval = f64::INFINITY;
        for i in 0..=n {
            let p = -big + 2.0 * big * i as f64 / n as f64;
            let v = self.eval(p);
            minval = minval.min(v);
            a1 = a1.max(v / (p.abs().powf(g) + 1.0));
        }
        for seg in 0..=n {
            let p = -big + 2.0 * big * seg as f64 / n as f64;
            let s = self.lipschitz_on(p - big / n as f64, p + big / n as f64);
            a1 = a1.max(s / (p.abs() + 1.0).powf(g - 1.0));
        }
        // Linear tail terms are dominated by the power once |p| exceeds the range.
        a1 = a1.max(self.left.slope.max(self.right.slope));
        self.alpha1 = 1.05 * a1;
        let cmin = self.left.c.min(self.right.c);
        let mut a0 = 0.5 * cmin;
        for _ in 0..60 {
            let ok = (0..=n).all(|i| {
                let p = -4.0 * big + 8.0 * big * i as f64 / n as f64;
                self.eval(p) >= a0 * p.abs().powf(g) - 1.0 / a0
            });
            if ok {
                break;
            }
            a0 *= 0.5;
        }
        self.alpha0 = a0;
        let _ = minval;
    }

    /// Growth bounds: `alpha0 |p|^gamma - 1/alpha0 <= G <= alpha1 (|p|^gamma + 1)`
    /// and the derivative envelope, sampled on a dense grid.
    pub fn check_growth(&self) -> Result<()> {
        let g = self.gamma;
        let big = 2.0 * self.sample_range();
        let n = 8000;
        for i in 0..=n {
            let p = -big + 2.0 * big * i as f64 / n as f64;
            let v = self.eval(p);
            let pg = p.abs().powf(g);
            if v > self.alpha1 * (pg + 1.0) + 1e-9 || v < self.alpha0 * pg - 1.0 / self.alpha0 - 1e-9 {
                return Err(Error::Class(format!("growth bound violated at p={p}")));
            }
            let s = self.slope(p).abs();
            if s > self.alpha1 * (2.0 * p.abs() + 1.0).powf(g - 1.0) + 1e-9 {
                return Err(Error::Class(format!("local Lipschitz bound violated at p={p}")));
            }
        }
        Ok(())
    }

    /// Local extrema in increasing p.
    pub fn extrema(&self) -> Vec<Extremum> {
        let kn = &self.knots;
        let mut signs = Vec::with_capacity(kn.len() + 1);
        signs.push(-1.0);
        for w in kn.windows(2) {
            signs.push((w[1].g - w[0].g).signum());
        }
        signs.push(1.0);
        let mut out = Vec::new();
        for k in 0..kn.len() {
            if signs[k] != signs[k + 1] {
                let kind = if signs[k] < 0.0 { ExtremumKind::Min } else { ExtremumKind::Max };
                out.push(Extremum { p: kn[k].p, g: kn[k].g, kind, knot: k });
            }
        }
        out
    }

    pub fn extrema_profile(&self) -> Result<ExtremaProfile> {
        self.check_distinct_extrema()?;
        let extrema = self.extrema();
        let gm = self.global_min();
        let maxima: Vec<Extremum> = extrema.iter().filter(|e| e.kind == ExtremumKind::Max).copied().collect();
        let minima: Vec<Extremum> = extrema.iter().filter(|e| e.kind == ExtremumKind::Min && e.knot != gm.knot).copied().collect();
        let argbest = |v: &[Extremum], larger: bool| {
            v.iter().enumerate().fold(None, |acc: Option<(f64, usize)>, (i, e)| match acc {
                Some((g, _)) if (larger && g >= e.g) || (!larger && g <= e.g) => acc,
                _ => Some((e.g, i)),
            })
        };
        let max = argbest(&maxima, true);
        let min = argbest(&minima, false);
        let tail_min = max.and_then(|(_, i)| {
            let start = minima.iter().position(|e| e.p > maxima[i].p)?;
            argbest(&minima[start..], false).map(|(g, k)| (g, k + start))
        });
        Ok(ExtremaProfile { p_min: gm.p, m0: gm.g, extrema, maxima, minima, max, min, tail_min })
    }

    /// `(min, max) { p >= 0 : G(p) = lambda }`.
    pub fn right_inverses(&self, lambda: f64) -> Result<(f64, f64)> {
        if lambda < 0.0 {
            return Err(Error::Domain(format!("right inverse at negative level {lambda}")));
        }
        let r: Vec<f64> = self.crossings(lambda).into_iter().filter(|&p| p >= -1e-12).collect();
        match (r.first(), r.last()) {
            (Some(&a), Some(&b)) => Ok((a.max(0.0), b.max(0.0))),
            _ => Err(Error::Domain(format!("level {lambda} is not attained on p >= 0"))),
        }
    }

    /// [`level_intervals`](Self::level_intervals) with the domain check `lambda >= m0 + beta`.
    pub fn level_intervals_checked(&self, lambda: f64, beta: f64) -> Result<Vec<LevelInterval>> {
        let m0 = self.global_min().g;
        if !(beta > 0.0) || lambda < m0 + beta - 1e-12 {
            return Err(Error::Domain(format!("need beta > 0 and lambda >= m0 + beta, got beta={beta}, lambda={lambda}")));
        }
        Ok(self.level_intervals(lambda, beta))
    }

    pub fn global_min(&self) -> Extremum {
        *self
            .extrema()
            .iter()
            .filter(|e| e.kind == ExtremumKind::Min)
            .min_by(|a, b| a.g.total_cmp(&b.g))
            .expect("coercive functions have a minimum")
    }

    /// `(M, m)`: largest local maximum and smallest local minimum other than the
    /// global minimum; `None` for quasiconvex functions.
    pub fn max_min_levels(&self) -> Option<(f64, f64)> {
        let gm = self.global_min();
        let ex: Vec<_> = self.extrema().into_iter().filter(|e| e.knot != gm.knot).collect();
        if ex.is_empty() {
            return None;
        }
        let m_hi = ex.iter().filter(|e| e.kind == ExtremumKind::Max).map(|e| e.g).fold(f64::NEG_INFINITY, f64::max);
        let m_lo = ex.iter().filter(|e| e.kind == ExtremumKind::Min).map(|e| e.g).fold(f64::INFINITY, f64::min);
        Some((m_hi, m_lo))
    }

    /// Check distinct extremum values and a unique global minimum 0 at p = 0.
    pub fn check_g0(&self) -> Result<()> {
        self.check_distinct_extrema()?;
        let gm = self.global_min();
        if gm.p.abs() > 1e-12 || gm.g.abs() > 1e-12 {
            return Err(Error::Class(format!("global minimum {} at p={} is not 0 at the origin", gm.g, gm.p)));
        }
        Ok(())
    }

    pub fn check_distinct_extrema(&self) -> Result<()> {
        let mut vals: Vec<f64> = self.extrema().iter().map(|e| e.g).collect();
        vals.sort_by(f64::total_cmp);
        for w in vals.windows(2) {
            if (w[1] - w[0]).abs() <= 1e-12 * (1.0 + w[0].abs()) {
                return Err(Error::Class(format!("extremum values tie at {}", w[0])));
            }
        }
        Ok(())
    }

    /// `K(p) = G(sigma (p - shift)) + offset` with `sigma = +-1`.
    pub fn transformed(&self, sigma: f64, shift: f64, offset: f64) -> Self {
        let (knots, left, right) = if sigma > 0.0 {
            let knots = self.knots.iter().map(|k| Knot { p: k.p + shift, g: k.g + offset, ..*k }).collect();
            let l = Tail { center: self.left.center + shift, offset: self.left.offset + offset, ..self.left };
            let r = Tail { center: self.right.center + shift, offset: self.right.offset + offset, ..self.right };
            (knots, l, r)
        } else {
            let knots = self
                .knots
                .iter()
                .rev()
                .map(|k| Knot { p: shift - k.p, g: k.g + offset, dl: -k.dr, dr: -k.dl })
                .collect();
            let l = Tail { center: shift - self.right.center, offset: self.right.offset + offset, ..self.right };
            let r = Tail { center: shift - self.left.center, offset: self.left.offset + offset, ..self.left };
            (knots, l, r)
        };
        let mut g = Nonlinearity { gamma: self.gamma, knots, left, right, alpha0: 0.0, alpha1: 0.0 };
        g.derive_growth_constants();
        g
    }

    /// Shift the global minimum to `(0, 0)`; returns `(G~, p_min, m0)` with
    /// `G~(p) = G(p + p_min) - m0`.
    pub fn normalize(&self) -> (Self, f64, f64) {
        let gm = self.global_min();
        (self.transformed(1.0, -gm.p, -gm.g), gm.p, gm.g)
    }

    /// Monotone pieces between consecutive extrema (infinite ends included).
    fn monotone_pieces(&self) -> Vec<(f64, f64)> {
        let ex = self.extrema();
        let mut cuts = vec![f64::NEG_INFINITY];
        cuts.extend(ex.iter().map(|e| e.p));
        cuts.push(f64::INFINITY);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn bisect_root(&self, mut a: f64, mut b: f64, level: f64) -> f64 {
        let fa = self.eval(a) - level;
        let inc = self.eval(b) - level > fa;
        for _ in 0..BISECT_ITERS {
            let m = 0.5 * (a + b);
            let fm = self.eval(m) - level;
            if (fm < 0.0) == inc {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// All solutions of `G(p) = level`, sorted, touching extrema counted once.
    pub fn crossings(&self, level: f64) -> Vec<f64> {
        let mut roots: Vec<f64> = Vec::new();
        for (a, b) in self.monotone_pieces() {
            let (mut a, mut b) = (a, b);
            if a == f64::NEG_INFINITY {
                let mut d = 1.0;
                a = b - d;
                while self.eval(a) < level {
                    d *= 2.0;
                    a = b - d;
                }
            }
            if b == f64::INFINITY {
                let mut d = 1.0;
                b = a + d;
                while self.eval(b) < level {
                    d *= 2.0;
                    b = a + d;
                }
            }
            let (ga, gb) = (self.eval(a), self.eval(b));
            let (lo, hi) = if ga < gb { (ga, gb) } else { (gb, ga) };
            if level < lo || level > hi {
                continue;
            }
            let r = if level == ga {
                a
            } else if level == gb {
                b
            } else {
                self.bisect_root(a, b, level)
            };
            roots.push(r);
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-10 * (1.0 + y.abs()));
        roots
    }

    /// `inf / sup { p : G(p) <= level }`.
    pub fn coercivity_bounds(&self, level: f64) -> Option<(f64, f64)> {
        let r = self.crossings(level);
        if r.is_empty() {
            None
        } else {
            Some((r[0], r[r.len() - 1]))
        }
    }

    /// All level intervals of `G` at `(lambda, beta)`.
    pub fn level_intervals(&self, lambda: f64, beta: f64) -> Vec<LevelInterval> {
        if !(beta > 0.0) {
            return Vec::new();
        }
        let lo = lambda - beta;
        let mut pts = self.crossings(lo);
        pts.extend(self.crossings(lambda));
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-10 * (1.0 + y.abs()));
        let mut out = Vec::new();
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let gm = self.eval(0.5 * (a + b));
            if !(gm > lo && gm < lambda) {
                continue;
            }
            let a_low = (self.eval(a) - lo).abs() < (self.eval(a) - lambda).abs();
            let b_low = (self.eval(b) - lo).abs() < (self.eval(b) - lambda).abs();
            if a_low != b_low {
                out.push(LevelInterval { p1: a, p2: b, low_left: a_low });
            }
        }
        out
    }

    /// Level interval between two given endpoints, or a degenerate one when
    /// `beta = 0` (constant solutions).
    pub fn interval_between(&self, p1: f64, p2: f64, lambda: f64, beta: f64) -> LevelInterval {
        let low_left = if beta > 0.0 { (self.eval(p1) - (lambda - beta)).abs() < (self.eval(p1) - lambda).abs() } else { true };
        LevelInterval { p1: p1.min(p2), p2: p1.max(p2), low_left }
    }

    /// `max { p <= cap : G(p) = level }`.
    pub fn upper_root_below(&self, level: f64, cap: f64) -> Option<f64> {
        self.crossings(level).into_iter().rfind(|&p| p <= cap + 1e-12)
    }
    /// `min { p >= floor : G(p) = level }`.
    pub fn lower_root_above(&self, level: f64, floor: f64) -> Option<f64> {
        self.crossings(level).into_iter().find(|&p| p >= floor - 1e-12)
    }

    fn knot_index(&self, p: f64) -> Result<usize> {
        self.knots
            .iter()
            .position(|k| (k.p - p).abs() <= 1e-12 * (1.0 + p.abs()))
            .ok_or_else(|| Error::Class(format!("p={p} is not a breakpoint")))
    }

    /// `G` on `(-inf, p*]` continued by a strictly increasing power bridge that
    /// dominates `G` on `[p*, inf)`. `steepness >= 1` scales the bridge.
    pub fn with_right_bridge(&self, pstar: f64, steepness: f64) -> Result<Self> {
        let k = self.knot_index(pstar)?;
        let gamma = self.gamma;
        let g0 = self.knots[k].g;
        let mut c = steepness * 2.0 * self.left.c.max(self.right.c);
        let reach = 4.0 * (pstar.abs() + self.p_last().abs() + 5.0);
        for _ in 0..30 {
            let n = 20000;
            let mut s: f64 = 0.0;
            for i in 1..=n {
                let d = reach * (i as f64 / n as f64).powi(2);
                let v = self.eval(pstar + d) - g0 - c * d.powf(gamma);
                s = s.max(v / d);
            }
            let s = steepness * (1.05 * s + 1e-3) + 1e-3 * c;
            let mut knots: Vec<Knot> = self.knots[..=k].to_vec();
            knots[k].dr = s;
            let bridge = Tail { c, center: pstar, slope: s, offset: g0 };
            let cand = Self::from_parts(gamma, knots, self.left, bridge)?;
            let ok = (0..=40000).all(|i| {
                let p = pstar + 4.0 * reach * (i as f64 / 40000.0).powi(2);
                cand.eval(p) >= self.eval(p) - 1e-12 * (1.0 + self.eval(p).abs())
            });
            if ok {
                return Ok(cand);
            }
            c *= 2.0;
        }
        Err(Error::Numerical("could not build a dominating bridge".into()))
    }

    /// Mirror image of [`with_right_bridge`](Self::with_right_bridge).
    pub fn with_left_bridge(&self, pstar: f64, steepness: f64) -> Result<Self> {
        let r = self.transformed(-1.0, 0.0, 0.0).with_right_bridge(-pstar, steepness)?;
        Ok(r.transformed(-1.0, 0.0, 0.0))
    }

    /// Split at the origin: `G1 = G` on `p <= 0`, `G2 = G` on `p >= 0`, bridged
    /// monotonically on the other side.
    pub fn split_at_origin(&self, steepness: f64) -> Result<(Self, Self)> {
        Ok((self.with_right_bridge(0.0, steepness)?, self.with_left_bridge(0.0, steepness)?))
    }

    /// For `G` decreasing on `(-inf, 0]` with extrema `0 < p_1 < .. < p_2N`
    /// returns the positive-side extrema; error otherwise.
    pub fn right_extrema(&self) -> Result<Vec<Extremum>> {
        let ex = self.extrema();
        if ex.iter().any(|e| e.p < -1e-12) {
            return Err(Error::Class("extrema on the negative half-line".into()));
        }
        Ok(ex.into_iter().filter(|e| e.p > 1e-12).collect())
    }

    /// Small-beta decomposition for `beta <= M - m`.
    pub fn split_small_beta(&self, beta: f64, steepness: f64) -> Result<SmallBetaSplit> {
        let ex = self.right_extrema()?;
        if ex.len() < 2 {
            return Err(Error::Class("split needs extrema on the positive half-line".into()));
        }
        let maxima: Vec<&Extremum> = ex.iter().filter(|e| e.kind == ExtremumKind::Max).collect();
        let minima: Vec<&Extremum> = ex.iter().filter(|e| e.kind == ExtremumKind::Min).collect();
        let (i, mx) = maxima.iter().enumerate().max_by(|a, b| a.1.g.total_cmp(&b.1.g)).unwrap();
        let (j, mn) = minima.iter().enumerate().min_by(|a, b| a.1.g.total_cmp(&b.1.g)).unwrap();
        let (big_m, small_m) = (mx.g, mn.g);
        if beta > big_m - small_m {
            return Err(Error::Class(format!("beta={beta} exceeds M - m = {}", big_m - small_m)));
        }
        let tail_min = minima[i..].iter().min_by(|a, b| a.g.total_cmp(&b.g)).unwrap();
        let peak = mx.p;
        let level = big_m - beta;
        let left = self.with_right_bridge(peak, steepness)?;
        if beta > big_m - tail_min.g {
            debug_assert!(i > j);
            let q = *self.crossings(level).last().unwrap();
            let flat = self.interval_between(q, peak, big_m, beta);
            let right = self.with_left_bridge(mn.p, steepness)?;
            Ok(SmallBetaSplit::CaseI { peak, level_max: big_m, flat, left, right, right_min: (mn.p, mn.g) })
        } else {
            let qm = self.upper_root_below(level, peak).ok_or_else(|| Error::Class("no left root".into()))?;
            let qp = self.lower_root_above(level, peak).ok_or_else(|| Error::Class("no right root".into()))?;
            let right = self.with_left_bridge(peak, steepness)?;
            Ok(SmallBetaSplit::CaseII {
                peak,
                level_max: big_m,
                flat_left: self.interval_between(qm, peak, big_m, beta),
                flat_right: self.interval_between(peak, qp, big_m, beta),
                left,
                right,
                right_min: (tail_min.p, tail_min.g),
            })
        }
    }

    /// Nearby member of the normalized class: extremum values are pushed apart
    /// by a staircase of step `(4n)^-1 / #extrema`, then the global minimum is
    /// moved to the origin. Returns the approximant, `p_min`, `m0` and the sup
    /// distance bound of the value change.
    pub fn approximate_in_g0(&self, n: usize) -> Result<(Self, f64, f64, f64)> {
        let ex = self.extrema();
        let eps = 1.0 / (4.0 * n as f64) / ex.len() as f64;
        let mut knots = self.knots.clone();
        let mut order: Vec<usize> = (0..ex.len()).collect();
        order.sort_by(|&a, &b| ex[a].g.total_cmp(&ex[b].g).then(a.cmp(&b)));
        for (rank, &idx) in order.iter().enumerate() {
            knots[ex[idx].knot].g += eps * rank as f64;
        }
        let mut left = self.left;
        let mut right = self.right;
        left.offset += knots[0].g - self.knots[0].g;
        let last = knots.len() - 1;
        right.offset += knots[last].g - self.knots[last].g;
        let pert = Self::from_parts(self.gamma, knots, left, right)?;
        pert.check_distinct_extrema()?;
        let (g0, pmin, m0) = pert.normalize();
        Ok((g0, pmin, m0, eps * ex.len() as f64))
    }

    /// Breakpoints where the one-sided derivatives differ.
    pub fn corners(&self) -> Vec<f64> {
        self.knots.iter().filter(|k| (k.dl - k.dr).abs() > 1e-12 * (1.0 + k.dl.abs())).map(|k| k.p).collect()
    }

    /// All breakpoint positions; `G` is at most `C^1` across them.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.p).collect()
    }

    /// True when there is no extremum other than the global minimum.
    pub fn is_quasiconvex(&self) -> bool {
        self.extrema().len() == 1
    }

    /// Sup distance to another nonlinearity on `[lo, hi]`, sampled.
    pub fn sup_distance(&self, other: &Self, lo: f64, hi: f64, n: usize) -> f64 {
        (0..=n)
            .map(|i| {
                let p = lo + (hi - lo) * i as f64 / n as f64;
                (self.eval(p) - other.eval(p)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise shift `G + eps`.
    pub fn shifted(&self, eps: f64) -> Self {
        self.transformed(1.0, 0.0, eps)
    }
}
