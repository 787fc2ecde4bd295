//! Effective Hamiltonian by the corrector route: base cases for quasiconvex
//! and large-beta nonlinearities, glued together along a recursion over the
//! extrema of `G`.
//!
//! Every node of the recursion carries a normalized nonlinearity `Gn` (unique
//! minimum 0 at the origin) and a frame mapping it back to the input
//! coordinates: `p = sigma pn + shift`, `lambda = lambda_n + offset`. Corrector
//! solves always run in input coordinates with `Gn(sigma (p - shift)) + offset`,
//! so no reflection of the environment is needed.

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{verify_certificate, CertificateReport, Corrector, CorrectorCertificate, CorrectorSolution, Tolerances, Window};
use crate::env_media::SampledEnvironment;
use crate::error::{Error, Result};
use crate::nonlinearity::{LevelInterval, Nonlinearity, SmallBetaSplit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    QuasiconvexLeft,
    FlatBeta,
    QuasiconvexRight,
    LargeBetaBranch,
    FlatM(f64),
    GluedLeft(usize),
    GluedRight(usize),
}

impl Provenance {
    pub fn is_flat(&self) -> bool {
        matches!(self, Provenance::FlatBeta | Provenance::FlatM(_))
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::FlatM(l) => write!(f, "FlatM({l})"),
            Provenance::GluedLeft(d) => write!(f, "GluedLeft({d})"),
            Provenance::GluedRight(d) => write!(f, "GluedRight({d})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub sigma: f64,
    pub shift: f64,
    pub offset: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame { sigma: 1.0, shift: 0.0, offset: 0.0 };

    /// Frame of a child given relative to this one.
    pub fn compose(&self, child: &Frame) -> Frame {
        Frame { sigma: self.sigma * child.sigma, shift: self.sigma * child.shift + self.shift, offset: child.offset + self.offset }
    }
    pub fn to_piece(&self, p: f64) -> f64 {
        self.sigma * (p - self.shift)
    }
    pub fn from_piece(&self, p: f64) -> f64 {
        self.sigma * p + self.shift
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EhOptions {
    pub tol: Tolerances,
    pub window: Window,
    pub n_approx: usize,
    pub bridge_steepness: f64,
    pub max_iter: usize,
    /// Recompute certificates with the full nonlinearity at each grid point.
    pub certificates: bool,
}

impl Default for EhOptions {
    fn default() -> Self {
        EhOptions {
            tol: Tolerances::default(),
            window: Window { half_width: 400.0, burn_in: 200.0 },
            n_approx: 64,
            bridge_steepness: 1.0,
            max_iter: 40,
            certificates: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Extreme {
    Min,
    Max,
}

impl Extreme {
    fn flip(self) -> Self {
        match self {
            Extreme::Min => Extreme::Max,
            Extreme::Max => Extreme::Min,
        }
    }
}

/// One member of a certificate pair in piece coordinates.
#[derive(Clone, Copy, Debug)]
struct PieceSolution {
    p1: f64,
    p2: f64,
    which: Extreme,
    /// Level in piece coordinates.
    lambda: f64,
}

#[derive(Clone, Debug)]
enum Kind {
    Quasiconvex,
    LargeBeta,
    Mirror(usize),
    Origin { left: usize, right: usize },
    SmallBeta { case_one: bool, flat_lo: (f64, f64), flat_hi: (f64, f64), level: f64, left: usize, right: usize },
}

struct Node {
    g: Nonlinearity,
    /// `g` in input coordinates.
    h: Nonlinearity,
    frame: Frame,
    kind: Kind,
    /// Cached threshold means in piece coordinates with their solutions.
    flat: OnceLock<std::result::Result<FlatData, String>>,
}

#[derive(Clone, Debug)]
struct FlatData {
    lo: f64,
    hi: f64,
    lower: PieceSolution,
    upper: PieceSolution,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub lambda: f64,
    pub provenance: Provenance,
    /// Node path through the recursion, e.g. `origin>right>largebeta`.
    pub path: String,
    pub certificate: Option<CorrectorCertificate>,
    pub report: Option<CertificateReport>,
    /// Sup of `f_upper - f_lower`, positive on flat pieces.
    pub gap_sup: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveCurve {
    pub points: Vec<CurvePoint>,
    pub beta: f64,
    pub seed: u64,
    pub window: Window,
    pub p_min: f64,
    pub m0: f64,
    /// Sup-distance of the class approximation used, 0 when none was needed.
    pub approx_error: f64,
}

impl EffectiveCurve {
    pub fn thetas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.theta).collect()
    }
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,lambda,provenance,cert_gap,cert_residual\n");
        for p in &self.points {
            let (gap, res) = p
                .certificate
                .as_ref()
                .map(|c| (c.gap_inf, c.residual_lower.max(c.residual_upper)))
                .unwrap_or((f64::NAN, f64::NAN));
            s.push_str(&format!("{},{},{},{},{}\n", p.theta, p.lambda, p.provenance, gap, res));
        }
        s
    }
}

/// Recursion tree for one nonlinearity.
pub struct Construction<'a> {
    env: &'a SampledEnvironment,
    beta: f64,
    opts: EhOptions,
    nodes: Vec<Node>,
    /// Nonlinearity in input coordinates used for the final certificates.
    full: Nonlinearity,
    p_min: f64,
    m0: f64,
    approx_error: f64,
}

fn piece_interval_raw(frame: &Frame, p1: f64, p2: f64) -> (f64, f64) {
    let (a, b) = (frame.from_piece(p1), frame.from_piece(p2));
    (a.min(b), a.max(b))
}

impl<'a> Construction<'a> {
    pub fn new(g_raw: &Nonlinearity, env: &'a SampledEnvironment, beta: f64, opts: EhOptions) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::Config(format!("beta must be nonnegative, got {beta}")));
        }
        let (g0, p_min, m0, approx_error, full) = match g_raw.normalize() {
            (g0, p, m) if g0.check_g0().is_ok() => (g0, p, m, 0.0, g_raw.clone()),
            _ => {
                let (g0, p, m, err) = g_raw.approximate_in_g0(opts.n_approx)?;
                g0.check_g0()?;
                let full = g0.transformed(1.0, p, m);
                (g0, p, m, err, full)
            }
        };
        let mut c = Construction { env, beta, opts, nodes: Vec::new(), full, p_min, m0, approx_error };
        if beta > 0.0 {
            c.build(g0, Frame { sigma: 1.0, shift: p_min, offset: m0 })?;
        }
        Ok(c)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, g: Nonlinearity, frame: Frame, kind: Kind) -> usize {
        let h = g.transformed(frame.sigma, frame.shift, frame.offset);
        self.nodes.push(Node { g, h, frame, kind, flat: OnceLock::new() });
        self.nodes.len() - 1
    }

    /// Builds the subtree for `g` (normalized) and returns its index.
    fn build(&mut self, g: Nonlinearity, frame: Frame) -> Result<usize> {
        g.check_g0()?;
        let ex = g.extrema();
        let has_left = ex.iter().any(|e| e.p < 0.0);
        let has_right = ex.iter().any(|e| e.p > 0.0);
        let steep = self.opts.bridge_steepness;
        let beta = self.beta;
        if !has_left && !has_right {
            return Ok(self.push(g, frame, Kind::Quasiconvex));
        }
        if has_left && !has_right {
            let child = g.transformed(-1.0, 0.0, 0.0);
            let idx = self.push(g, frame, Kind::Mirror(usize::MAX));
            let cf = frame.compose(&Frame { sigma: -1.0, shift: 0.0, offset: 0.0 });
            let c = self.build(child, cf)?;
            self.nodes[idx].kind = Kind::Mirror(c);
            return Ok(idx);
        }
        if has_left && has_right {
            let (g1, g2) = g.split_at_origin(steep)?;
            let idx = self.push(g, frame, Kind::Origin { left: usize::MAX, right: usize::MAX });
            let l = self.build(g1, frame)?;
            let r = self.build(g2, frame)?;
            self.nodes[idx].kind = Kind::Origin { left: l, right: r };
            return Ok(idx);
        }
        let (big_m, small_m) = g.max_min_levels().expect("extrema on the right");
        if beta > big_m - small_m {
            return Ok(self.push(g, frame, Kind::LargeBeta));
        }
        match g.split_small_beta(beta, steep)? {
            SmallBetaSplit::CaseI { level_max, flat, left, right, right_min, .. } => {
                let (rn, p, m) = right.normalize();
                debug_assert!((p - right_min.0).abs() < 1e-9 && (m - right_min.1).abs() < 1e-9);
                let idx = self.push(
                    g,
                    frame,
                    Kind::SmallBeta {
                        case_one: true,
                        flat_lo: (flat.p1, flat.p2),
                        flat_hi: (flat.p1, flat.p2),
                        level: level_max,
                        left: usize::MAX,
                        right: usize::MAX,
                    },
                );
                let l = self.build(left, frame)?;
                let r = self.build(rn, frame.compose(&Frame { sigma: 1.0, shift: p, offset: m }))?;
                if let Kind::SmallBeta { left, right, .. } = &mut self.nodes[idx].kind {
                    *left = l;
                    *right = r;
                }
                Ok(idx)
            }
            SmallBetaSplit::CaseII { level_max, flat_left, flat_right, left, right, .. } => {
                let (rn, p, m) = right.normalize();
                let idx = self.push(
                    g,
                    frame,
                    Kind::SmallBeta {
                        case_one: false,
                        flat_lo: (flat_left.p1, flat_left.p2),
                        flat_hi: (flat_right.p1, flat_right.p2),
                        level: level_max,
                        left: usize::MAX,
                        right: usize::MAX,
                    },
                );
                let l = self.build(left, frame)?;
                let r = self.build(rn, frame.compose(&Frame { sigma: 1.0, shift: p, offset: m }))?;
                if let Kind::SmallBeta { left, right, .. } = &mut self.nodes[idx].kind {
                    *left = l;
                    *right = r;
                }
                Ok(idx)
            }
        }
    }

    fn corrector<'b>(&'b self, g: &'b Nonlinearity) -> Result<Corrector<'b>> {
        Corrector::new(self.env, g, self.beta, self.opts.window)
    }

    /// Solve on a piece interval; returns the solution and its mean in piece coordinates.
    fn solve(&self, node: &Node, s: PieceSolution) -> Result<(CorrectorSolution, f64)> {
        let fr = node.frame;
        let (q1, q2) = piece_interval_raw(&fr, s.p1, s.p2);
        let lambda = s.lambda + fr.offset;
        let iv = node.h.interval_between(q1, q2, lambda, self.beta);
        let c = self.corrector(&node.h)?;
        let which = if fr.sigma > 0.0 { s.which } else { s.which.flip() };
        let sol = match which {
            Extreme::Min => c.minimal_solution(lambda, &iv)?,
            Extreme::Max => c.maximal_solution(lambda, &iv)?,
        };
        let mean = fr.to_piece(sol.mean);
        Ok((sol, mean))
    }

    fn mean(&self, node: &Node, s: PieceSolution) -> Result<f64> {
        self.solve(node, s).map(|r| r.1)
    }

    fn left_family(&self, node: &Node, lambda: f64, which: Extreme) -> Result<PieceSolution> {
        let g = &node.g;
        let p1 = g.upper_root_below(lambda, 0.0).ok_or_else(|| Error::Search(format!("no left root at level {lambda}")))?;
        let p2 = g.upper_root_below(lambda - self.beta, 0.0).ok_or_else(|| Error::Search("no left root".into()))?;
        Ok(PieceSolution { p1, p2, which, lambda })
    }

    fn right_family(&self, node: &Node, lambda: f64, which: Extreme) -> Result<PieceSolution> {
        let (_, ol) = node.g.right_inverses((lambda - self.beta).max(0.0))?;
        let (ul, _) = node.g.right_inverses(lambda)?;
        Ok(PieceSolution { p1: ol, p2: ul, which, lambda })
    }

    /// Flat-piece thresholds of a node, in piece coordinates.
    fn flat(&self, idx: usize) -> Result<&FlatData> {
        let node = &self.nodes[idx];
        let res = node.flat.get_or_init(|| self.compute_flat(node).map_err(|e| e.to_string()));
        res.as_ref().map_err(|e| Error::Search(e.clone()))
    }

    fn compute_flat(&self, node: &Node) -> Result<FlatData> {
        let beta = self.beta;
        let (level, lower, upper) = match &node.kind {
            Kind::Quasiconvex | Kind::LargeBeta => (beta, self.left_family(node, beta, Extreme::Min)?, self.right_family(node, beta, Extreme::Max)?),
            Kind::Origin { .. } => {
                let q1 = node.g.upper_root_below(beta, 0.0).ok_or_else(|| Error::Search("no root of G = beta on the left".into()))?;
                let q2 = node.g.lower_root_above(beta, 0.0).ok_or_else(|| Error::Search("no root of G = beta on the right".into()))?;
                (beta, PieceSolution { p1: q1, p2: 0.0, which: Extreme::Min, lambda: beta }, PieceSolution { p1: 0.0, p2: q2, which: Extreme::Max, lambda: beta })
            }
            Kind::SmallBeta { flat_lo, flat_hi, level, .. } => (
                *level,
                PieceSolution { p1: flat_lo.0, p2: flat_lo.1, which: Extreme::Min, lambda: *level },
                PieceSolution { p1: flat_hi.0, p2: flat_hi.1, which: Extreme::Max, lambda: *level },
            ),
            Kind::Mirror(_) => return Err(Error::Search("mirror nodes have no flat piece".into())),
        };
        let lo = self.mean(node, lower)?;
        let hi = self.mean(node, upper)?;
        if hi < lo - self.opts.tol.tol_mean {
            return Err(Error::Numerical(format!(
                "consistency: flat-piece thresholds out of order ({lo} > {hi}) at level {level} in frame {:?}",
                node.frame
            )));
        }
        Ok(FlatData { lo, hi, lower, upper })
    }

    /// Regula falsi (Illinois) for a monotone map `m(lambda)` crossing `target`.
    /// `increasing` gives the direction. Returns `(l, l)` at a root, or the two
    /// sides of a jump the bracket collapsed onto.
    fn search<F>(&self, lo: f64, hi: f64, target: f64, increasing: bool, mut m: F) -> Result<(f64, f64)>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let sgn = if increasing { 1.0 } else { -1.0 };
        let tol = self.opts.tol.tol_mean * target.abs().max(1.0) * 0.1;
        let mut a = lo;
        let mut b = hi;
        let mut fa = sgn * (m(a)? - target);
        if fa >= -tol {
            return Ok((a, a));
        }
        let mut fb = sgn * (m(b)? - target);
        if fb <= tol {
            return Ok((b, b));
        }
        let mut side = 0i32;
        for _ in 0..self.opts.max_iter {
            if b - a <= 1e-11 * b.abs().max(1.0) {
                break;
            }
            let mut c = (a * fb - b * fa) / (fb - fa);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            let fc = sgn * (m(c)? - target);
            if fc.abs() <= tol {
                return Ok((c, c));
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        Ok((a, b))
    }

    /// Resolve `theta` (input coordinates) at node `idx`.
    fn resolve(&self, idx: usize, theta: f64, depth: usize, side: Option<bool>, path: &mut String) -> Result<Resolved> {
        let node = &self.nodes[idx];
        let th = node.frame.to_piece(theta);
        let beta = self.beta;
        let flip = node.frame.sigma < 0.0;
        let orient = |piece_left: bool| piece_left != flip;
        let lead = |leaf: Provenance| match (depth, side) {
            (0, _) | (_, None) => leaf,
            (d, Some(true)) => Provenance::GluedLeft(d),
            (d, Some(false)) => Provenance::GluedRight(d),
        };
        match &node.kind {
            Kind::Mirror(c) => {
                path.push_str("mirror>");
                self.resolve(*c, theta, depth, side, path)
            }
            Kind::Origin { left, right } | Kind::SmallBeta { left, right, .. } => {
                let tag = match node.kind {
                    Kind::Origin { .. } => "origin",
                    Kind::SmallBeta { case_one: true, .. } => "smallbeta1",
                    _ => "smallbeta2",
                };
                let f = self.flat(idx)?;
                if th < f.lo {
                    path.push_str(&format!("{tag}:left>"));
                    let s = side.or(Some(orient(true)));
                    self.resolve(*left, theta, depth + 1, s, path)
                } else if th > f.hi {
                    path.push_str(&format!("{tag}:right>"));
                    let s = side.or(Some(orient(false)));
                    self.resolve(*right, theta, depth + 1, s, path)
                } else {
                    path.push_str(&format!("{tag}:flat"));
                    let level = match node.kind {
                        Kind::SmallBeta { level, .. } => level,
                        _ => beta,
                    };
                    Ok(self.resolved(node, level, f.lower, f.upper, Provenance::FlatBeta, true))
                }
            }
            Kind::Quasiconvex | Kind::LargeBeta => {
                let f = self.flat(idx)?;
                let g = &node.g;
                let lo = beta.max(g.eval(th));
                let hi = g.eval(th) + beta;
                if th < f.lo {
                    path.push_str("base:left");
                    let (a, b) = self.search(lo, hi, th, false, |lam| self.mean(node, self.left_family(node, lam, Extreme::Min)?))?;
                    let prov = lead(if orient(true) { Provenance::QuasiconvexLeft } else { Provenance::QuasiconvexRight });
                    // Decreasing map: the larger level carries the smaller mean.
                    let (lower, upper) = if a == b {
                        let s = self.left_family(node, b, Extreme::Min)?;
                        (s, PieceSolution { which: Extreme::Max, ..s })
                    } else {
                        (self.left_family(node, b, Extreme::Min)?, self.left_family(node, a, Extreme::Max)?)
                    };
                    Ok(self.resolved(node, b, lower, upper, prov, false))
                } else if th <= f.hi {
                    path.push_str("base:flat");
                    Ok(self.resolved(node, beta, f.lower, f.upper, Provenance::FlatBeta, true))
                } else {
                    let qc = matches!(node.kind, Kind::Quasiconvex);
                    path.push_str(if qc { "base:right" } else { "base:largebeta" });
                    // Large beta: smallest level whose upper branch mean reaches theta.
                    let probe = if qc { Extreme::Min } else { Extreme::Max };
                    let (a, b) = self.search(lo, hi, th, true, |lam| self.mean(node, self.right_family(node, lam, probe)?))?;
                    let prov = if qc {
                        lead(if orient(false) { Provenance::QuasiconvexLeft } else { Provenance::QuasiconvexRight })
                    } else {
                        lead(Provenance::LargeBetaBranch)
                    };
                    let (lower, upper) = if a == b {
                        let s = self.right_family(node, b, Extreme::Min)?;
                        (s, PieceSolution { which: Extreme::Max, ..s })
                    } else {
                        (self.right_family(node, a, Extreme::Max)?, self.right_family(node, b, Extreme::Max)?)
                    };
                    Ok(self.resolved(node, b, lower, upper, prov, false))
                }
            }
        }
    }

    fn resolved(&self, node: &Node, lambda_n: f64, lower: PieceSolution, upper: PieceSolution, prov: Provenance, flat: bool) -> Resolved {
        let fr = node.frame;
        let lambda = lambda_n + fr.offset;
        let map = |s: PieceSolution| {
            let (q1, q2) = piece_interval_raw(&fr, s.p1, s.p2);
            (q1, q2, if fr.sigma > 0.0 { s.which } else { s.which.flip() }, s.lambda + fr.offset)
        };
        let (l, u) = if fr.sigma > 0.0 { (map(lower), map(upper)) } else { (map(upper), map(lower)) };
        let provenance = if flat {
            if (lambda - (self.m0 + self.beta)).abs() <= 1e-12 * lambda.abs().max(1.0) {
                Provenance::FlatBeta
            } else {
                Provenance::FlatM(lambda)
            }
        } else {
            prov
        };
        Resolved { lambda, lower: l, upper: u, provenance }
    }

    /// Value and certificate at one `theta`.
    pub fn point(&self, theta: f64) -> Result<CurvePoint> {
        if self.beta == 0.0 {
            let lambda = self.full.eval(theta);
            let c = self.corrector(&self.full)?;
            let iv = LevelInterval { p1: theta, p2: theta, low_left: true };
            let sol = c.minimal_solution(lambda, &iv)?;
            let cert = CorrectorCertificate::new(theta, lambda, sol.clone(), sol);
            let report = verify_certificate(&cert, &self.opts.tol, Some(&c));
            let provenance = if theta < self.p_min { Provenance::QuasiconvexLeft } else { Provenance::QuasiconvexRight };
            return Ok(CurvePoint {
                theta,
                lambda,
                provenance,
                path: "exact".into(),
                certificate: Some(cert.compact()),
                report: Some(report),
                gap_sup: 0.0,
            });
        }
        let mut path = String::new();
        let r = self.resolve(0, theta, 0, None, &mut path)?;
        let mut point = CurvePoint { theta, lambda: r.lambda, provenance: r.provenance, path, certificate: None, report: None, gap_sup: 0.0 };
        if self.opts.certificates {
            let c = self.corrector(&self.full)?;
            let solve = |m: Member| self.solve_full(&c, m);
            let lower = solve(r.lower)?;
            let upper = solve(r.upper)?;
            point.gap_sup = upper.f.iter().zip(&lower.f).map(|(u, l)| u - l).fold(0.0, f64::max);
            let cert = CorrectorCertificate::new(theta, r.lambda, lower, upper);
            point.report = Some(verify_certificate(&cert, &self.opts.tol, Some(&c)));
            point.certificate = Some(cert.compact());
        }
        Ok(point)
    }

    /// Extremal solutions of the certificate at `theta`, computed with the full nonlinearity.
    pub fn certificate_pair(&self, theta: f64) -> Result<(CorrectorSolution, CorrectorSolution, f64)> {
        let mut path = String::new();
        let r = self.resolve(0, theta, 0, None, &mut path)?;
        let c = self.corrector(&self.full)?;
        let solve = |m: Member| self.solve_full(&c, m);
        Ok((solve(r.lower)?, solve(r.upper)?, r.lambda))
    }

    /// Flat pieces predicted by the recursion in input coordinates:
    /// `(theta_lo, theta_hi, level)` per gluing or base node.
    pub fn flat_pieces(&self) -> Result<Vec<(f64, f64, f64)>> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.kind, Kind::Mirror(_)) {
                continue;
            }
            let f = self.flat(i)?;
            let level = match n.kind {
                Kind::SmallBeta { level, .. } => level,
                _ => self.beta,
            } + n.frame.offset;
            let (a, b) = (n.frame.from_piece(f.lo), n.frame.from_piece(f.hi));
            let (a, b) = (a.min(b), a.max(b));
            // Keep only flat pieces the dispatch actually reaches.
            let mut path = String::new();
            let reached = self.resolve(0, 0.5 * (a + b), 0, None, &mut path)?;
            if (reached.lambda - level).abs() <= 1e-12 * level.abs().max(1.0) && path.ends_with("flat") {
                out.push((a, b, level));
            }
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(out)
    }

    fn solve_full(&self, c: &Corrector<'_>, (q1, q2, which, lambda): Member) -> Result<CorrectorSolution> {
        let iv = self.full.interval_between(q1, q2, lambda, self.beta);
        match which {
            Extreme::Min => c.minimal_solution(lambda, &iv),
            Extreme::Max => c.maximal_solution(lambda, &iv),
        }
    }

    pub fn env(&self) -> &SampledEnvironment {
        self.env
    }

    pub fn full(&self) -> &Nonlinearity {
        &self.full
    }

    pub fn curve(&self, thetas: &[f64]) -> Result<EffectiveCurve> {
        // Thresholds first, so the parallel sweep does not race on them.
        for i in 0..self.nodes.len() {
            if !matches!(self.nodes[i].kind, Kind::Mirror(_)) {
                self.flat(i)?;
            }
        }
        let points: Result<Vec<CurvePoint>> = thetas.par_iter().map(|&t| self.point(t)).collect();
        Ok(EffectiveCurve {
            points: points?,
            beta: self.beta,
            seed: self.env.seed,
            window: self.opts.window,
            p_min: self.p_min,
            m0: self.m0,
            approx_error: self.approx_error,
        })
    }
}

/// Raw interval, extreme and level of one certificate member.
type Member = (f64, f64, Extreme, f64);

struct Resolved {
    lambda: f64,
    lower: Member,
    upper: Member,
    provenance: Provenance,
}

pub fn effective_hamiltonian(g: &Nonlinearity, env: &SampledEnvironment, beta: f64, thetas: &[f64], opts: &EhOptions) -> Result<EffectiveCurve> {
    Construction::new(g, env, beta, opts.clone())?.curve(thetas)
}

/// Maximal runs where the curve stays within `tol_flat` of a level and spans
/// more than two grid steps: `(theta_lo, theta_hi, level)`.
pub fn detect_flat_pieces(curve: &EffectiveCurve, tol_flat: f64) -> Vec<(f64, f64, f64)> {
    let pts = &curve.points;
    let mut out = Vec::new();
    if pts.len() < 2 {
        return out;
    }
    let step = (pts[pts.len() - 1].theta - pts[0].theta) / (pts.len() - 1) as f64;
    let mut i = 0;
    while i < pts.len() {
        let mut j = i;
        while j + 1 < pts.len() && (pts[j + 1].lambda - pts[i].lambda).abs() <= tol_flat {
            j += 1;
        }
        if pts[j].theta - pts[i].theta > 2.0 * step * (1.0 - 1e-9) {
            let level = pts[i..=j].iter().map(|p| p.lambda).sum::<f64>() / (j - i + 1) as f64;
            out.push((pts[i].theta, pts[j].theta, level));
        }
        i = j + 1;
    }
    out
}

/// Largest excess of an interior value over the larger of the minima on
/// either side; positive excess beyond a tolerance marks a strict interior
/// local maximum, i.e. a curve that is not quasiconvex. Returns `(excess, theta)`.
pub fn quasiconvexity_excess(curve: &EffectiveCurve) -> (f64, f64) {
    let l = curve.lambdas();
    let n = l.len();
    if n < 3 {
        return (f64::NEG_INFINITY, f64::NAN);
    }
    let mut prefix = vec![f64::INFINITY; n];
    let mut suffix = vec![f64::INFINITY; n];
    for i in 1..n {
        prefix[i] = prefix[i - 1].min(l[i - 1]);
        suffix[n - 1 - i] = suffix[n - i].min(l[n - i]);
    }
    (1..n - 1)
        .map(|i| (l[i] - prefix[i].max(suffix[i]), curve.points[i].theta))
        .fold((f64::NEG_INFINITY, f64::NAN), |a, b| if b.0 > a.0 { b } else { a })
}

pub fn theta_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![min];
    }
    (0..count).map(|k| min + (max - min) * k as f64 / (count - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_media::{sample_environment, MediumSpec};
    use approx::assert_abs_diff_eq;

    fn opts(w: f64) -> EhOptions {
        EhOptions { window: Window { half_width: w, burn_in: w / 2.0 }, ..EhOptions::default() }
    }

    #[test]
    fn zero_beta_returns_g() {
        let env = sample_environment(&MediumSpec::plateau(2.0, 0.5, 0.5, 1), 60.0, 0.01, 1).unwrap();
        let g = Nonlinearity::parabola();
        let curve = effective_hamiltonian(&g, &env, 0.0, &theta_grid(-2.0, 2.0, 9), &opts(20.0)).unwrap();
        for p in &curve.points {
            assert_abs_diff_eq!(p.lambda, p.theta * p.theta, epsilon = 1e-12);
            assert!(p.report.as_ref().unwrap().pass);
        }
    }

    #[test]
    fn control_medium_gives_max_of_g_and_beta() {
        // V = 0: branch solutions are constants, lambda = max(theta^2, beta).
        let env = sample_environment(&MediumSpec::constant(1.0, 0.0), 40.0, 0.01, 0).unwrap();
        let g = Nonlinearity::parabola();
        let curve = effective_hamiltonian(&g, &env, 1.0, &theta_grid(-2.0, 2.0, 9), &opts(10.0)).unwrap();
        for p in &curve.points {
            let expect = (p.theta * p.theta).max(1.0);
            assert!((p.lambda - expect).abs() < 1e-5, "theta={} lambda={} expect={}", p.theta, p.lambda, expect);
        }
    }

    #[test]
    fn frames_compose() {
        let a = Frame { sigma: -1.0, shift: 2.0, offset: 1.0 };
        let b = Frame { sigma: -1.0, shift: 0.5, offset: 0.25 };
        let c = a.compose(&b);
        for p in [-1.0, 0.0, 3.0] {
            assert_abs_diff_eq!(c.from_piece(p), a.from_piece(b.from_piece(p)), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(c.offset, 1.25);
    }
}
