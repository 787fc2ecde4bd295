//! Experiment configuration, seeded orchestration, cross-validation of the two
//! routes and artifact emission.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corrector::{Tolerances, Window};
use crate::effective_h::{theta_grid, Construction, EffectiveCurve, EhOptions};
use crate::env_media::{sample_environment, MediumSpec, SampledEnvironment};
use crate::error::{Error, Result};
use crate::nonlinearity::{Nonlinearity, NonlinearitySpec};
use crate::pde_reference::{gradient_box, solve_cauchy, PdeOptions, PdeRun};

/// Built-in nonlinearities, addressable by id in a config. `p2` is `G = p^2`.
pub const FIXTURES: &[(&str, &str)] = &[
    ("double_well", include_str!("../fixtures/double_well.json")),
    ("two_sided", include_str!("../fixtures/two_sided.json")),
    ("twin_peaks", include_str!("../fixtures/twin_peaks.json")),
    ("descending_wells", include_str!("../fixtures/descending_wells.json")),
];

pub fn fixture(id: &str) -> Result<Nonlinearity> {
    if id == "p2" {
        return Ok(Nonlinearity::parabola());
    }
    let text = FIXTURES
        .iter()
        .find(|(name, _)| *name == id)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("unknown nonlinearity fixture {id}")))?;
    let spec: NonlinearitySpec = serde_json::from_str(text)?;
    Nonlinearity::from_spec(&spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NonlinearityRef {
    Fixture(String),
    Inline(NonlinearitySpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvGrid {
    pub dx: f64,
    /// Sampled on `[-half_width, half_width]`; `None` sizes the domain to fit
    /// both the corrector window and the PDE domain of dependence.
    #[serde(default)]
    pub half_width: Option<f64>,
}

impl Default for EnvGrid {
    fn default() -> Self {
        EnvGrid { dx: 0.01, half_width: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub dx: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub snapshots: usize,
    #[serde(default)]
    pub observe_radius: f64,
}

fn default_xval_tol() -> f64 {
    2e-2
}
fn default_n_approx() -> usize {
    64
}
fn default_steepness() -> f64 {
    1.0
}
fn default_output() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub medium: MediumSpec,
    pub nonlinearity: NonlinearityRef,
    pub beta: f64,
    /// Read `beta` in units of `M - m`, the spread of the local extrema.
    #[serde(default)]
    pub beta_relative: bool,
    pub theta_grid: ThetaGrid,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub window: Window,
    #[serde(default)]
    pub env: EnvGrid,
    pub pde: PdeConfig,
    /// Cross-route threshold; the multi-seed spread may reach twice this.
    #[serde(default = "default_xval_tol")]
    pub xval_tol: f64,
    #[serde(default = "default_n_approx")]
    pub n_approx: usize,
    #[serde(default = "default_steepness")]
    pub bridge_steepness: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            medium: MediumSpec::plateau(2.0, 1.0, 0.1, 0),
            nonlinearity: NonlinearityRef::Fixture("p2".into()),
            beta: 1.0,
            beta_relative: false,
            theta_grid: ThetaGrid { min: -3.0, max: 3.0, count: 13 },
            tolerances: Tolerances::default(),
            window: Window { half_width: 400.0, burn_in: 200.0 },
            env: EnvGrid::default(),
            pde: PdeConfig { dx: 0.1, t_final: 128.0, snapshots: 6, observe_radius: 0.0 },
            xval_tol: default_xval_tol(),
            n_approx: default_n_approx(),
            bridge_steepness: default_steepness(),
            seeds: vec![42],
            output: default_output(),
        }
    }
}

/// Replaces the value at a dotted path; the path must already exist.
/// `raw` is read as JSON, falling back to a plain string.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let next = match cur {
            Value::Object(map) => map.get_mut(*key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
            _ => None,
        };
        cur = next.ok_or_else(|| Error::Config(format!("unknown parameter path {path} (at {})", keys[..=i].join("."))))?;
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for (path, raw) in overrides {
            apply_override(&mut doc, path, raw)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_grid.count < 2 || !(self.theta_grid.max > self.theta_grid.min) {
            return Err(Error::Config("theta_grid needs count >= 2 and max > min".into()));
        }
        let t = &self.tolerances;
        if ![t.tol_ode, t.tol_gap, t.tol_mean, t.tol_x, t.tol_flat, self.xval_tol].iter().all(|&v| v > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.window.half_width > 0.0 && self.window.burn_in >= 0.0) {
            return Err(Error::Config("window needs W > 0 and burn_in >= 0".into()));
        }
        if !(self.env.dx > 0.0 && self.pde.dx > 0.0 && self.pde.t_final > 0.0) {
            return Err(Error::Config("grid steps and T must be positive".into()));
        }
        self.medium.validate()
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        match &self.nonlinearity {
            NonlinearityRef::Fixture(id) => fixture(id),
            NonlinearityRef::Inline(spec) => Nonlinearity::from_spec(spec),
        }
    }

    pub fn thetas(&self) -> Vec<f64> {
        theta_grid(self.theta_grid.min, self.theta_grid.max, self.theta_grid.count)
    }

    pub fn eh_options(&self) -> EhOptions {
        EhOptions {
            tol: self.tolerances,
            window: self.window,
            n_approx: self.n_approx,
            bridge_steepness: self.bridge_steepness,
            ..EhOptions::default()
        }
    }

    pub fn pde_options(&self) -> PdeOptions {
        PdeOptions {
            dx: self.pde.dx,
            t_final: self.pde.t_final,
            snapshots: self.pde.snapshots,
            observe_radius: self.pde.observe_radius,
            ..PdeOptions::default()
        }
    }

    /// Nonlinearity, absolute beta and environment half-width.
    pub fn prepare(&self) -> Result<Prepared> {
        let g = self.nonlinearity()?;
        let beta = if self.beta_relative {
            let (m_big, m_small) = g
                .normalize()
                .0
                .max_min_levels()
                .ok_or_else(|| Error::Config("beta_relative needs a nonlinearity with local extrema".into()))?;
            self.beta * (m_big - m_small)
        } else {
            self.beta
        };
        let half_width = match self.env.half_width {
            Some(h) => h,
            None => {
                let w = self.window.half_width + self.window.burn_in + 10.0 * self.env.dx;
                let mut lip: f64 = 0.0;
                for th in self.thetas() {
                    lip = lip.max(gradient_box(&g, beta, th, PdeOptions::default().box_pad)?.1);
                }
                let t = self.pde.t_final;
                let pde = lip * t + 6.0 * t.sqrt() + self.pde.observe_radius + 10.0;
                w.max(pde).ceil()
            }
        };
        Ok(Prepared { g, beta, half_width })
    }

    pub fn sample(&self, prep: &Prepared, seed: u64) -> Result<SampledEnvironment> {
        let mut spec = self.medium.clone();
        spec.seed = seed;
        sample_environment(&spec, prep.half_width, self.env.dx, seed)
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub g: Nonlinearity,
    pub beta: f64,
    pub half_width: f64,
}

/// Tags an error with the `(seed, theta)` task it came from.
pub fn at(e: Error, seed: u64, theta: Option<f64>) -> Error {
    let tag = match theta {
        Some(t) => format!("[seed {seed}, theta {t}] "),
        None => format!("[seed {seed}] "),
    };
    match e {
        Error::Config(m) => Error::Config(tag + &m),
        Error::Class(m) => Error::Class(tag + &m),
        Error::Resolution(m) => Error::Resolution(tag + &m),
        Error::Domain(m) => Error::Domain(tag + &m),
        Error::Search(m) => Error::Search(tag + &m),
        Error::Numerical(m) => Error::Numerical(tag + &m),
        other => other,
    }
}

fn curve_on(cfg: &ExperimentConfig, prep: &Prepared, env: &SampledEnvironment) -> Result<EffectiveCurve> {
    Construction::new(&prep.g, env, prep.beta, cfg.eh_options())
        .and_then(|c| c.curve(&cfg.thetas()))
        .map_err(|e| at(e, env.seed, None))
}

pub fn run_effective_h(cfg: &ExperimentConfig, seed: u64) -> Result<EffectiveCurve> {
    let prep = cfg.prepare()?;
    let env = cfg.sample(&prep, seed)?;
    curve_on(cfg, &prep, &env)
}

/// Corrector curves for every seed, in seed order.
pub fn run_curves(cfg: &ExperimentConfig) -> Result<Vec<EffectiveCurve>> {
    let prep = cfg.prepare()?;
    cfg.seeds
        .iter()
        .map(|&s| {
            let env = cfg.sample(&prep, s)?;
            curve_on(cfg, &prep, &env)
        })
        .collect()
}

pub fn run_pde(cfg: &ExperimentConfig, seed: u64, theta: f64) -> Result<PdeRun> {
    let prep = cfg.prepare()?;
    let env = cfg.sample(&prep, seed)?;
    let c = Construction::new(&prep.g, &env, prep.beta, cfg.eh_options())?;
    solve_cauchy(&env, c.full(), prep.beta, theta, &cfg.pde_options()).map_err(|e| at(e, seed, Some(theta)))
}

/// Largest range of `lambda(theta)` across seeds, over the common grid.
pub fn seed_spread(curves: &[EffectiveCurve]) -> f64 {
    let Some(first) = curves.first() else { return 0.0 };
    (0..first.points.len())
        .map(|k| {
            let vals = curves.iter().map(|c| c.points[k].lambda);
            let hi = vals.clone().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

pub fn curves_csv(curves: &[EffectiveCurve]) -> String {
    let mut s = String::from("seed,theta,lambda,provenance,path,cert_pass,cert_gap,cert_residual\n");
    for c in curves {
        for p in &c.points {
            let (gap, res) = p
                .certificate
                .as_ref()
                .map(|c| (c.gap_inf, c.residual_lower.max(c.residual_upper)))
                .unwrap_or((f64::NAN, f64::NAN));
            let pass = p.report.as_ref().map(|r| r.pass).unwrap_or(false);
            s.push_str(&format!("{},{},{},{},{},{},{},{}\n", c.seed, p.theta, p.lambda, p.provenance, p.path, pass, gap, res));
        }
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XvalRow {
    pub seed: u64,
    pub theta: f64,
    pub lambda: f64,
    pub provenance: String,
    pub cert_pass: bool,
    pub h_l: f64,
    pub h_u: f64,
    pub richardson: f64,
    /// Distance from `lambda` to `[H_L, H_U]`.
    pub discrepancy: f64,
    pub richardson_gap: f64,
    pub inconclusive: bool,
    pub gradient_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XvalReport {
    pub rows: Vec<XvalRow>,
    #[serde(skip)]
    pub curves: Vec<EffectiveCurve>,
    pub sup_discrepancy: f64,
    pub worst_theta: f64,
    pub spread: f64,
    pub threshold: f64,
    pub failed_certificates: usize,
    pub pass: bool,
}

impl XvalReport {
    pub fn csv(&self) -> String {
        let mut s =
            String::from("seed,theta,lambda,provenance,cert_pass,H_L,H_U,richardson,discrepancy,richardson_gap,inconclusive,gradient_ok\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.seed,
                r.theta,
                r.lambda,
                r.provenance,
                r.cert_pass,
                r.h_l,
                r.h_u,
                r.richardson,
                r.discrepancy,
                r.richardson_gap,
                r.inconclusive,
                r.gradient_ok
            ));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            2
        }
    }
}

/// Corrector route against the PDE route at every `(seed, theta)`.
/// Passes when the sup-discrepancy is within `xval_tol` and the multi-seed
/// spread within twice that.
pub fn run_crossval(cfg: &ExperimentConfig) -> Result<XvalReport> {
    let prep = cfg.prepare()?;
    let thetas = cfg.thetas();
    let popts = cfg.pde_options();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let env = cfg.sample(&prep, seed)?;
        let c = Construction::new(&prep.g, &env, prep.beta, cfg.eh_options()).map_err(|e| at(e, seed, None))?;
        let curve = c.curve(&thetas).map_err(|e| at(e, seed, None))?;
        let runs: Result<Vec<PdeRun>> = thetas
            .par_iter()
            .map(|&th| solve_cauchy(&env, c.full(), prep.beta, th, &popts).map_err(|e| at(e, seed, Some(th))))
            .collect();
        for (p, run) in curve.points.iter().zip(runs?) {
            let discrepancy = (run.h_l - p.lambda).max(p.lambda - run.h_u).max(0.0);
            rows.push(XvalRow {
                seed,
                theta: p.theta,
                lambda: p.lambda,
                provenance: p.provenance.to_string(),
                cert_pass: p.report.as_ref().map(|r| r.pass).unwrap_or(false),
                h_l: run.h_l,
                h_u: run.h_u,
                richardson: run.richardson,
                discrepancy,
                richardson_gap: (p.lambda - run.richardson).abs(),
                inconclusive: run.inconclusive,
                gradient_ok: run.gradient_within_box(1e-3),
            });
        }
        curves.push(curve);
    }
    let (sup, worst_theta) = rows.iter().fold((0.0, f64::NAN), |acc, r| if r.discrepancy > acc.0 { (r.discrepancy, r.theta) } else { acc });
    let spread = seed_spread(&curves);
    let failed_certificates = rows.iter().filter(|r| !r.cert_pass).count();
    let pass = sup <= cfg.xval_tol && spread <= 2.0 * cfg.xval_tol;
    Ok(XvalReport { rows, curves, sup_discrepancy: sup, worst_theta, spread, threshold: cfg.xval_tol, failed_certificates, pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub theta: f64,
    pub lambda: f64,
    pub provenance: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub path: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn csv(&self) -> String {
        let mut s = format!("{},seed,theta,lambda,provenance\n", self.path);
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.value, r.seed, r.theta, r.lambda, r.provenance));
        }
        s
    }

    /// Largest range of lambda across seeds at one `(value, theta)`.
    pub fn spread(&self) -> f64 {
        let mut keys: Vec<(&str, u64)> = self.rows.iter().map(|r| (r.value.as_str(), r.theta.to_bits())).collect();
        keys.sort();
        keys.dedup();
        keys.iter()
            .map(|&(v, t)| {
                let vals = self.rows.iter().filter(|r| r.value == v && r.theta.to_bits() == t).map(|r| r.lambda);
                vals.clone().fold(f64::NEG_INFINITY, f64::max) - vals.fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

/// Cartesian sweep of one parameter over `values`, sharing the seed list.
/// The path `seed` runs each value as a single seed.
pub fn run_sweep(cfg: &ExperimentConfig, path: &str, values: &[String]) -> Result<SweepTable> {
    if path != "seed" {
        apply_override(&mut serde_json::to_value(cfg)?, path, "null")?;
    }
    let mut rows = Vec::new();
    for value in values {
        let variant = if path == "seed" {
            cfg.with_overrides(&[("seeds".into(), format!("[{value}]"))])?
        } else {
            cfg.with_overrides(&[(path.to_string(), value.clone())])?
        };
        for curve in run_curves(&variant)? {
            for p in &curve.points {
                rows.push(SweepRow { value: value.clone(), seed: curve.seed, theta: p.theta, lambda: p.lambda, provenance: p.provenance.to_string() });
            }
        }
    }
    Ok(SweepTable { path: path.to_string(), rows })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub nonlinearity_sha256: String,
    pub seeds: Vec<u64>,
    pub thetas: Vec<f64>,
    pub files: Vec<ManifestFile>,
}

/// Writes `files` under `dir` together with `manifest.json`.
pub fn write_artifacts(dir: &Path, command: &str, cfg: &ExperimentConfig, files: &[(String, String)]) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut listed = Vec::new();
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
        let rows = if name.ends_with(".csv") { body.lines().count().saturating_sub(1) } else { 0 };
        listed.push(ManifestFile { name: name.clone(), sha256: sha256_hex(body.as_bytes()), rows });
    }
    listed.sort_by(|a, b| a.name.cmp(&b.name));
    let g_json = serde_json::to_string(&cfg.nonlinearity()?.to_spec())?;
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: cfg.clone(),
        config_sha256: sha256_hex(cfg.to_json().as_bytes()),
        nonlinearity_sha256: sha256_hex(g_json.as_bytes()),
        seeds: cfg.seeds.clone(),
        thetas: cfg.thetas(),
        files: listed,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
