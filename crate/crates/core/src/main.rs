use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use homog::corrector::{verify_certificate, Corrector, CorrectorCertificate};
use homog::effective_h::{detect_flat_pieces, Construction};
use homog::harness::{curves_csv, run_crossval, run_curves, run_pde, run_sweep, seed_spread, write_artifacts, ExperimentConfig};
use homog::props::{reports_csv, suite_scheme, suite_solutions, SuiteSizes};
use homog::{Error, Result};

#[derive(Parser)]
#[command(name = "homog", version, about = "Effective Hamiltonians of viscous Hamilton-Jacobi equations in random media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides such as `--pde.dx 0.005` or `--beta=0.5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the environment of one seed.
    SampleEnv {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Extremal corrector solutions and certificate at one theta.
    Corrector {
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Effective Hamiltonian on the theta grid for every seed.
    EffectiveH {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference Cauchy solve at one theta.
    Pde {
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate the corrector route against the PDE route.
    Xval {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one dotted parameter path over comma-separated values.
    Sweep {
        #[arg(long)]
        vary: String,
        #[arg(long, allow_hyphen_values = true, default_value = "")]
        values: String,
        #[command(flatten)]
        common: Common,
    },
    /// Randomized property suites.
    Props {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").ok_or_else(|| Error::Config(format!("expected --path, got {arg}")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("missing value for --{key}")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(p) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    base.with_overrides(&parse_overrides(&common.overrides)?)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::SampleEnv { seed, common } => {
            let cfg = load(&common)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let prep = cfg.prepare()?;
            let env = cfg.sample(&prep, seed)?;
            write_artifacts(cfg.output.as_ref(), "sample-env", &cfg, &[(format!("env_seed{seed}.csv"), env.to_csv())])?;
            Ok(0)
        }
        Command::Corrector { theta, seed, common } => {
            let cfg = load(&common)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let prep = cfg.prepare()?;
            let env = cfg.sample(&prep, seed)?;
            let c = Construction::new(&prep.g, &env, prep.beta, cfg.eh_options())?;
            let (lower, upper, lambda) = c.certificate_pair(theta)?;
            let corr = Corrector::new(&env, c.full(), prep.beta, cfg.window)?;
            let files = vec![
                (format!("lower_seed{seed}.csv"), lower.to_csv(&env, c.full())),
                (format!("upper_seed{seed}.csv"), upper.to_csv(&env, c.full())),
            ];
            let cert = CorrectorCertificate::new(theta, lambda, lower, upper);
            let report = verify_certificate(&cert, &cfg.tolerances, Some(&corr));
            let json = serde_json::json!({ "certificate": cert.compact(), "report": report });
            let mut files = files;
            files.push((format!("certificate_seed{seed}.json"), serde_json::to_string_pretty(&json)?));
            write_artifacts(cfg.output.as_ref(), "corrector", &cfg, &files)?;
            Ok(if report.pass { 0 } else { 2 })
        }
        Command::EffectiveH { common } => {
            let cfg = load(&common)?;
            let curves = run_curves(&cfg)?;
            let flats: Vec<_> = curves.iter().map(|c| (c.seed, detect_flat_pieces(c, cfg.tolerances.tol_flat))).collect();
            let summary = serde_json::json!({ "flat_pieces": flats, "seed_spread": seed_spread(&curves) });
            write_artifacts(
                cfg.output.as_ref(),
                "effective-h",
                &cfg,
                &[("curves.csv".into(), curves_csv(&curves)), ("summary.json".into(), serde_json::to_string_pretty(&summary)?)],
            )?;
            Ok(0)
        }
        Command::Pde { theta, seed, common } => {
            let cfg = load(&common)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let run = run_pde(&cfg, seed, theta)?;
            write_artifacts(
                cfg.output.as_ref(),
                "pde",
                &cfg,
                &[(format!("series_seed{seed}.csv"), run.series_csv()), (format!("pde_seed{seed}.json"), run.summary_json())],
            )?;
            Ok(if run.inconclusive { 2 } else { 0 })
        }
        Command::Xval { common } => {
            let cfg = load(&common)?;
            let report = run_crossval(&cfg)?;
            write_artifacts(
                cfg.output.as_ref(),
                "xval",
                &cfg,
                &[
                    ("xval.csv".into(), report.csv()),
                    ("curves.csv".into(), curves_csv(&report.curves)),
                    ("summary.json".into(), report.summary_json()),
                ],
            )?;
            println!(
                "sup discrepancy {:.3e} at theta {} (threshold {:.1e}), seed spread {:.3e}: {}",
                report.sup_discrepancy,
                report.worst_theta,
                report.threshold,
                report.spread,
                if report.pass { "pass" } else { "FAIL" }
            );
            Ok(report.exit_code())
        }
        Command::Sweep { vary, values, common } => {
            let cfg = load(&common)?;
            let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            let table = run_sweep(&cfg, &vary, &values)?;
            write_artifacts(cfg.output.as_ref(), "sweep", &cfg, &[("sweep.csv".into(), table.csv())])?;
            Ok(0)
        }
        Command::Props { common } => {
            let cfg = load(&common)?;
            let sizes = SuiteSizes::default();
            let mut reports = suite_solutions(&cfg, &sizes)?;
            reports.extend(suite_scheme(&cfg, &sizes)?);
            for r in &reports {
                println!("{:14} {:4} trials {:3} violations worst {:.3e} bound {:.1e}", r.name, r.trials, r.violations, r.worst, r.bound);
            }
            write_artifacts(cfg.output.as_ref(), "props", &cfg, &[("props.csv".into(), reports_csv(&reports))])?;
            Ok(if reports.iter().all(|r| r.pass) { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("HJH_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // Ignored when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
