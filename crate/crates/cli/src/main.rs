use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turnpike_cli::config::FitParams;
use turnpike_cli::experiments::{fit_file, fit_kv_path, threads_from_env};
use turnpike_cli::{emit_builtin_configs, run, ExperimentConfig, RunError};

/// All bound checks passed.
const EXIT_PASS: u8 = 0;
/// The run finished but a bound check failed.
const EXIT_CHECK_FAILED: u8 = 1;
/// Bad config, arguments or environment.
const EXIT_USAGE: u8 = 2;
/// Simulation blow-up, I/O or malformed input data.
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "turnpike",
    version,
    about = "Turnpike experiments for controlled Cucker-Smale dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the four reference configs.
    InitConfigs {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit an exponential rate to a series CSV.
    Fit {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        t_lo: f64,
        #[arg(long, allow_negative_numbers = true)]
        t_hi: f64,
        /// Column to fit; defaults to the first column after `t`.
        #[arg(long)]
        column: Option<String>,
        /// Samples at or below this value are skipped; defaults to 1e-12 times the first value.
        #[arg(long)]
        floor: Option<f64>,
        /// Envelope amplitude `C` in `E(t) <= C exp(-alpha t) E(0)`.
        #[arg(long, requires = "bound_alpha")]
        bound_c: Option<f64>,
        #[arg(long, requires = "bound_c")]
        bound_alpha: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Directory for `<series>.fit.kv`; defaults to the series directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn exit_for(err: &RunError) -> u8 {
    match err {
        RunError::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn verdict(passed: bool) -> ExitCode {
    ExitCode::from(if passed { EXIT_PASS } else { EXIT_CHECK_FAILED })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out_dir, seed } => {
            let text = match fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_USAGE, format!("cannot read {}: {e}", config.display())),
            };
            let mut cfg: ExperimentConfig = match text.parse() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", config.display())),
            };
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.defaults_used.retain(|d| !d.starts_with("seed ="));
            }
            let threads = match threads_from_env() {
                Ok(n) => n,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            match run(&cfg, threads) {
                Ok(out) => {
                    print!("{}", out.report);
                    verdict(out.passed())
                }
                Err(e) => fail(exit_for(&e), e),
            }
        }
        Command::InitConfigs { out_dir } => match emit_builtin_configs(&out_dir) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::from(EXIT_PASS)
            }
            Err(e) => fail(exit_for(&e), e),
        },
        Command::Fit {
            series,
            t_lo,
            t_hi,
            column,
            floor,
            bound_c,
            bound_alpha,
            tol,
            out_dir,
        } => {
            if t_hi.is_nan() || t_lo.is_nan() || t_hi <= t_lo {
                return fail(EXIT_USAGE, "--t-hi must exceed --t-lo");
            }
            let params = FitParams {
                series,
                column,
                window: (t_lo, t_hi),
                floor,
                bound: bound_c.zip(bound_alpha),
                tol,
            };
            let (column, fit, checks) = match fit_file(&params) {
                Ok(r) => r,
                Err(e) => return fail(exit_for(&e), e),
            };
            let kv = fit.to_key_values();
            let path = fit_kv_path(&params.series, out_dir.as_deref());
            if let Some(dir) = out_dir.as_deref() {
                if let Err(e) = fs::create_dir_all(dir) {
                    return fail(EXIT_RUNTIME, format!("cannot create {}: {e}", dir.display()));
                }
            }
            if let Err(e) = fs::write(&path, &kv) {
                return fail(EXIT_RUNTIME, format!("cannot write {}: {e}", path.display()));
            }
            println!("series = {}", params.series.display());
            println!("column = {column}");
            print!("{kv}");
            for c in &checks {
                println!("{}  {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            verdict(checks.iter().all(|c| c.passed))
        }
    }
}
