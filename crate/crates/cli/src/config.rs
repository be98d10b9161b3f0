//! Flat `section.key = value` experiment configs.
//!
//! Every key is checked against the table for the chosen experiment before
//! anything runs, so a misspelled key is always a hard error.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;
use turnpike_core::hydro::euler::{EulerConfig, EulerInitial};
use turnpike_core::hydro::pressureless::{PlessConfig, PlessInitial};
use turnpike_core::hydro::Q2Form;
use turnpike_core::meanfield::StudyConfig;
use turnpike_core::KernelSpec64;

pub const DEFAULT_SEED: u64 = 20240607;
pub const DEFAULT_OUTPUT_DIR: &str = "turnpike-out";

#[derive(Debug, Error, PartialEq)]
#[error("config error at `{key}`{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub msg: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Particle,
    Pless,
    Euler,
    Convergence,
    Fit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Particle => "particle",
            Self::Pless => "pless",
            Self::Euler => "euler",
            Self::Convergence => "convergence",
            Self::Fit => "fit",
        }
    }

    /// Keys accepted besides the top-level ones.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Self::Particle => &[
                "kernel.c_psi",
                "kernel.gamma",
                "particle.n",
                "particle.d",
                "particle.dt",
                "particle.t_end",
                "particle.lambda",
                "particle.beta",
                "particle.v_bar",
                "particle.sigma",
                "particle.seed",
                "particle.mean_x",
                "particle.mean_v",
                "particle.snapshot_every",
                "fit.t_lo",
                "fit.t_hi",
            ],
            Self::Convergence => &[
                "kernel.c_psi",
                "kernel.gamma",
                "meanfield.n_list",
                "meanfield.d",
                "meanfield.dt",
                "meanfield.t_end",
                "meanfield.lambda",
                "meanfield.v_bar",
                "meanfield.sigma",
                "meanfield.seed",
                "meanfield.mean_x",
                "meanfield.mean_v",
                "meanfield.tol",
            ],
            Self::Pless => &[
                "kernel.c_psi",
                "kernel.gamma",
                "pless.x_min",
                "pless.x_max",
                "pless.m_cells",
                "pless.cfl",
                "pless.source_cfl",
                "pless.beta",
                "pless.v_bar",
                "pless.lambda",
                "pless.t_end",
                "pless.rho_floor",
                "pless.initial",
                "pless.rho0",
                "pless.u0",
                "pless.snapshot_times",
                "fit.t_lo",
                "fit.t_hi",
            ],
            Self::Euler => &[
                "kernel.c_psi",
                "kernel.gamma",
                "euler.x_min",
                "euler.x_max",
                "euler.m_cells",
                "euler.cfl",
                "euler.source_cfl",
                "euler.beta",
                "euler.v_bar",
                "euler.lambda",
                "euler.t_end",
                "euler.rho_floor",
                "euler.e_floor",
                "euler.initial",
                "euler.rho0",
                "euler.u0",
                "euler.p0",
                "euler.q2_form",
                "euler.snapshot_times",
                "fit.t_lo",
                "fit.t_hi",
            ],
            Self::Fit => &[
                "fit.series",
                "fit.column",
                "fit.t_lo",
                "fit.t_hi",
                "fit.floor",
                "fit.bound_c",
                "fit.bound_alpha",
                "fit.tol",
            ],
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "particle" => Ok(Self::Particle),
            "pless" => Ok(Self::Pless),
            "euler" => Ok(Self::Euler),
            "convergence" => Ok(Self::Convergence),
            "fit" => Ok(Self::Fit),
            other => Err(format!(
                "unknown experiment `{other}` (expected particle, pless, euler, convergence or fit)"
            )),
        }
    }
}

const TOP_LEVEL: [&str; 3] = ["experiment", "seed", "output_dir"];

/// Ordered `key -> (value, line)` map produced by the line parser.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::new(line, Some(line_no), "expected `key = value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            let well_formed = !key.is_empty()
                && key.split('.').count() <= 2
                && key
                    .split('.')
                    .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !well_formed {
                return Err(ConfigError::new(key, Some(line_no), "malformed key"));
            }
            if value.is_empty() {
                return Err(ConfigError::new(key, Some(line_no), "missing value"));
            }
            if let Some((_, first)) = entries.insert(key.to_string(), (value.to_string(), line_no)) {
                return Err(ConfigError::new(
                    key,
                    Some(line_no),
                    format!("duplicate key, first set on line {first}"),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|&(_, l)| l)
    }
}

/// Typed reader that records every default it falls back on.
struct Reader<'a> {
    raw: &'a RawConfig,
    defaults: Vec<String>,
}

impl<'a> Reader<'a> {
    fn parse_with<V, E: Display>(
        &self,
        key: &str,
        f: impl FnOnce(&str) -> Result<V, E>,
    ) -> Result<Option<V>, ConfigError> {
        match self.raw.get(key) {
            None => Ok(None),
            Some(s) => f(s)
                .map(Some)
                .map_err(|e| ConfigError::new(key, self.raw.line(key), e.to_string())),
        }
    }

    fn or_default<V: Display>(&mut self, key: &str, found: Option<V>, default: V) -> V {
        match found {
            Some(v) => v,
            None => {
                self.defaults.push(format!("{key} = {default}"));
                default
            }
        }
    }

    fn real(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.parse_with(key, parse_real)?;
        Ok(self.or_default(key, v, default))
    }

    fn count(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = self.parse_with(key, |s| s.parse::<usize>())?;
        Ok(self.or_default(key, v, default))
    }

    fn text(&mut self, key: &str, default: &str) -> String {
        let v = self.raw.get(key).map(str::to_string);
        self.or_default(key, v, default.to_string())
    }

    /// Comma-separated vector; a single entry is broadcast to `d` components.
    fn vector(&mut self, key: &str, d: usize, default: f64) -> Result<Vec<f64>, ConfigError> {
        let Some(s) = self.raw.get(key) else {
            self.defaults.push(format!("{key} = {default}"));
            return Ok(vec![default; d]);
        };
        let err = |msg: String| ConfigError::new(key, self.raw.line(key), msg);
        let vals = parse_list(s, parse_real).map_err(err)?;
        match vals.len() {
            1 => Ok(vec![vals[0]; d]),
            n if n == d => Ok(vals),
            n => Err(err(format!("expected 1 or {d} entries, got {n}"))),
        }
    }

    fn require<V>(&self, key: &str, v: Option<V>) -> Result<V, ConfigError> {
        v.ok_or_else(|| ConfigError::new(key, None, "required key is missing"))
    }

    fn check(&self, key: &str, ok: bool, msg: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(ConfigError::new(key, self.raw.line(key), msg))
        }
    }
}

fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_list<V>(s: &str, f: impl Fn(&str) -> Result<V, String>) -> Result<Vec<V>, String> {
    s.split(',').map(|p| f(p.trim())).collect()
}

/// Particle experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleParams {
    pub n: usize,
    pub d: usize,
    pub dt: f64,
    pub t_end: f64,
    pub lambda: f64,
    pub beta: f64,
    pub v_bar: Vec<f64>,
    pub sigma: f64,
    pub mean_x: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceParams {
    pub n_list: Vec<usize>,
    pub study: StudyConfig<f64>,
}

/// Fit of an existing series file.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub series: PathBuf,
    /// Column name; `None` picks the first column after `t`.
    pub column: Option<String>,
    pub window: (f64, f64),
    /// Absolute floor; `None` means `1e-12` times the first value.
    pub floor: Option<f64>,
    pub bound: Option<(f64, f64)>,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Particle(ParticleParams),
    Pless(PlessConfig<f64>),
    Euler(EulerConfig<f64>),
    Convergence(ConvergenceParams),
    Fit(FitParams),
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Self::Particle(_) => ExperimentKind::Particle,
            Self::Pless(_) => ExperimentKind::Pless,
            Self::Euler(_) => ExperimentKind::Euler,
            Self::Convergence(_) => ExperimentKind::Convergence,
            Self::Fit(_) => ExperimentKind::Fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub kernel: KernelSpec64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Decay-fit window for simulation experiments.
    pub fit_window: (f64, f64),
    /// `key = value` for every parameter that was not set explicitly.
    pub defaults_used: Vec<String>,
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let kind: ExperimentKind = match raw.get("experiment") {
            Some(s) => s
                .parse()
                .map_err(|e: String| ConfigError::new("experiment", raw.line("experiment"), e))?,
            None => return Err(ConfigError::new("experiment", None, "required key is missing")),
        };
        let allowed = kind.keys();
        for (key, (_, line)) in &raw.entries {
            if !TOP_LEVEL.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
                return Err(ConfigError::new(
                    key.as_str(),
                    Some(*line),
                    format!("unknown key for experiment `{}`", kind.name()),
                ));
            }
        }

        let mut r = Reader {
            raw,
            defaults: Vec::new(),
        };
        let top_seed = r.parse_with("seed", |s| s.parse::<u64>())?;
        let output_dir = PathBuf::from(r.text("output_dir", DEFAULT_OUTPUT_DIR));

        let kernel = if kind == ExperimentKind::Fit {
            KernelSpec64::reference()
        } else {
            let c_psi = r.real("kernel.c_psi", 1.0)?;
            let gamma = r.real("kernel.gamma", 1.0)?;
            KernelSpec64::new(c_psi, gamma).map_err(|e| ConfigError::new("kernel", None, e.to_string()))?
        };

        let (experiment, section_seed, horizon, window_frac) = match kind {
            ExperimentKind::Particle => {
                let p = read_particle(&mut r)?;
                let seed = r.parse_with("particle.seed", |s| s.parse::<u64>())?;
                let t = p.t_end;
                (Experiment::Particle(p), seed, t, (0.25, 0.75))
            }
            ExperimentKind::Convergence => {
                let c = read_convergence(&mut r)?;
                let seed = r.parse_with("meanfield.seed", |s| s.parse::<u64>())?;
                let t = c.study.t_end;
                (Experiment::Convergence(c), seed, t, (0.0, 1.0))
            }
            ExperimentKind::Pless => {
                let c = read_pless(&mut r)?;
                let t = c.t_end;
                (Experiment::Pless(c), None, t, (0.125, 0.5))
            }
            ExperimentKind::Euler => {
                let c = read_euler(&mut r)?;
                let t = c.t_end;
                (Experiment::Euler(c), None, t, (0.125, 0.5))
            }
            ExperimentKind::Fit => {
                let f = read_fit(&mut r)?;
                let w = f.window;
                (Experiment::Fit(f), None, 0.0, (w.0, w.1))
            }
        };

        let fit_window = if kind == ExperimentKind::Fit {
            window_frac
        } else if kind == ExperimentKind::Convergence {
            (0.0, horizon)
        } else {
            let lo = r.real("fit.t_lo", window_frac.0 * horizon)?;
            let hi = r.real("fit.t_hi", window_frac.1 * horizon)?;
            r.check(
                "fit.t_hi",
                hi > lo && lo >= 0.0 && hi <= horizon,
                "fit window must satisfy 0 <= t_lo < t_hi <= t_end",
            )?;
            (lo, hi)
        };

        let seed = match section_seed.or(top_seed) {
            Some(s) => s,
            None => r.or_default("seed", None, DEFAULT_SEED),
        };

        Ok(Self {
            experiment,
            kernel,
            seed,
            output_dir,
            fit_window,
            defaults_used: r.defaults,
        })
    }
}

fn read_particle(r: &mut Reader) -> Result<ParticleParams, ConfigError> {
    let n = r.count("particle.n", 30)?;
    r.check("particle.n", n >= 1, "must be at least 1")?;
    let d = r.count("particle.d", 1)?;
    r.check("particle.d", d >= 1, "must be at least 1")?;
    let dt = r.real("particle.dt", 1e-3)?;
    r.check("particle.dt", dt > 0.0, "must be positive")?;
    let t_end = r.real("particle.t_end", 4.0)?;
    r.check("particle.t_end", t_end > 0.0, "must be positive")?;
    let steps = t_end / dt;
    r.check(
        "particle.dt",
        (steps - steps.round()).abs() <= 1e-6 * steps.max(1.0),
        "must divide t_end",
    )?;
    let lambda = r.real("particle.lambda", 0.25)?;
    r.check("particle.lambda", lambda > 0.0, "must be positive")?;
    let beta = match r.raw.get("particle.beta") {
        Some("cheap") => 1.0 / lambda.sqrt(),
        _ => r.real("particle.beta", 2.0)?,
    };
    r.check("particle.beta", beta > 0.0, "must be positive or `cheap`")?;
    let v_bar = r.vector("particle.v_bar", d, 0.5)?;
    let sigma = r.real("particle.sigma", 1.0)?;
    r.check("particle.sigma", sigma >= 0.0, "must be nonnegative")?;
    let mean_x = r.vector("particle.mean_x", d, 1.0)?;
    let mean_v = r.vector("particle.mean_v", d, 0.0)?;
    let snapshot_every = r.count("particle.snapshot_every", 100)?;
    r.check("particle.snapshot_every", snapshot_every >= 1, "must be at least 1")?;
    Ok(ParticleParams {
        n,
        d,
        dt,
        t_end,
        lambda,
        beta,
        v_bar,
        sigma,
        mean_x,
        mean_v,
        snapshot_every,
    })
}

fn read_convergence(r: &mut Reader) -> Result<ConvergenceParams, ConfigError> {
    let n_list = match r.parse_with("meanfield.n_list", |s| {
        parse_list(s, |p| p.parse::<usize>().map_err(|_| format!("`{p}` is not a count")))
    })? {
        Some(v) => v,
        None => {
            r.defaults.push("meanfield.n_list = 100, 1000, 10000".into());
            vec![100, 1000, 10_000]
        }
    };
    r.check(
        "meanfield.n_list",
        n_list.len() >= 2 && n_list[0] >= 1 && n_list.windows(2).all(|w| w[1] > w[0]),
        "needs at least two strictly increasing positive counts",
    )?;
    let d = r.count("meanfield.d", 1)?;
    r.check("meanfield.d", d >= 1, "must be at least 1")?;
    let dt = r.real("meanfield.dt", 0.05)?;
    r.check("meanfield.dt", dt > 0.0, "must be positive")?;
    let t_end = r.real("meanfield.t_end", 2.0)?;
    r.check("meanfield.t_end", t_end > 0.0, "must be positive")?;
    let lambda = r.real("meanfield.lambda", 1.0)?;
    r.check("meanfield.lambda", lambda > 0.0, "must be positive")?;
    let v_bar = r.vector("meanfield.v_bar", d, 0.5)?;
    let sigma = r.real("meanfield.sigma", 1.0)?;
    r.check("meanfield.sigma", sigma >= 0.0, "must be nonnegative")?;
    let mean_x = r.vector("meanfield.mean_x", d, 1.0)?;
    let mean_v = r.vector("meanfield.mean_v", d, 0.0)?;
    let tol = r.real("meanfield.tol", 1e-3)?;
    r.check("meanfield.tol", tol >= 0.0, "must be nonnegative")?;
    Ok(ConvergenceParams {
        n_list,
        study: StudyConfig {
            d,
            dt,
            t_end,
            lambda,
            sigma,
            mean_x,
            mean_v,
            v_bar,
            tol,
        },
    })
}

/// Grid, solver and feedback keys shared by both hydrodynamic experiments.
struct HydroCommon {
    x_min: f64,
    x_max: f64,
    m_cells: usize,
    cfl: f64,
    source_cfl: f64,
    rho_floor: f64,
    beta: f64,
    lambda: f64,
    t_end: f64,
    snapshot_times: Vec<f64>,
}

fn read_hydro_common(r: &mut Reader, s: &str, default_t_end: f64) -> Result<HydroCommon, ConfigError> {
    let key = |k: &str| format!("{s}.{k}");
    let x_min = r.real(&key("x_min"), -5.0)?;
    let x_max = r.real(&key("x_max"), 5.0)?;
    r.check(&key("x_max"), x_max > x_min, "must exceed x_min")?;
    let m_cells = r.count(&key("m_cells"), 200)?;
    r.check(&key("m_cells"), m_cells >= 2, "must be at least 2")?;
    let cfl = r.real(&key("cfl"), 0.4)?;
    r.check(&key("cfl"), cfl > 0.0 && cfl <= 1.0, "must lie in (0, 1]")?;
    let source_cfl = r.real(&key("source_cfl"), 0.1)?;
    r.check(
        &key("source_cfl"),
        source_cfl > 0.0 && source_cfl <= 1.0,
        "must lie in (0, 1]",
    )?;
    let rho_floor = r.real(&key("rho_floor"), 1e-12)?;
    r.check(&key("rho_floor"), rho_floor >= 0.0, "must be nonnegative")?;
    let lambda = r.real(&key("lambda"), 1.0)?;
    r.check(&key("lambda"), lambda > 0.0, "must be positive")?;
    let beta = match r.raw.get(&key("beta")) {
        Some("cheap") => 1.0 / lambda.sqrt(),
        _ => r.real(&key("beta"), 2.0)?,
    };
    r.check(&key("beta"), beta > 0.0, "must be positive or `cheap`")?;
    let t_end = r.real(&key("t_end"), default_t_end)?;
    r.check(&key("t_end"), t_end > 0.0, "must be positive")?;
    let k = key("snapshot_times");
    let snapshot_times = match r.parse_with(&k, |v| parse_list(v, parse_real))? {
        Some(v) => v,
        None => {
            r.defaults.push(format!("{k} = 0, 1, 2, 3, 4 (scaled to t_end)"));
            (0..=4).map(|i| t_end * i as f64 / 4.0).collect()
        }
    };
    r.check(
        &k,
        snapshot_times.iter().all(|&t| (0.0..=t_end).contains(&t)) && snapshot_times.windows(2).all(|w| w[1] > w[0]),
        "must be strictly increasing times within [0, t_end]",
    )?;
    Ok(HydroCommon {
        x_min,
        x_max,
        m_cells,
        cfl,
        source_cfl,
        rho_floor,
        beta,
        lambda,
        t_end,
        snapshot_times,
    })
}

fn read_pless(r: &mut Reader) -> Result<PlessConfig<f64>, ConfigError> {
    let c = read_hydro_common(r, "pless", 4.0)?;
    let v_bar = r.real("pless.v_bar", -0.1)?;
    let rho0 = r.real("pless.rho0", 0.1)?;
    r.check("pless.rho0", rho0 > 0.0, "must be positive")?;
    let initial = match r.text("pless.initial", "bump").as_str() {
        "bump" => PlessInitial::Bump { rho0 },
        "uniform" => PlessInitial::Uniform {
            rho0,
            u0: r.real("pless.u0", 0.0)?,
        },
        other => {
            return Err(ConfigError::new(
                "pless.initial",
                r.raw.line("pless.initial"),
                format!("unknown initial data `{other}` (expected bump or uniform)"),
            ))
        }
    };
    if matches!(initial, PlessInitial::Bump { .. }) && r.raw.get("pless.u0").is_some() {
        return Err(ConfigError::new(
            "pless.u0",
            r.raw.line("pless.u0"),
            "only used with initial = uniform",
        ));
    }
    let mut cfg = PlessConfig::reference();
    cfg.x_min = c.x_min;
    cfg.x_max = c.x_max;
    cfg.m_cells = c.m_cells;
    cfg.params.cfl = c.cfl;
    cfg.params.source_cfl = c.source_cfl;
    cfg.params.rho_floor = c.rho_floor;
    cfg.beta = c.beta;
    cfg.v_bar = v_bar;
    cfg.lambda = c.lambda;
    cfg.t_end = c.t_end;
    cfg.initial = initial;
    cfg.snapshot_times = c.snapshot_times;
    Ok(cfg)
}

fn read_euler(r: &mut Reader) -> Result<EulerConfig<f64>, ConfigError> {
    let c = read_hydro_common(r, "euler", 4.0)?;
    let v_bar = r.real("euler.v_bar", 0.1)?;
    let e_floor = r.real("euler.e_floor", 1e-10)?;
    r.check("euler.e_floor", e_floor > 0.0, "must be positive")?;
    let rho0 = r.real("euler.rho0", 0.1)?;
    r.check("euler.rho0", rho0 > 0.0, "must be positive")?;
    let p0 = r.real("euler.p0", 0.01)?;
    r.check("euler.p0", p0 > 0.0, "must be positive")?;
    let initial = match r.text("euler.initial", "bump").as_str() {
        "bump" => EulerInitial::Bump { rho0, p0 },
        "uniform" => EulerInitial::Uniform {
            rho0,
            u0: r.real("euler.u0", 0.0)?,
            p0,
        },
        other => {
            return Err(ConfigError::new(
                "euler.initial",
                r.raw.line("euler.initial"),
                format!("unknown initial data `{other}` (expected bump or uniform)"),
            ))
        }
    };
    if matches!(initial, EulerInitial::Bump { .. }) && r.raw.get("euler.u0").is_some() {
        return Err(ConfigError::new(
            "euler.u0",
            r.raw.line("euler.u0"),
            "only used with initial = uniform",
        ));
    }
    let q2_form = match r.text("euler.q2_form", "moment").as_str() {
        "moment" => Q2Form::Moment,
        "symmetrized" => Q2Form::Symmetrized,
        other => {
            return Err(ConfigError::new(
                "euler.q2_form",
                r.raw.line("euler.q2_form"),
                format!("unknown form `{other}` (expected moment or symmetrized)"),
            ))
        }
    };
    let mut cfg = EulerConfig::reference();
    cfg.x_min = c.x_min;
    cfg.x_max = c.x_max;
    cfg.m_cells = c.m_cells;
    cfg.params.cfl = c.cfl;
    cfg.params.source_cfl = c.source_cfl;
    cfg.params.rho_floor = c.rho_floor;
    cfg.params.e_floor = e_floor;
    cfg.params.q2_form = q2_form;
    cfg.beta = c.beta;
    cfg.v_bar = v_bar;
    cfg.lambda = c.lambda;
    cfg.t_end = c.t_end;
    cfg.initial = initial;
    cfg.snapshot_times = c.snapshot_times;
    Ok(cfg)
}

fn read_fit(r: &mut Reader) -> Result<FitParams, ConfigError> {
    let series = PathBuf::from(r.require("fit.series", r.raw.get("fit.series"))?);
    let column = r.raw.get("fit.column").map(str::to_string);
    let t_lo = r.parse_with("fit.t_lo", parse_real)?;
    let t_lo = r.require("fit.t_lo", t_lo)?;
    let t_hi = r.parse_with("fit.t_hi", parse_real)?;
    let t_hi = r.require("fit.t_hi", t_hi)?;
    r.check("fit.t_hi", t_hi > t_lo, "must exceed fit.t_lo")?;
    let floor = r.parse_with("fit.floor", parse_real)?;
    let c = r.parse_with("fit.bound_c", parse_real)?;
    let alpha = r.parse_with("fit.bound_alpha", parse_real)?;
    let bound = match (c, alpha) {
        (Some(c), Some(a)) => Some((c, a)),
        (None, None) => None,
        (Some(_), None) => {
            return Err(ConfigError::new(
                "fit.bound_alpha",
                None,
                "required together with fit.bound_c",
            ))
        }
        (None, Some(_)) => {
            return Err(ConfigError::new(
                "fit.bound_c",
                None,
                "required together with fit.bound_alpha",
            ))
        }
    };
    let tol = r.real("fit.tol", 1e-6)?;
    Ok(FitParams {
        series,
        column,
        window: (t_lo, t_hi),
        floor,
        bound,
        tol,
    })
}

/// The four shipped configs as `(file name, contents)`.
pub fn builtin_configs() -> [(&'static str, &'static str); 4] {
    [
        ("particle.cfg", PARTICLE_CFG),
        ("pless.cfg", PLESS_CFG),
        ("euler.cfg", EULER_CFG),
        ("convergence.cfg", CONVERGENCE_CFG),
    ]
}

const PARTICLE_CFG: &str = "\
# Controlled Cucker-Smale particles, decay of the running cost.
experiment = particle
seed = 20240607
output_dir = out/particle

kernel.c_psi = 1
kernel.gamma = 1

particle.n = 30
particle.d = 1
particle.dt = 0.001
particle.t_end = 4
particle.lambda = 0.25
particle.beta = 2
particle.v_bar = 0.5
particle.sigma = 1
particle.mean_x = 1
particle.mean_v = 0
particle.snapshot_every = 100

fit.t_lo = 1
fit.t_hi = 3
";

const PLESS_CFG: &str = "\
# Pressureless hydrodynamics, decay of the kinetic energy.
experiment = pless
seed = 20240607
output_dir = out/pless

kernel.c_psi = 1
kernel.gamma = 1

pless.x_min = -5
pless.x_max = 5
pless.m_cells = 200
pless.cfl = 0.4
pless.source_cfl = 0.1
pless.rho_floor = 1e-12
pless.beta = 2
pless.v_bar = -0.1
pless.lambda = 1
pless.t_end = 4
pless.initial = bump
pless.rho0 = 0.1
pless.snapshot_times = 0, 1, 2, 3, 4

fit.t_lo = 0.5
fit.t_hi = 2
";

const EULER_CFG: &str = "\
# Euler hydrodynamics, decay of the total energy functional.
experiment = euler
seed = 20240607
output_dir = out/euler

kernel.c_psi = 1
kernel.gamma = 1

euler.x_min = -5
euler.x_max = 5
euler.m_cells = 200
euler.cfl = 0.4
euler.source_cfl = 0.1
euler.rho_floor = 1e-12
euler.e_floor = 1e-10
euler.beta = 2
euler.v_bar = 0.1
euler.lambda = 1
euler.t_end = 4
euler.initial = bump
euler.rho0 = 0.1
euler.p0 = 0.01
euler.q2_form = moment
euler.snapshot_times = 0, 1, 2, 3, 4

fit.t_lo = 0.5
fit.t_hi = 2
";

const CONVERGENCE_CFG: &str = "\
# Empirical mean-field limit under cheap control.
experiment = convergence
seed = 20240607
output_dir = out/convergence

kernel.c_psi = 1
kernel.gamma = 1

meanfield.n_list = 100, 1000, 10000
meanfield.d = 1
meanfield.dt = 0.05
meanfield.t_end = 2
meanfield.lambda = 1
meanfield.v_bar = 0.5
meanfield.sigma = 1
meanfield.mean_x = 1
meanfield.mean_v = 0
meanfield.tol = 1e-3
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let raw = RawConfig::parse("# header\n\n  experiment =  particle  # trailing\nparticle.n=5\n").unwrap();
        assert_eq!(raw.get("experiment"), Some("particle"));
        assert_eq!(raw.get("particle.n"), Some("5"));
    }

    #[test]
    fn rejects_malformed_lines() {
        let e = RawConfig::parse("experiment particle\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = RawConfig::parse("a.b.c = 1\n").unwrap_err();
        assert_eq!(e.key, "a.b.c");
        let e = RawConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("seed", Some(2)));
        let e = RawConfig::parse("seed =\n").unwrap_err();
        assert_eq!(e.msg, "missing value");
    }

    #[test]
    fn unknown_key_is_named() {
        let e: ConfigError = "experiment = particle\nparticle.lamda = 1\n"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert_eq!(e.key, "particle.lamda");
        assert!(e.to_string().contains("particle.lamda"));
    }

    #[test]
    fn keys_of_other_sections_are_rejected() {
        let e = "experiment = particle\npless.beta = 1\n"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert_eq!(e.key, "pless.beta");
    }

    #[test]
    fn missing_experiment_is_an_error() {
        let e = "seed = 3\n".parse::<ExperimentConfig>().unwrap_err();
        assert_eq!(e.key, "experiment");
    }

    #[test]
    fn defaults_are_recorded() {
        let cfg: ExperimentConfig = "experiment = particle\nparticle.n = 7\n".parse().unwrap();
        let Experiment::Particle(p) = &cfg.experiment else {
            panic!()
        };
        assert_eq!(p.n, 7);
        assert_eq!(p.lambda, 0.25);
        assert!(cfg.defaults_used.iter().any(|d| d == "particle.lambda = 0.25"));
        assert!(!cfg.defaults_used.iter().any(|d| d.starts_with("particle.n ")));
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.fit_window, (1.0, 3.0));
    }

    #[test]
    fn cheap_beta_and_vectors() {
        let cfg: ExperimentConfig = "experiment = particle\nparticle.d = 2\nparticle.lambda = 4\nparticle.beta = cheap\nparticle.v_bar = 0.5, -1\nparticle.mean_x = 2\n"
            .parse()
            .unwrap();
        let Experiment::Particle(p) = &cfg.experiment else {
            panic!()
        };
        assert_eq!(p.beta, 0.5);
        assert_eq!(p.v_bar, vec![0.5, -1.0]);
        assert_eq!(p.mean_x, vec![2.0, 2.0]);
        let e = "experiment = particle\nparticle.d = 2\nparticle.v_bar = 1, 2, 3\n"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert_eq!(e.key, "particle.v_bar");
    }

    #[test]
    fn range_checks_name_the_key() {
        for (text, key) in [
            ("experiment = particle\nparticle.dt = -1\n", "particle.dt"),
            ("experiment = particle\nparticle.dt = 0.3\n", "particle.dt"),
            ("experiment = pless\npless.m_cells = 1\n", "pless.m_cells"),
            ("experiment = pless\npless.x_max = -6\n", "pless.x_max"),
            ("experiment = euler\neuler.q2_form = other\n", "euler.q2_form"),
            ("experiment = euler\neuler.u0 = 1\n", "euler.u0"),
            (
                "experiment = convergence\nmeanfield.n_list = 10, 10\n",
                "meanfield.n_list",
            ),
            ("experiment = fit\nfit.t_lo = 0\nfit.t_hi = 1\n", "fit.series"),
            ("experiment = particle\nseed = -3\n", "seed"),
            ("experiment = particle\nkernel.gamma = -1\n", "kernel"),
        ] {
            let e = text.parse::<ExperimentConfig>().unwrap_err();
            assert_eq!(e.key, key, "{text}");
        }
    }

    #[test]
    fn section_seed_overrides_top_level() {
        let cfg: ExperimentConfig = "experiment = particle\nseed = 1\nparticle.seed = 9\n".parse().unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn builtins_parse_without_defaults() {
        for (name, text) in builtin_configs() {
            let cfg: ExperimentConfig = text.parse().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(cfg.defaults_used.is_empty(), "{name}: {:?}", cfg.defaults_used);
        }
    }

    #[test]
    fn builtin_hydro_configs_match_the_references() {
        let cfg: ExperimentConfig = builtin_configs()[1].1.parse().unwrap();
        let mut expected = PlessConfig::reference();
        expected.snapshot_times = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(cfg.experiment, Experiment::Pless(expected));
        let cfg: ExperimentConfig = builtin_configs()[2].1.parse().unwrap();
        let mut expected = EulerConfig::reference();
        expected.snapshot_times = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(cfg.experiment, Experiment::Euler(expected));
    }
}
