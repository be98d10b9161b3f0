//! Experiment drivers: run a parsed config, write CSVs and the report files,
//! and collect the pass/fail status of every bound check.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use turnpike_core::hydro::euler::{primitives_with_floor, simulate_euler, EulerConfig};
use turnpike_core::hydro::pressureless::{simulate_pless, PlessConfig};
use turnpike_core::meanfield::convergence_study;
use turnpike_core::particle::{sample_initial, simulate, ControlLaw};
use turnpike_core::turnpike::{
    c_lambda, certify, check_bound, feedback_cost_factor, fit_exponential, monotone_bound_check, CostSeries,
};
use turnpike_core::DecayReport64;

use crate::config::{
    ConfigError, ConvergenceParams, Experiment, ExperimentConfig, ExperimentKind, FitParams, ParticleParams,
};

/// Relative floor below which samples are left out of log-fits.
const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("simulation failed: {0}")]
    Simulation(#[from] turnpike_core::Error),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("bad series {}: {msg}", path.display())]
    Series { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> RunError + '_ {
    move |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Worker cap from `TURNPIKE_THREADS`; 1 when unset.
pub fn threads_from_env() -> Result<usize, ConfigError> {
    match std::env::var("TURNPIKE_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(ConfigError {
                key: "TURNPIKE_THREADS".into(),
                line: None,
                msg: format!("`{s}` is not a positive worker count"),
            }),
        },
    }
}

/// One bound check of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub experiment: ExperimentKind,
    pub fit: Option<DecayReport64>,
    pub checks: Vec<Check>,
    /// Informational lines that are not bound checks.
    pub diagnostics: Vec<String>,
    pub files: Vec<PathBuf>,
    pub report: String,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &[String]) -> Result<Self, RunError> {
        let path = dir.join(name);
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(csv_err(&path))?;
        writer.write_record(header).map_err(csv_err(&path))?;
        Ok(Self { path, writer })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), RunError> {
        self.writer.write_record(fields).map_err(csv_err(&self.path))
    }

    fn finish(mut self) -> Result<PathBuf, RunError> {
        self.writer.flush().map_err(io_err(&self.path))?;
        Ok(self.path)
    }
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Runs the experiment and writes its outputs into `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<RunOutcome, RunError> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = match &cfg.experiment {
        Experiment::Particle(p) => run_particle(p, cfg, dir)?,
        Experiment::Pless(p) => run_pless(p, cfg, dir)?,
        Experiment::Euler(p) => run_euler(p, cfg, dir)?,
        Experiment::Convergence(p) => run_convergence(p, cfg, dir, threads)?,
        Experiment::Fit(p) => run_fit(p, dir)?,
    };
    out.report = render_report(cfg, &out);
    let report_path = dir.join("report.txt");
    fs::write(&report_path, &out.report).map_err(io_err(&report_path))?;
    let kv_path = dir.join("report.kv");
    fs::write(&kv_path, render_kv(&out)).map_err(io_err(&kv_path))?;
    out.files.push(report_path);
    out.files.push(kv_path);
    Ok(out)
}

fn render_report(cfg: &ExperimentConfig, out: &RunOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment = {}", out.experiment.name());
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "output_dir = {}", cfg.output_dir.display());
    let _ = writeln!(s, "kernel = c_psi {}, gamma {}", cfg.kernel.c_psi(), cfg.kernel.gamma());
    let _ = writeln!(s, "\nparameters:");
    for line in format!("{:#?}", cfg.experiment).lines() {
        let _ = writeln!(s, "  {line}");
    }
    let _ = writeln!(s, "\ndefaults used:");
    if cfg.defaults_used.is_empty() {
        let _ = writeln!(s, "  (none)");
    }
    for d in &cfg.defaults_used {
        let _ = writeln!(s, "  {d}");
    }
    if let Some(fit) = &out.fit {
        let _ = writeln!(s, "\ndecay fit:");
        for line in fit.to_key_values().lines() {
            let _ = writeln!(s, "  {line}");
        }
    }
    if !out.diagnostics.is_empty() {
        let _ = writeln!(s, "\ndiagnostics:");
        for d in &out.diagnostics {
            let _ = writeln!(s, "  {d}");
        }
    }
    let _ = writeln!(s, "\nchecks:");
    for c in &out.checks {
        let _ = writeln!(
            s,
            "  {}  {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let passed = out.checks.iter().filter(|c| c.passed).count();
    let _ = writeln!(
        s,
        "\nresult: {} ({passed}/{} checks passed)",
        if out.passed() { "PASS" } else { "FAIL" },
        out.checks.len()
    );
    s
}

fn render_kv(out: &RunOutcome) -> String {
    let mut s = format!("experiment = {}\n", out.experiment.name());
    if let Some(fit) = &out.fit {
        s.push_str(&fit.to_key_values());
    }
    let _ = writeln!(s, "checks_passed = {}", out.passed());
    s
}

fn decays(fit: &DecayReport64) -> Check {
    Check::new(
        "exponential decay",
        fit.alpha_hat > 0.0,
        format!(
            "fitted slope {:.6} on [{}, {}]",
            fit.slope(),
            fit.window.0,
            fit.window.1
        ),
    )
}

fn envelope(series: &CostSeries<f64>, rate: f64, tol: f64) -> Check {
    let b = check_bound(series, 1.0, rate, tol);
    Check::new(
        "feedback envelope",
        b.satisfied,
        format!(
            "E(t) <= exp(-{rate} t) E(0), max excess {:.3e} at tol {tol:e}",
            b.max_violation
        ),
    )
}

/// Certificate with `C₀ = (1 + λβ²)/(2β)` and `C₁ = C_λ`; returns the check
/// and the certified `(C, α)`.
fn certificate(series: &CostSeries<f64>, lambda: f64, beta: f64, tol: f64) -> Result<(Check, (f64, f64)), RunError> {
    let c0 = feedback_cost_factor(lambda, beta);
    let c1 = c_lambda(lambda)?;
    let cert = certify(series, c0, c1, tol)?;
    let k = cert.constants;
    let check = Check::new(
        "turnpike certificate",
        cert.certified(),
        format!(
            "C0 = {c0:.6}, C1 = {c1:.6}: integral ratio {:.4} ({}), growth ratio {:.4} ({}), envelope C = {:.4} alpha = {:.4} excess {:.3e}",
            cert.hypotheses.worst_integral_ratio,
            ok_str(cert.hypotheses.integral_ok),
            cert.hypotheses.worst_growth_ratio,
            ok_str(cert.hypotheses.growth_ok),
            k.c,
            k.alpha,
            cert.envelope.max_violation
        ),
    );
    Ok((check, (k.c, k.alpha)))
}

fn ok_str(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

fn cost_bound(total: f64, initial: f64, lambda: f64, beta: f64, tol: f64) -> Check {
    let factor = feedback_cost_factor(lambda, beta);
    let ratio = total / (factor * initial);
    Check::new(
        "feedback cost bound",
        total <= factor * initial * (1.0 + tol),
        format!(
            "J = {total:.6e} <= (1 + lambda beta^2)/(2 beta) E(0) = {:.6e}, ratio {ratio:.5}",
            factor * initial
        ),
    )
}

fn mass_check(drift: f64) -> Check {
    Check::new(
        "mass conservation",
        drift <= 1e-12,
        format!("max relative drift {drift:.3e}"),
    )
}

fn fit_with_bound(
    series: &CostSeries<f64>,
    window: (f64, f64),
    bound: (f64, f64),
    tol: f64,
) -> Result<DecayReport64, RunError> {
    let floor = FIT_FLOOR * series.values()[0];
    Ok(fit_exponential(series, window, floor)?.with_bound(series, bound.0, bound.1, tol))
}

fn run_particle(p: &ParticleParams, cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    let init = sample_initial(p.n, p.d, &p.mean_x, &p.mean_v, p.sigma, cfg.seed)?;
    let law = ControlLaw::feedback(p.beta, p.v_bar.clone())?;
    let traj = simulate(&init, &cfg.kernel, &law, p.dt, p.t_end, p.lambda, &p.v_bar)?;
    let total = traj.total_integrand();

    let mut cost = CsvOut::create(
        dir,
        "cost.csv",
        &headers(&["t", "state_cost", "control_cost", "total_integrand"]),
    )?;
    for (k, &t) in traj.times.iter().enumerate() {
        cost.row(&[
            num(t),
            num(traj.state_cost[k]),
            num(traj.control_cost[k]),
            num(total[k]),
        ])?;
    }
    let mut header = headers(&["t", "i"]);
    header.extend((1..=p.d).map(|c| format!("x_{c}")));
    header.extend((1..=p.d).map(|c| format!("v_{c}")));
    let mut snaps = CsvOut::create(dir, "snapshots.csv", &header)?;
    let last = traj.states.len() - 1;
    for (k, s) in traj.states.iter().enumerate() {
        if k % p.snapshot_every != 0 && k != last {
            continue;
        }
        for i in 0..s.n() {
            let mut row = vec![num(s.t), i.to_string()];
            row.extend(s.position(i).iter().map(|&x| num(x)));
            row.extend(s.velocity(i).iter().map(|&v| num(v)));
            snaps.row(&row)?;
        }
    }
    let files = vec![cost.finish()?, snaps.finish()?];

    let state = CostSeries::new(traj.times.clone(), traj.state_cost.clone())?;
    let total_series = CostSeries::new(traj.times.clone(), total)?;
    let (cert, bound) = certificate(&state, p.lambda, p.beta, 1e-6)?;
    let fit = fit_with_bound(&total_series, cfg.fit_window, bound, 1e-6)?;
    let c1 = c_lambda(p.lambda)?;
    let checks = vec![
        decays(&fit),
        envelope(&state, 2.0 * p.beta, 1e-6),
        Check::new(
            "C_lambda growth bound",
            monotone_bound_check(&state, c1, 1e-6),
            format!("E(t2) <= {c1} E(t1) for all t1 <= t2"),
        ),
        cert,
        cost_bound(traj.total_cost(), traj.state_cost[0], p.lambda, p.beta, 1e-3),
    ];
    Ok(RunOutcome {
        experiment: ExperimentKind::Particle,
        fit: Some(fit),
        checks,
        diagnostics: vec![format!(
            "steps = {}, total cost = {:e}",
            traj.times.len() - 1,
            traj.total_cost()
        )],
        files,
        report: String::new(),
    })
}

fn run_pless(p: &PlessConfig<f64>, cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    let run = simulate_pless(p, &cfg.kernel)?;
    let mut series = CsvOut::create(
        dir,
        "series.csv",
        &headers(&["t", "energy", "state_cost", "control_cost"]),
    )?;
    for k in 0..run.times.len() {
        series.row(&[
            num(run.times[k]),
            num(run.energy[k]),
            num(run.state_cost[k]),
            num(run.control_cost[k]),
        ])?;
    }
    let mut snaps = CsvOut::create(dir, "snapshots.csv", &headers(&["t", "x", "rho", "u"]))?;
    let x = run.grid.centers();
    for s in &run.snapshots {
        let u = s.velocity();
        for i in 0..x.len() {
            snaps.row(&[num(s.t), num(x[i]), num(s.rho()[i]), num(u[i])])?;
        }
    }
    let files = vec![series.finish()?, snaps.finish()?];

    let energy = CostSeries::new(run.times.clone(), run.energy.clone())?;
    let (cert, bound) = certificate(&energy, p.lambda, p.beta, 1e-3)?;
    let fit = fit_with_bound(&energy, cfg.fit_window, bound, 1e-3)?;
    let monotone = run.energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6));
    let checks = vec![
        decays(&fit),
        Check::new("energy monotone", monotone, "E(t_{k+1}) <= E(t_k) (1 + 1e-6)"),
        envelope(&energy, 2.0 * p.beta, 1e-3),
        mass_check(run.mass_drift()),
        cert,
        cost_bound(run.total_cost(), run.state_cost[0], p.lambda, p.beta, 1e-2),
        Check::new(
            "no floor activations",
            run.stats.floor_events == 0,
            format!("{} density floor events", run.stats.floor_events),
        ),
    ];
    Ok(RunOutcome {
        experiment: ExperimentKind::Pless,
        fit: Some(fit),
        checks,
        diagnostics: vec![format!(
            "steps = {}, max |sum Q1 dx| = {:e}, total cost = {:e}",
            run.stats.steps,
            run.stats.max_abs_q1_integral,
            run.total_cost()
        )],
        files,
        report: String::new(),
    })
}

fn run_euler(p: &EulerConfig<f64>, cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    let run = simulate_euler(p, &cfg.kernel)?;
    let mut series = CsvOut::create(
        dir,
        "series.csv",
        &headers(&["t", "h_functional", "state_cost", "g_cost"]),
    )?;
    for k in 0..run.times.len() {
        series.row(&[
            num(run.times[k]),
            num(run.h[k]),
            num(run.state_cost[k]),
            num(run.g_cost[k]),
        ])?;
    }
    let mut snaps = CsvOut::create(dir, "snapshots.csv", &headers(&["t", "x", "rho", "u", "e", "p"]))?;
    let x = run.grid.centers();
    for s in &run.snapshots {
        let prim = primitives_with_floor(s, p.params.e_floor)?;
        for (i, &xi) in x.iter().enumerate() {
            snaps.row(&[
                num(s.t),
                num(xi),
                num(s.rho()[i]),
                num(prim.u[i]),
                num(prim.e[i]),
                num(prim.p[i]),
            ])?;
        }
    }
    let files = vec![series.finish()?, snaps.finish()?];

    let h = CostSeries::new(run.times.clone(), run.h.clone())?;
    let (cert, bound) = certificate(&h, p.lambda, p.beta, 1e-3)?;
    let fit = fit_with_bound(&h, cfg.fit_window, bound, 1e-3)?;
    let checks = vec![
        decays(&fit),
        envelope(&h, 2.0 * p.beta, 1e-3),
        mass_check(run.mass_drift()),
        Check::new(
            "momentum source has zero integral",
            run.stats.max_abs_q1_integral == 0.0,
            format!("max |sum Q1 dx| = {:e}", run.stats.max_abs_q1_integral),
        ),
        Check::new(
            "energy source dissipates",
            run.stats.max_q2_integral <= 0.0,
            format!(
                "max sum Q2 dx = {:e} ({:?} form)",
                run.stats.max_q2_integral, p.params.q2_form
            ),
        ),
        cert,
        cost_bound(run.total_cost(), run.state_cost[0], p.lambda, p.beta, 1e-2),
        Check::new(
            "no floor activations",
            run.stats.floor_events == 0,
            format!("{} density or internal-energy floor events", run.stats.floor_events),
        ),
    ];
    Ok(RunOutcome {
        experiment: ExperimentKind::Euler,
        fit: Some(fit),
        checks,
        diagnostics: vec![format!(
            "steps = {}, total cost = {:e}",
            run.stats.steps,
            run.total_cost()
        )],
        files,
        report: String::new(),
    })
}

fn run_convergence(
    p: &ConvergenceParams,
    cfg: &ExperimentConfig,
    dir: &Path,
    threads: usize,
) -> Result<RunOutcome, RunError> {
    let table = convergence_study(&p.n_list, &p.study, &cfg.kernel, cfg.seed, threads)?;
    let path = dir.join("convergence.csv");
    fs::write(&path, table.to_csv()).map_err(io_err(&path))?;

    let study = &p.study;
    let d = study.d as f64;
    let sigma2 = study.sigma * study.sigma;
    let offset: f64 = study
        .mean_v
        .iter()
        .zip(&study.v_bar)
        .map(|(m, v)| (m - v) * (m - v))
        .sum();
    let mut checks = Vec::new();
    let mut diagnostics = Vec::new();
    for r in &table.rows {
        checks.push(Check::new(
            "cheap-control bound",
            r.cheap_control_ok,
            format!(
                "N = {}: J = {:.6e} vs sqrt(lambda) m2(0) = {:.6e}",
                r.n,
                r.cost_total,
                study.lambda.sqrt() * r.moment2_t0
            ),
        ));
        checks.push(Check::new(
            "turnpike inheritance",
            r.turnpike_ok,
            format!("N = {}: moment2 {:.6e} -> {:.6e}", r.n, r.moment2_t0, r.moment2_tend),
        ));
        let expected = d * sigma2 + offset;
        let se = (2.0 * d * sigma2 * sigma2 / r.n as f64 + 4.0 * sigma2 * offset / r.n as f64).sqrt();
        let z = if se > 0.0 { (r.moment2_t0 - expected) / se } else { 0.0 };
        diagnostics.push(format!(
            "N = {} (seed {}): m2(0) = {:.6} (expected {expected:.6}, z = {z:.2}), W1_x = {:.4e}, W1_v = {:.4e}",
            r.n, r.seed, r.moment2_t0, r.w1_x, r.w1_v
        ));
    }

    // Decay fit of the smallest run, replayed from its derived seed.
    let first = &table.rows[0];
    let init = sample_initial(first.n, study.d, &study.mean_x, &study.mean_v, study.sigma, first.seed)?;
    let law = ControlLaw::cheap_control(study.lambda, study.v_bar.clone())?;
    let traj = simulate(
        &init,
        &cfg.kernel,
        &law,
        study.dt,
        study.t_end,
        study.lambda,
        &study.v_bar,
    )?;
    let series = CostSeries::new(traj.times.clone(), traj.state_cost.clone())?;
    let beta = 1.0 / study.lambda.sqrt();
    let (_, bound) = certificate(&series, study.lambda, beta, study.tol)?;
    let fit = fit_with_bound(&series, cfg.fit_window, bound, study.tol)?;
    diagnostics.push(format!("decay fit is of the velocity cost for N = {}", first.n));

    Ok(RunOutcome {
        experiment: ExperimentKind::Convergence,
        fit: Some(fit),
        checks,
        diagnostics,
        files: vec![path],
        report: String::new(),
    })
}

/// Reads `(t, column)` from a series CSV with a header row whose first
/// column is `t`. Returns the column name used.
pub fn read_series(path: &Path, column: Option<&str>) -> Result<(String, CostSeries<f64>), RunError> {
    let bad = |msg: String| RunError::Series {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().from_path(path).map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.get(0) != Some("t") {
        return Err(bad("first column must be `t`".into()));
    }
    let col = match column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .filter(|&i| i > 0)
            .ok_or_else(|| bad(format!("no column `{name}`")))?,
        None if header.len() >= 2 => 1,
        None => return Err(bad("needs at least two columns".into())),
    };
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |i: usize| -> Result<f64, RunError> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: column {} is not a number", k + 2, i + 1)))
        };
        t.push(field(0)?);
        v.push(field(col)?);
    }
    let series = CostSeries::new(t, v).map_err(|e| bad(e.to_string()))?;
    Ok((header[col].to_string(), series))
}

/// Fits a series file; the bound check is added when `params.bound` is set.
pub fn fit_file(params: &FitParams) -> Result<(String, DecayReport64, Vec<Check>), RunError> {
    let (column, series) = read_series(&params.series, params.column.as_deref())?;
    let floor = params.floor.unwrap_or(FIT_FLOOR * series.values()[0]);
    let mut fit = fit_exponential(&series, params.window, floor)?;
    let mut checks = Vec::new();
    if let Some((c, alpha)) = params.bound {
        fit = fit.with_bound(&series, c, alpha, params.tol);
        let b = fit.bound.expect("bound just attached");
        checks.push(Check::new(
            "exponential envelope",
            b.satisfied,
            format!(
                "{column}(t) <= {c} exp(-{alpha} t) {column}(0), max excess {:.3e}",
                b.max_violation
            ),
        ));
    }
    Ok((column, fit, checks))
}

/// `<dir>/<stem>.fit.kv` for a series path.
pub fn fit_kv_path(series: &Path, dir: Option<&Path>) -> PathBuf {
    let stem = series
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let dir = dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| series.parent().map(Path::to_path_buf).unwrap_or_default());
    dir.join(format!("{stem}.fit.kv"))
}

fn run_fit(p: &FitParams, dir: &Path) -> Result<RunOutcome, RunError> {
    let (column, fit, checks) = fit_file(p)?;
    let kv = fit_kv_path(&p.series, Some(dir));
    fs::write(&kv, fit.to_key_values()).map_err(io_err(&kv))?;
    Ok(RunOutcome {
        experiment: ExperimentKind::Fit,
        fit: Some(fit),
        checks,
        diagnostics: vec![format!("series {} column {column}", p.series.display())],
        files: vec![kv],
        report: String::new(),
    })
}

/// Writes the four shipped configs into `dir`.
pub fn emit_builtin_configs(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    crate::config::builtin_configs()
        .iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
            Ok(path)
        })
        .collect()
}
