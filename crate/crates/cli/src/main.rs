//! `hiphop`: constants, simulation, shooting solves, family continuation,
//! period curves and verification for the restricted hip-hop problem.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use hiphop_core::continuation::{self, Termination};
use hiphop_core::export::{self, fmt_f64};
use hiphop_core::flow::{self, FlowError, ShootingPoint};
use hiphop_core::parallel::Execution;
use hiphop_core::solver::{self, PointGuess, SolverError};
use hiphop_core::{integrator, period, ReducedState};

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hiphop", version, about = "Symmetric periodic orbits of the restricted hip-hop problem")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true, env = "HIPHOP_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    m: Option<f64>,
    #[arg(long, global = true)]
    r0: Option<f64>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    u: Option<f64>,
    #[arg(long = "T", global = true)]
    t_half: Option<f64>,
    #[arg(long, global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    b_max: Option<f64>,
    /// Output file; stdout when absent. A `<out>.meta.json` sidecar records
    /// run metadata.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Pass/fail tolerance for `verify`.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the derived constants and the smallest admissible k.
    Constants {
        #[arg(long)]
        json: bool,
    },
    /// Integrate from (a, b, u) and write the trajectory as CSV.
    Simulate {
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Solve the shooting system at b with period multiple k.
    Solve,
    /// Continue the family from b = 0 to b-max.
    Family {
        /// natural or arclength
        #[arg(long)]
        mode: Option<String>,
    },
    /// Tabulate the circular-case period function.
    PeriodCurve {
        /// Comma-separated u values.
        #[arg(long, allow_hyphen_values = true)]
        u_grid: Option<String>,
    },
    /// Check a candidate (a, b, u, T) for periodicity.
    Verify {
        /// Read a, b, u, T from a `solve` JSON file.
        #[arg(long)]
        point: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Integrator(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Integrator(_) => 4,
            Failure::Verification(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Integrator(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        if e.is_integration_failure() {
            Failure::Integrator(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Integration(e) => Failure::Integrator(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn load_config(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = o.n {
        cfg.n = v;
    }
    if let Some(v) = o.m {
        cfg.m = v;
    }
    if let Some(v) = o.r0 {
        cfg.r0 = v;
    }
    if let Some(v) = o.rel_tol {
        cfg.integrator.rel_tol = v;
    }
    if let Some(v) = o.abs_tol {
        cfg.integrator.abs_tol = v;
    }
    cfg.a = o.a.or(cfg.a);
    cfg.b = o.b.or(cfg.b);
    cfg.u = o.u.or(cfg.u);
    cfg.t_half = o.t_half.or(cfg.t_half);
    cfg.k = o.k.or(cfg.k);
    if let Some(v) = o.b_max {
        cfg.b_max = v;
    }
    if let Some(v) = o.tol {
        cfg.tol = v;
    }
    if let Some(p) = &o.out {
        cfg.out = Some(p.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require(value: Option<f64>, name: &str) -> Result<f64, Failure> {
    value.ok_or_else(|| Failure::Config(format!("field `{name}`: required for this command")))
}

/// Write `text` to the configured output or stdout.
fn emit(cfg: &RunConfig, text: &str) -> Result<(), Failure> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Config(format!("field `out`: {path}: {e}"))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Config(format!("stdout: {e}"))),
    }
}

fn cmd_constants(cfg: &RunConfig, json: bool) -> Result<(), Failure> {
    let params = cfg.params()?;
    let c = params.constants();
    if json || cfg.out.is_some() {
        return emit(cfg, &export::constants_json(&params, &c));
    }
    let rows = [
        ("alphaN", c.alpha_n),
        ("gammaN", c.gamma_n),
        ("aStar", c.a_star),
        ("T1Star", c.t1_star),
        ("T2Star", c.t2_star),
        ("uMax", c.u_max),
    ];
    let mut text = String::new();
    for (name, v) in rows {
        text.push_str(&format!("{name:<8} {}\n", fmt_f64(v)));
    }
    text.push_str(&format!("{:<8} {}\n", "k", c.smallest_multiple()));
    emit(cfg, &text)
}

fn cmd_simulate(cfg: &RunConfig, t_end: Option<f64>, dt: Option<f64>) -> Result<(), Failure> {
    let params = cfg.params()?;
    let c = params.constants();
    let a = cfg.a.unwrap_or(c.a_star);
    let b = cfg.b.unwrap_or(0.0);
    let u = cfg.u.unwrap_or(0.0);
    let t_end = t_end
        .or(cfg.t_end)
        .unwrap_or_else(|| 2.0 * cfg.t_half.unwrap_or(c.t1_star));
    let dt = dt.unwrap_or(cfg.dt);
    if !(t_end > 0.0 && t_end.is_finite()) || !(dt > 0.0) {
        return Err(Failure::Config(format!("field `t_end`/`dt`: need positive values, got {t_end}, {dt}")));
    }
    let traj = integrator::integrate(&params, a, &ReducedState::initial(&params, b, u), (0.0, t_end), &cfg.integrator)
        .map_err(|e| Failure::Integrator(e.to_string()))?;
    let times = export::output_times(0.0, t_end, dt);
    let mut buf = Vec::new();
    export::write_trajectory_csv(&mut buf, &traj, &times).map_err(|e| Failure::Integrator(e.to_string()))?;
    emit(cfg, &String::from_utf8(buf).expect("CSV is ASCII"))
}

fn cmd_solve(cfg: &RunConfig) -> Result<(), Failure> {
    let params = cfg.params()?;
    let b = cfg.b.unwrap_or(0.0);
    let k = cfg.k.unwrap_or_else(|| params.constants().smallest_multiple());
    let opts = cfg.solver_options();
    let sp = match (cfg.a, cfg.t_half) {
        (Some(a), Some(t)) => {
            let guess = PointGuess { a, t1: t / k as f64, u: cfg.u };
            solver::solve_point_from(&params, b, k, &guess, &opts)?
        }
        (None, None) => solver::solve_point(&params, b, k, &opts)?,
        _ => return Err(Failure::Config("fields `a` and `T`: give both as a starting guess, or neither".into())),
    };
    emit(cfg, &export::solution_point_json(&sp))?;
    if !sp.converged {
        return Err(Failure::Verification(format!(
            "point did not converge: residual {:e}, state gap {:e}",
            sp.report.residual_norm, sp.report.state_gap
        )));
    }
    Ok(())
}

fn cmd_family(cfg: &RunConfig, mode: Option<&str>) -> Result<(), Failure> {
    let mut cfg = cfg.clone();
    if let Some(m) = mode {
        cfg.set("mode", m)?;
    }
    let params = cfg.params()?;
    let k = cfg.k.unwrap_or_else(|| params.constants().smallest_multiple());
    let fam = continuation::continue_family(&params, k, cfg.b_max, &cfg.step, &cfg.solver_options()).map_err(|e| match e {
        continuation::ContinuationError::InvalidInput(m) => Failure::Config(m),
        continuation::ContinuationError::Solver(s) | continuation::ContinuationError::SeedFailure(s) => s.into(),
        other => Failure::Solver(other.to_string()),
    })?;
    emit(&cfg, &export::family_json(&fam))?;
    match &fam.termination {
        Termination::ReachedBMax | Termination::Stopped => Ok(()),
        other => Err(Failure::Solver(format!(
            "family stopped at b = {} ({other:?})",
            fam.points.last().map_or(0.0, |p| p.point.b)
        ))),
    }
}

fn cmd_period_curve(cfg: &RunConfig, grid: Option<&str>) -> Result<(), Failure> {
    let params = cfg.params()?;
    let u_max = params.constants().u_max;
    let mut grid = match grid {
        Some(g) => config::parse_grid("u_grid", g)?,
        None => cfg
            .u_grid
            .clone()
            .unwrap_or_else(|| (1..=19).map(|i| 0.05 * i as f64 * u_max).collect()),
    };
    let rows = period::period_curve(&params, &grid, Execution::default());
    grid.sort_by(f64::total_cmp);
    let mut buf = Vec::new();
    export::write_period_csv(&mut buf, &grid, &rows).map_err(|e| Failure::Config(e.to_string()))?;
    emit(cfg, &String::from_utf8(buf).expect("CSV is ASCII"))?;
    if !rows.is_empty() && rows.iter().all(Result::is_err) {
        return Err(Failure::Solver("no grid point is inside the oscillatory regime".into()));
    }
    Ok(())
}

fn point_from_file(path: &PathBuf) -> Result<(ShootingPoint, Option<u32>), Failure> {
    let bad = |m: String| Failure::Config(format!("field `point`: {}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let get = |key: &str| doc.get(key).and_then(serde_json::Value::as_f64).ok_or_else(|| bad(format!("missing number `{key}`")));
    let point = ShootingPoint::new(get("a")?, get("b")?, get("u")?, get("T")?);
    let k = doc.get("k").and_then(serde_json::Value::as_u64).map(|k| k as u32);
    Ok((point, k))
}

fn cmd_verify(cfg: &RunConfig, file: Option<&PathBuf>) -> Result<(), Failure> {
    let params = cfg.params()?;
    let point = match file {
        Some(path) => point_from_file(path)?.0,
        None => ShootingPoint::new(
            require(cfg.a, "a")?,
            require(cfg.b, "b")?,
            require(cfg.u, "u")?,
            require(cfg.t_half, "T")?,
        ),
    };
    let report = flow::verify_periodicity(&params, &point, &cfg.integrator)?;
    let verified = report.residual_norm <= cfg.tol && report.state_gap <= cfg.tol && report.symmetry_defect <= cfg.tol;
    emit(cfg, &export::verify_json(&point, &report, cfg.tol, verified))?;
    if !verified {
        return Err(Failure::Verification(format!(
            "not periodic at tolerance {:e}: residual {:e}, state gap {:e}, symmetry defect {:e}",
            cfg.tol, report.residual_norm, report.state_gap, report.symmetry_defect
        )));
    }
    Ok(())
}

fn write_sidecar(out: &str, command: &str, started: SystemTime, elapsed: f64, code: u8) {
    let meta = serde_json::json!({
        "tool": "hiphop",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "startedUnixSeconds": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        "elapsedSeconds": elapsed,
        "exitCode": code,
        "parallel": Execution::default().is_concurrent(),
    });
    let path = format!("{out}.meta.json");
    let written = File::create(&path).and_then(|f| {
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        writeln!(w)?;
        w.flush()
    });
    if let Err(e) = written {
        eprintln!("hiphop: warning: cannot write {path}: {e}");
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.overrides)?;
    match &cli.command {
        Command::Constants { json } => cmd_constants(&cfg, *json),
        Command::Simulate { t_end, dt } => cmd_simulate(&cfg, *t_end, *dt),
        Command::Solve => cmd_solve(&cfg),
        Command::Family { mode } => cmd_family(&cfg, mode.as_deref()),
        Command::PeriodCurve { u_grid } => cmd_period_curve(&cfg, u_grid.as_deref()),
        Command::Verify { point } => cmd_verify(&cfg, point.as_ref()),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Constants { .. } => "constants",
        Command::Simulate { .. } => "simulate",
        Command::Solve => "solve",
        Command::Family { .. } => "family",
        Command::PeriodCurve { .. } => "period-curve",
        Command::Verify { .. } => "verify",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = SystemTime::now();
    let clock = Instant::now();
    let result = run(&cli);
    let code = match &result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("hiphop: {}", f.message());
            f.code()
        }
    };
    if let Some(out) = &cli.overrides.out {
        write_sidecar(&out.display().to_string(), command_name(&cli.command), started, clock.elapsed().as_secs_f64(), code);
    }
    ExitCode::from(code)
}
