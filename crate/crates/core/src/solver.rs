//! Newton iteration with finite-difference Jacobians and the staged solve
//! of the shooting system.
//!
//! Stage 1 finds the primaries' orbit `(a(b), T1(b))` from `R' = D = 0`,
//! stage 2 finds the massless speed `u` with `Z(a, b, u, k T1) = 0`, and an
//! optional stage 3 polishes `(a, u, T)` jointly on all three residuals.
//!
//! For `b != 0` the `D` component is divided by `b`: `D` vanishes identically
//! at `b = 0`, so the raw system becomes rank deficient as `b -> 0` while the
//! scaled one stays regular.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, FlowError, PeriodicityReport, ShootingPoint};
use crate::integrator::{IntegratorOptions, PrimariesTrajectory};
use crate::model::ProblemParams;
use crate::parallel::Execution;
use crate::period::{self, PeriodError};

const CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Relative finite-difference step; the absolute floor is `1e-8`.
    pub fd_step: f64,
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Step multiplier per backtracking halving.
    pub damping: f64,
    pub max_halvings: usize,
    /// How Jacobian columns are evaluated.
    pub execution: Execution,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-6,
            tol_residual: 1e-10,
            max_iter: 25,
            damping: 0.5,
            max_halvings: 8,
            execution: Execution::default(),
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<(), NewtonError> {
        let bad = |reason: String| Err(NewtonError::InvalidOptions(reason));
        if !(self.fd_step > 0.0 && self.fd_step < 1e-2) {
            return bad(format!("fd_step {} outside (0, 1e-2)", self.fd_step));
        }
        if !(self.tol_residual > 0.0) {
            return bad(format!("tol_residual {} must be positive", self.tol_residual));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad(format!("damping {} outside (0, 1)", self.damping));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("invalid Newton options: {0}")]
    InvalidOptions(String),
    #[error("function evaluation failed at {x:?}: {message}")]
    Evaluation { x: Vec<f64>, message: String },
    #[error("Jacobian condition estimate {condition:e} at {x:?}")]
    SingularJacobian { x: Vec<f64>, condition: f64 },
    #[error("backtracking exhausted at {x:?} (residual {residual:e})")]
    NoProgress { x: Vec<f64>, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Residual norm before each iteration and after the last one.
    pub history: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Damped Newton iteration for `F(x) = 0` with a forward-difference Jacobian.
pub fn newton_solve<F, E>(f: F, x0: &[f64], opts: &NewtonOptions) -> Result<NewtonOutcome, NewtonError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, E> + Sync,
    E: fmt::Display,
{
    opts.validate()?;
    let n = x0.len();
    let eval = |x: &[f64]| -> Result<Vec<f64>, NewtonError> {
        let v = f(x).map_err(|e| NewtonError::Evaluation {
            x: x.to_vec(),
            message: e.to_string(),
        })?;
        if v.len() != n || v.iter().any(|c| !c.is_finite()) {
            return Err(NewtonError::Evaluation {
                x: x.to_vec(),
                message: format!("residual {v:?} is not a finite {n}-vector"),
            });
        }
        Ok(v)
    };

    let mut x = x0.to_vec();
    let mut fx = eval(&x)?;
    let mut norm = inf_norm(&fx);
    let mut history = vec![norm];
    let mut iterations = 0;

    while norm > opts.tol_residual && iterations < opts.max_iter {
        let columns: Vec<usize> = (0..n).collect();
        let jac_cols = opts.execution.map(&columns, |&j| {
            let h = (opts.fd_step * x[j].abs()).max(1e-8);
            let mut xp = x.clone();
            xp[j] += h;
            let h = xp[j] - x[j];
            eval(&xp).map(|fp| fp.iter().zip(&fx).map(|(p, q)| (p - q) / h).collect::<Vec<f64>>())
        });
        let mut jac = DMatrix::zeros(n, n);
        for (j, col) in jac_cols.into_iter().enumerate() {
            for (i, v) in col?.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        let svd = jac.clone().svd(true, true);
        let (smax, smin) = svd
            .singular_values
            .iter()
            .fold((0.0_f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= CONDITION_LIMIT) {
            return Err(NewtonError::SingularJacobian { x, condition });
        }
        let rhs = DVector::from_iterator(n, fx.iter().map(|v| -v));
        let step = svd
            .solve(&rhs, 0.0)
            .map_err(|_| NewtonError::SingularJacobian { x: x.clone(), condition })?;

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, s)| xi + lambda * s).collect();
            if let Ok(ft) = eval(&trial) {
                let tn = inf_norm(&ft);
                if tn < norm {
                    accepted = Some((trial, ft, tn));
                    break;
                }
            }
            lambda *= opts.damping;
        }
        let Some((xn, fxn, nn)) = accepted else {
            return Err(NewtonError::NoProgress { x, residual: norm });
        };
        x = xn;
        fx = fxn;
        norm = nn;
        iterations += 1;
        history.push(norm);
    }

    Ok(NewtonOutcome {
        converged: norm <= opts.tol_residual,
        x,
        iterations,
        residual_norm: norm,
        history,
    })
}

/// Shared settings for the staged solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub newton: NewtonOptions,
    pub integrator: IntegratorOptions,
    /// Joint `(a, u, T)` polish on the full residual.
    pub polish: bool,
    /// Number of grid points in the `u` scan.
    pub scan_points: usize,
    /// Default `u` search range as fractions of `uMax`.
    pub scan_range: (f64, f64),
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            integrator: IntegratorOptions::default(),
            polish: true,
            scan_points: 16,
            scan_range: (0.05, 0.98),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Primaries,
    Bracket,
    Massless,
    Polish,
    Verify,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Primaries => "primaries",
            Stage::Bracket => "bracket",
            Stage::Massless => "massless",
            Stage::Polish => "polish",
            Stage::Verify => "verify",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{stage} stage: {source}")]
    Newton { stage: Stage, source: NewtonError },
    #[error("{stage} stage did not converge (residual {residual:e} after {iterations} iterations)")]
    NotConverged { stage: Stage, residual: f64, iterations: usize },
    #[error("Z has no sign change on [{u1}, {u2}] (values {z1:e}, {z2:e})")]
    NoSignChange { u1: f64, u2: f64, z1: f64, z2: f64 },
    #[error("{stage} stage: {source}")]
    Flow { stage: Stage, source: FlowError },
    #[error("seed: {0}")]
    Period(#[from] PeriodError),
}

impl SolverError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            SolverError::Newton { stage, .. }
            | SolverError::NotConverged { stage, .. }
            | SolverError::Flow { stage, .. } => Some(*stage),
            SolverError::NoSignChange { .. } => Some(Stage::Bracket),
            _ => None,
        }
    }

    /// True when the failure came from the integrator rather than the
    /// iteration itself.
    pub fn is_integration_failure(&self) -> bool {
        match self {
            SolverError::Flow { source: FlowError::Integration(_), .. } => true,
            SolverError::Newton { source: NewtonError::Evaluation { .. }, .. } => true,
            _ => false,
        }
    }
}

fn flow_err(stage: Stage) -> impl Fn(FlowError) -> SolverError {
    move |source| SolverError::Flow { stage, source }
}

/// Stage-1 result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimariesRoot {
    pub a: f64,
    pub t_half: f64,
    pub residual: [f64; 2],
    pub iterations: usize,
}

/// Solve `R'(a, b, T) = D(a, b, T) = 0` for `(a, T)` from `guess`.
///
/// At `b = 0` the ring stays on its circular equilibrium, which is returned
/// directly as `(a*, T1*)`.
pub fn solve_primaries(
    params: &ProblemParams,
    b: f64,
    guess: (f64, f64),
    opts: &SolverOptions,
) -> Result<PrimariesRoot, SolverError> {
    if !b.is_finite() {
        return Err(SolverError::InvalidInput(format!("b = {b}")));
    }
    let io = &opts.integrator;
    if b == 0.0 {
        let c = params.constants();
        let residual = flow::residual2_primaries(params, c.a_star, 0.0, c.t1_star, io)
            .map_err(flow_err(Stage::Primaries))?;
        return Ok(PrimariesRoot {
            a: c.a_star,
            t_half: c.t1_star,
            residual,
            iterations: 0,
        });
    }
    let scaled = |x: &[f64]| -> Result<Vec<f64>, FlowError> {
        let r = flow::residual2_primaries(params, x[0], b, x[1], io)?;
        Ok(vec![r[0], r[1] / b])
    };
    let outcome = newton_solve(scaled, &[guess.0, guess.1], &opts.newton)
        .map_err(|source| SolverError::Newton { stage: Stage::Primaries, source })?;
    let (a, t_half) = (outcome.x[0], outcome.x[1]);
    let residual = flow::residual2_primaries(params, a, b, t_half, io).map_err(flow_err(Stage::Primaries))?;
    if !(inf_norm(&residual) <= opts.newton.tol_residual) && !outcome.converged {
        return Err(SolverError::NotConverged {
            stage: Stage::Primaries,
            residual: inf_norm(&residual),
            iterations: outcome.iterations,
        });
    }
    Ok(PrimariesRoot {
        a,
        t_half,
        residual,
        iterations: outcome.iterations,
    })
}

/// Stage-2 result.
#[derive(Debug, Clone, PartialEq)]
pub struct MasslessRoot {
    pub u: f64,
    pub z: f64,
    pub iterations: usize,
    /// Zeros of `z(t)` inside `(0, T)`; zero for the fundamental oscillation.
    pub interior_crossings: usize,
    /// Brackets of the other sign changes seen in the scan.
    pub alternatives: Vec<(f64, f64)>,
}

/// Where to look for the massless root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UBracket {
    /// Scan the default range.
    Scan,
    /// Scan `[u1, u2]`.
    Within(f64, f64),
    /// Grow an interval around a guess until it brackets a root.
    Near(f64),
}

/// Solve `Z(a, b, u, T) = 0` for `u`, by bisection then safeguarded Newton.
///
/// A scan can find several sign changes; each is refined and the root whose
/// `z(t)` has the fewest zeros inside `(0, T)` wins, ties going to the
/// largest `u` (the widest oscillation). The rest are reported in `alternatives`.
pub fn solve_massless_u(
    params: &ProblemParams,
    a: f64,
    b: f64,
    t_target: f64,
    bracket: UBracket,
    opts: &SolverOptions,
) -> Result<MasslessRoot, SolverError> {
    let primaries = flow::shoot_primaries(params, a, b, t_target, &opts.integrator).map_err(flow_err(Stage::Massless))?;
    solve_massless_on(params, &primaries, bracket, opts)
}

/// [`solve_massless_u`] against an existing primaries run over `[0, T]`.
pub fn solve_massless_on(
    params: &ProblemParams,
    primaries: &Arc<PrimariesTrajectory>,
    bracket: UBracket,
    opts: &SolverOptions,
) -> Result<MasslessRoot, SolverError> {
    let u_max = params.constants().u_max;
    let io = &opts.integrator;
    let z_of = |u: f64| flow::massless_z(primaries, u, io).map_err(flow_err(Stage::Massless));

    let (lo, hi) = match bracket {
        UBracket::Scan => (opts.scan_range.0 * u_max, opts.scan_range.1 * u_max),
        UBracket::Within(u1, u2) => (u1.min(u2), u1.max(u2)),
        UBracket::Near(guess) => return near_root(guess, u_max, &z_of, opts),
    };
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(SolverError::InvalidInput(format!("u bracket [{lo}, {hi}]")));
    }
    let n = opts.scan_points.max(2);
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let values = opts.newton.execution.map(&grid, |&u| z_of(u));
    let values = values.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let mut cells = Vec::new();
    for i in 0..n - 1 {
        if values[i] == 0.0 {
            cells.push((grid[i], grid[i]));
        } else if values[i] * values[i + 1] < 0.0 {
            cells.push((grid[i], grid[i + 1]));
        }
    }
    if values[n - 1] == 0.0 {
        cells.push((grid[n - 1], grid[n - 1]));
    }
    if cells.is_empty() {
        return Err(SolverError::NoSignChange {
            u1: lo,
            u2: hi,
            z1: values[0],
            z2: values[n - 1],
        });
    }
    // fewest interior zeros of z on (0, T) first, then the largest u
    let candidates = opts.newton.execution.map(&cells, |&(c1, c2)| {
        let root = refine_in_cell(c1, c2, &z_of, opts)?;
        let crossings = interior_crossings(primaries, root.u, io).map_err(flow_err(Stage::Massless))?;
        Ok::<_, SolverError>((root, crossings))
    });
    let mut best: Option<(usize, MasslessRoot, usize)> = None;
    for (i, c) in candidates.into_iter().enumerate() {
        let (root, crossings) = c?;
        if best.as_ref().is_none_or(|b| crossings <= b.2) {
            best = Some((i, root, crossings));
        }
    }
    let (chosen, mut root, crossings) = best.expect("at least one cell");
    root.interior_crossings = crossings;
    root.alternatives = cells
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != chosen)
        .map(|(_, &c)| c)
        .collect();
    Ok(root)
}

/// Sign changes of `z` strictly inside `(0, T)` for massless speed `u`.
pub fn interior_crossings(
    primaries: &Arc<PrimariesTrajectory>,
    u: f64,
    opts: &IntegratorOptions,
) -> Result<usize, FlowError> {
    let traj = crate::integrator::Trajectory::from_primaries(Arc::clone(primaries), 0.0, u, opts)?;
    let (_, t_end) = traj.span();
    let margin = 1e-6 * t_end;
    let mut prev: Option<f64> = None;
    let mut count = 0;
    for t in traj.sample_times(4) {
        if t < margin || t > t_end - margin {
            continue;
        }
        let z = traj.state(t).expect("sample in span").z;
        if let Some(p) = prev {
            if p * z < 0.0 {
                count += 1;
            }
        }
        if z != 0.0 {
            prev = Some(z);
        }
    }
    Ok(count)
}

fn near_root<Z>(guess: f64, u_max: f64, z_of: &Z, opts: &SolverOptions) -> Result<MasslessRoot, SolverError>
where
    Z: Fn(f64) -> Result<f64, SolverError>,
{
    let floor = 1e-6 * u_max;
    let ceil = u_max * (1.0 - 1e-6);
    let clamp = |u: f64| u.clamp(floor, ceil);
    let mut width = 1e-3 * u_max;
    let z0 = z_of(clamp(guess))?;
    if z0 == 0.0 {
        return Ok(MasslessRoot { u: clamp(guess), z: 0.0, iterations: 0, interior_crossings: 0, alternatives: vec![] });
    }
    for _ in 0..12 {
        let (lo, hi) = (clamp(guess - width), clamp(guess + width));
        let (zl, zh) = (z_of(lo)?, z_of(hi)?);
        // prefer the side nearer the guess when both straddle
        let z_mid = z0;
        if zl * z_mid <= 0.0 {
            return refine_in_cell(lo, clamp(guess), z_of, opts);
        }
        if zh * z_mid <= 0.0 {
            return refine_in_cell(clamp(guess), hi, z_of, opts);
        }
        if lo == floor && hi == ceil {
            return Err(SolverError::NoSignChange { u1: lo, u2: hi, z1: zl, z2: zh });
        }
        width *= 2.0;
    }
    let (lo, hi) = (clamp(guess - width), clamp(guess + width));
    Err(SolverError::NoSignChange { u1: lo, u2: hi, z1: z_of(lo)?, z2: z_of(hi)? })
}

fn refine_in_cell<Z>(u1: f64, u2: f64, z_of: &Z, opts: &SolverOptions) -> Result<MasslessRoot, SolverError>
where
    Z: Fn(f64) -> Result<f64, SolverError>,
{
    let tol = opts.newton.tol_residual;
    let (mut lo, mut hi) = (u1, u2);
    let mut z_lo = z_of(lo)?;
    if z_lo == 0.0 || lo == hi {
        return Ok(MasslessRoot { u: lo, z: z_lo, iterations: 0, interior_crossings: 0, alternatives: vec![] });
    }
    let z_hi = z_of(hi)?;
    if z_hi == 0.0 {
        return Ok(MasslessRoot { u: hi, z: 0.0, iterations: 0, interior_crossings: 0, alternatives: vec![] });
    }
    if z_lo * z_hi > 0.0 {
        return Err(SolverError::NoSignChange { u1, u2, z1: z_lo, z2: z_hi });
    }
    let mut iterations = 0;
    // bisection to a few digits, then Newton kept inside the bracket
    let coarse = 1e-4 * (hi - lo);
    while hi - lo > coarse {
        let mid = 0.5 * (lo + hi);
        let zm = z_of(mid)?;
        iterations += 1;
        if zm == 0.0 {
            return Ok(MasslessRoot { u: mid, z: 0.0, iterations, interior_crossings: 0, alternatives: vec![] });
        }
        if (zm < 0.0) == (z_lo < 0.0) {
            lo = mid;
            z_lo = zm;
        } else {
            hi = mid;
        }
    }
    let mut u = 0.5 * (lo + hi);
    let mut z = z_of(u)?;
    while z.abs() > tol && iterations < 200 {
        iterations += 1;
        let h = (opts.newton.fd_step * u.abs()).max(1e-8);
        let slope = (z_of(u + h)? - z) / h;
        let newton = u - z / slope;
        if (z < 0.0) == (z_lo < 0.0) {
            lo = u;
            z_lo = z;
        } else {
            hi = u;
        }
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == u || hi - lo <= f64::EPSILON * u.abs() {
            break;
        }
        u = next;
        z = z_of(u)?;
    }
    Ok(MasslessRoot { u, z, iterations, interior_crossings: 0, alternatives: vec![] })
}

/// Solved shooting point with its verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPoint {
    pub point: ShootingPoint,
    pub k: u32,
    pub report: PeriodicityReport,
    pub converged: bool,
    pub iterations: usize,
    /// Other `u` brackets found by the stage-2 scan.
    pub alternatives: Vec<(f64, f64)>,
}

/// Starting values for [`solve_point_from`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGuess {
    pub a: f64,
    /// Primaries' half-period `T1`, not `k T1`.
    pub t1: f64,
    /// Massless speed; `None` scans the default range.
    pub u: Option<f64>,
}

fn check_k(k: u32) -> Result<(), SolverError> {
    if k == 0 {
        return Err(SolverError::InvalidInput("k must be at least 1".into()));
    }
    Ok(())
}

/// Solve the point at `b` with period multiple `k`.
///
/// The primaries' guess is carried from `b = 0` by natural stepping in `b`;
/// at `b = 0` the massless speed is seeded by inverting `T(u) = k T1*`.
pub fn solve_point(params: &ProblemParams, b: f64, k: u32, opts: &SolverOptions) -> Result<SolutionPoint, SolverError> {
    check_k(k)?;
    let c = params.constants();
    if b == 0.0 {
        let u0 = period::invert_period(params, k as f64 * c.t1_star)?;
        let guess = PointGuess { a: c.a_star, t1: c.t1_star, u: Some(u0) };
        return solve_point_from(params, 0.0, k, &guess, opts);
    }
    let (a, t1) = walk_primaries(params, b, opts)?;
    solve_point_from(params, b, k, &PointGuess { a, t1, u: None }, opts)
}

/// Natural-parameter stepping of the primaries from `b = 0` to `b`.
fn walk_primaries(params: &ProblemParams, target: f64, opts: &SolverOptions) -> Result<(f64, f64), SolverError> {
    let c = params.constants();
    let (mut b, mut guess) = (0.0_f64, (c.a_star, c.t1_star));
    let mut prev: Option<(f64, (f64, f64))> = None;
    let mut step = 0.05_f64.min(target.abs());
    let sign = target.signum();
    while b != target {
        let next = if (target - b).abs() <= step { target } else { b + sign * step };
        // linear extrapolation from the last two points
        let predicted = match prev {
            Some((pb, (pa, pt))) if b != pb => {
                let s = (next - b) / (b - pb);
                (guess.0 + s * (guess.0 - pa), guess.1 + s * (guess.1 - pt))
            }
            _ => guess,
        };
        match solve_primaries(params, next, predicted, opts) {
            Ok(root) => {
                prev = Some((b, guess));
                b = next;
                guess = (root.a, root.t_half);
            }
            Err(e) => {
                step *= 0.5;
                if step < 1e-7 {
                    return Err(e);
                }
            }
        }
    }
    Ok(guess)
}

/// Staged solve at `b` from explicit starting values.
pub fn solve_point_from(
    params: &ProblemParams,
    b: f64,
    k: u32,
    guess: &PointGuess,
    opts: &SolverOptions,
) -> Result<SolutionPoint, SolverError> {
    check_k(k)?;
    let prim = solve_primaries(params, b, (guess.a, guess.t1), opts)?;
    finish_point(params, b, k, &prim, guess.u, opts.polish && b != 0.0, opts)
}

/// Stages 2 and 3 plus verification, from a solved primaries orbit at `b`.
pub fn finish_point(
    params: &ProblemParams,
    b: f64,
    k: u32,
    prim: &PrimariesRoot,
    u_hint: Option<f64>,
    polish_point: bool,
    opts: &SolverOptions,
) -> Result<SolutionPoint, SolverError> {
    check_k(k)?;
    let io = &opts.integrator;
    let mut iterations = prim.iterations;
    let t_target = k as f64 * prim.t_half;

    let primaries = flow::shoot_primaries(params, prim.a, b, t_target, io).map_err(flow_err(Stage::Massless))?;
    let bracket = match u_hint {
        Some(u) => UBracket::Near(u),
        None => UBracket::Scan,
    };
    let massless = solve_massless_on(params, &primaries, bracket, opts)?;
    iterations += massless.iterations;

    let mut point = ShootingPoint::new(prim.a, b, massless.u, t_target);
    let mut converged = massless.z.abs() <= opts.newton.tol_residual;
    if polish_point {
        let outcome = polish(params, &point, opts)?;
        iterations += outcome.iterations;
        point = ShootingPoint::new(outcome.x[0], b, outcome.x[1], outcome.x[2]);
        converged = outcome.converged;
    }

    let report = flow::verify_periodicity(params, &point, io).map_err(flow_err(Stage::Verify))?;
    converged &= report.residual_norm <= 10.0 * opts.newton.tol_residual;
    Ok(SolutionPoint {
        point,
        k,
        report,
        converged,
        iterations,
        alternatives: massless.alternatives,
    })
}

/// Joint Newton on `(a, u, T)` at fixed `b != 0`.
pub fn polish(params: &ProblemParams, point: &ShootingPoint, opts: &SolverOptions) -> Result<NewtonOutcome, SolverError> {
    let b = point.b;
    if b == 0.0 {
        return Err(SolverError::InvalidInput("polish needs b != 0".into()));
    }
    let io = &opts.integrator;
    let scaled = |x: &[f64]| -> Result<Vec<f64>, FlowError> {
        let r = flow::residual3(params, &ShootingPoint::new(x[0], b, x[1], x[2]), io)?;
        Ok(vec![r[0], r[1] / b, r[2]])
    };
    let outcome = newton_solve(scaled, &[point.a, point.u, point.t_half], &opts.newton)
        .map_err(|source| SolverError::Newton { stage: Stage::Polish, source })?;
    let raw = flow::residual3(params, &ShootingPoint::new(outcome.x[0], b, outcome.x[1], outcome.x[2]), io)
        .map_err(flow_err(Stage::Polish))?;
    Ok(NewtonOutcome {
        converged: inf_norm(&raw) <= opts.newton.tol_residual,
        residual_norm: inf_norm(&raw),
        ..outcome
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p3() -> ProblemParams {
        ProblemParams::new(3, 1.0, 2.0).unwrap()
    }

    #[test]
    fn scalar_newton() {
        let out = newton_solve(|x: &[f64]| Ok::<_, String>(vec![x[0] * x[0] - 4.0]), &[3.0], &NewtonOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_errors() {
        let opts = NewtonOptions::default();
        let flat = newton_solve(|x: &[f64]| Ok::<_, String>(vec![1.0 + 0.0 * x[0]]), &[0.0], &opts);
        assert!(matches!(flat, Err(NewtonError::SingularJacobian { .. })));
        // |x| + 1 has no root and its Newton step overshoots symmetric
        let kink = newton_solve(|x: &[f64]| Ok::<_, String>(vec![x[0].abs().sqrt() + 1.0]), &[1.0], &opts);
        assert!(matches!(kink, Err(NewtonError::NoProgress { .. })));
        let bad = NewtonOptions { fd_step: 0.1, ..opts };
        assert!(newton_solve(|x: &[f64]| Ok::<_, String>(x.to_vec()), &[1.0], &bad).is_err());
        let fails = newton_solve(|_: &[f64]| Err::<Vec<f64>, _>("boom"), &[1.0], &opts);
        assert!(matches!(fails, Err(NewtonError::Evaluation { .. })));
    }

    #[test]
    fn quadratic_tail() {
        let f = |x: &[f64]| Ok::<_, String>(vec![x[0].exp() - 2.0 + x[1], x[1] * x[1] * x[1] + x[0] - 1.0]);
        let out = newton_solve(f, &[0.3, 0.6], &NewtonOptions { tol_residual: 1e-14, ..Default::default() }).unwrap();
        assert!(out.converged);
        let tail: Vec<f64> = out.history.iter().copied().filter(|&r| r < 1e-4 && r > 1e-13).collect();
        for w in tail.windows(2) {
            assert!(w[1] <= 50.0 * w[0] * w[0], "{:?}", out.history);
        }
    }

    #[test]
    fn primaries_base_point_and_small_b() {
        let p = p3();
        let c = p.constants();
        let opts = SolverOptions::default();
        let base = solve_primaries(&p, 0.0, (c.a_star, c.t1_star), &opts).unwrap();
        assert_eq!((base.a, base.t_half), (c.a_star, c.t1_star));
        let root = solve_primaries(&p, 0.1, (c.a_star, c.t1_star), &opts).unwrap();
        assert!(inf_norm(&root.residual) <= 1e-10);
        assert!((root.a - c.a_star).abs() < 0.05 && (root.t_half - c.t1_star).abs() < 0.2);
        let mirror = solve_primaries(&p, -0.1, (c.a_star, c.t1_star), &opts).unwrap();
        assert_relative_eq!(mirror.a, root.a, max_relative = 1e-9);
        assert_relative_eq!(mirror.t_half, root.t_half, max_relative = 1e-9);
    }

    #[test]
    fn circular_massless_root() {
        let p = p3();
        let c = p.constants();
        let opts = SolverOptions::default();
        let t = period::period_t(&p, 1.0).unwrap();
        let root = solve_massless_u(&p, c.a_star, 0.0, t, UBracket::Within(0.5, 1.5), &opts).unwrap();
        assert!((root.u - 1.0).abs() < 1e-8, "{root:?}");
        assert!(root.u >= 0.5 && root.u <= 1.5);
        let none = solve_massless_u(&p, c.a_star, 0.0, t, UBracket::Within(1.2, 1.5), &opts);
        assert!(matches!(none, Err(SolverError::NoSignChange { .. })));
    }

    #[test]
    fn published_massless_speeds() {
        let p = p3();
        let opts = SolverOptions::default();
        let one = solve_massless_u(&p, 0.581722, 0.81081, 6.53474, UBracket::Within(0.5, 2.4), &opts).unwrap();
        assert!((one.u - 1.96752).abs() < 1e-3, "{one:?}");
        let two = solve_massless_u(&p, 1.37168, 0.717282, 6.95831, UBracket::Scan, &opts).unwrap();
        assert!((two.u - 1.73494).abs() < 1e-3, "{two:?}");
    }

    #[test]
    fn seed_point() {
        let p = p3();
        let opts = SolverOptions::default();
        let sp = solve_point(&p, 0.0, 1, &opts).unwrap();
        assert!(sp.converged);
        assert_eq!(sp.point.a, p.constants().a_star);
        let t = period::period_t(&p, sp.point.u).unwrap();
        assert_relative_eq!(t, p.constants().t1_star, max_relative = 1e-8);
        assert!(solve_point(&p, 0.0, 0, &opts).is_err());
    }

    #[test]
    fn polished_point_is_periodic() {
        let p = p3();
        let opts = SolverOptions::default();
        let sp = solve_point(&p, 0.1, 1, &opts).unwrap();
        assert!(sp.converged, "{sp:?}");
        assert!(sp.report.state_gap <= 1e-8, "{:?}", sp.report);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn massless_root_stays_in_bracket(u0 in 0.3f64..2.0, lo_frac in 0.05f64..0.9, hi_frac in 0.05f64..0.9) {
            let p = p3();
            let c = p.constants();
            let t = period::period_t(&p, u0).unwrap();
            let (u1, u2) = (u0 * (1.0 - 0.2 * lo_frac), (u0 * (1.0 + 0.2 * hi_frac)).min(0.99 * c.u_max));
            let root = solve_massless_u(&p, c.a_star, 0.0, t, UBracket::Within(u1, u2), &SolverOptions::default()).unwrap();
            prop_assert!(root.u >= u1 && root.u <= u2);
            prop_assert!((root.u - u0).abs() < 1e-7);
        }
    }
}
