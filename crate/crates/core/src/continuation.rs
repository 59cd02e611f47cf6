//! Continuation of the solution family in `b` and classification of the
//! primaries' motion.
//!
//! The default is natural-parameter continuation: step `b`, re-solve the rest
//! from an extrapolated guess. It stops when the step underflows, which is
//! how a fold in `b` shows up. The arclength mode instead follows the
//! primaries' branch through `(a, b, T1)` with a secant predictor and an
//! orthogonality constraint, so it can pass folds; the massless speed is then
//! re-solved at every accepted point.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, FlowError, ShootingPoint};
use crate::integrator::{self, IntegratorOptions};
use crate::model::ProblemParams;
use crate::parallel::Execution;
use crate::solver::{self, NewtonError, PointGuess, PrimariesRoot, SolutionPoint, SolverError, SolverOptions, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuationMode {
    Natural,
    Arclength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub initial: f64,
    pub grow: f64,
    pub shrink: f64,
    pub min: f64,
    pub max: f64,
    pub max_failures: usize,
    /// Acceptance bound on the verified state gap.
    pub gap_tol: f64,
    /// Largest corrector move as a fraction of the predicted change (or of
    /// the step, when that is larger).
    pub corrector_limit: f64,
    pub mode: ContinuationMode,
    /// Cap on accepted points, seed included.
    pub max_points: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            grow: 1.5,
            shrink: 0.5,
            min: 1e-7,
            max: 0.05,
            max_failures: 30,
            gap_tol: 1e-8,
            corrector_limit: 0.5,
            mode: ContinuationMode::Natural,
            max_points: 10_000,
        }
    }
}

impl StepOptions {
    pub fn validate(&self) -> Result<(), ContinuationError> {
        let ok = self.min > 0.0
            && self.min <= self.initial
            && self.initial <= self.max
            && self.grow >= 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.gap_tol > 0.0
            && self.corrector_limit > 0.0
            && self.max_points >= 1;
        if !ok {
            return Err(ContinuationError::InvalidInput(format!("step options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRecord {
    pub from_b: f64,
    pub step: f64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum Termination {
    ReachedBMax,
    StepUnderflow { b: f64, reason: String },
    MaxFailures { b: f64 },
    MaxPoints,
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub params: ProblemParams,
    pub k: u32,
    pub mode: ContinuationMode,
    /// Seed first, then in continuation order.
    pub points: Vec<SolutionPoint>,
    pub step_history: Vec<StepRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContinuationError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("seed point at b = 0: {0}")]
    SeedFailure(SolverError),
    #[error("branch point at b = {b} not reached ({termination:?})")]
    NotReached { b: f64, termination: Termination },
    #[error("{0}")]
    Solver(#[from] SolverError),
    #[error("unclassifiable: {reason} (match error {match_error:e})")]
    Unclassifiable { reason: String, match_error: f64 },
}

fn period_multiple_guess(sp: &SolutionPoint) -> PointGuess {
    PointGuess {
        a: sp.point.a,
        t1: sp.point.t_half / sp.k as f64,
        u: Some(sp.point.u),
    }
}

fn accept(sp: &SolutionPoint, opts: &StepOptions) -> Result<(), String> {
    if !sp.converged {
        return Err(format!("not converged (residual {:e})", sp.report.residual_norm));
    }
    if !(sp.report.state_gap <= opts.gap_tol) {
        return Err(format!("state gap {:e}", sp.report.state_gap));
    }
    Ok(())
}

/// Continue the family with period multiple `k` from `b = 0` up to `b_max`.
pub fn continue_family(
    params: &ProblemParams,
    k: u32,
    b_max: f64,
    step: &StepOptions,
    opts: &SolverOptions,
) -> Result<Family, ContinuationError> {
    continue_until(params, k, b_max, step, opts, |_| false)
}

/// As [`continue_family`], also stopping once `stop` returns true for the
/// points accepted so far.
pub fn continue_until<S>(
    params: &ProblemParams,
    k: u32,
    b_max: f64,
    step: &StepOptions,
    opts: &SolverOptions,
    stop: S,
) -> Result<Family, ContinuationError>
where
    S: FnMut(&[SolutionPoint]) -> bool,
{
    step.validate()?;
    if k == 0 {
        return Err(ContinuationError::InvalidInput("k must be at least 1".into()));
    }
    if !(b_max >= 0.0 && b_max.is_finite()) {
        return Err(ContinuationError::InvalidInput(format!("b_max = {b_max}")));
    }
    let seed = solver::solve_point(params, 0.0, k, opts).map_err(ContinuationError::SeedFailure)?;
    let mut family = Family {
        params: params.clone(),
        k,
        mode: step.mode,
        points: vec![seed],
        step_history: Vec::new(),
        termination: Termination::ReachedBMax,
    };
    if b_max == 0.0 {
        return Ok(family);
    }
    match step.mode {
        ContinuationMode::Natural => natural(&mut family, b_max, step, opts, stop),
        ContinuationMode::Arclength => arclength(&mut family, b_max, step, opts, stop),
    }
    Ok(family)
}

fn natural<S>(family: &mut Family, b_max: f64, step: &StepOptions, opts: &SolverOptions, mut stop: S)
where
    S: FnMut(&[SolutionPoint]) -> bool,
{
    let (params, k) = (family.params.clone(), family.k);
    let mut h = step.initial;
    let mut failures = 0;
    loop {
        let last = family.points.last().expect("seed present").clone();
        let b = last.point.b;
        if b >= b_max {
            family.termination = Termination::ReachedBMax;
            return;
        }
        if family.points.len() >= step.max_points {
            family.termination = Termination::MaxPoints;
            return;
        }
        let b_next = (b + h).min(b_max);
        let dh = b_next - b;
        let mut guess = period_multiple_guess(&last);
        let start = guess;
        if let [.., before, _] = family.points.as_slice() {
            let s = dh / (b - before.point.b);
            let g0 = period_multiple_guess(before);
            guess.a += s * (guess.a - g0.a);
            guess.t1 += s * (guess.t1 - g0.t1);
            guess.u = guess.u.zip(g0.u).map(|(u1, u0)| u1 + s * (u1 - u0));
        }
        let outcome = solver::solve_point_from(&params, b_next, k, &guess, opts)
            .map_err(|e| e.to_string())
            .and_then(|sp| {
                accept(&sp, step)?;
                let moved = (sp.point.a - guess.a)
                    .abs()
                    .max((sp.point.t_half / k as f64 - guess.t1).abs())
                    .max((sp.point.u - guess.u.unwrap_or(sp.point.u)).abs());
                let predicted = (guess.a - start.a)
                    .abs()
                    .max((guess.t1 - start.t1).abs())
                    .max((guess.u.unwrap_or(0.0) - start.u.unwrap_or(0.0)).abs());
                if moved > step.corrector_limit * predicted.max(dh) {
                    return Err(format!("corrector moved {moved:e} against predicted change {predicted:e}"));
                }
                Ok(sp)
            });
        match outcome {
            Ok(sp) => {
                family.step_history.push(StepRecord { from_b: b, step: dh, accepted: true, reason: None });
                family.points.push(sp);
                failures = 0;
                h = (h * step.grow).min(step.max);
                if stop(&family.points) {
                    family.termination = Termination::Stopped;
                    return;
                }
            }
            Err(reason) => {
                family.step_history.push(StepRecord { from_b: b, step: dh, accepted: false, reason: Some(reason.clone()) });
                failures += 1;
                h = dh * step.shrink;
                if h < step.min {
                    family.termination = Termination::StepUnderflow { b, reason };
                    return;
                }
                if failures >= step.max_failures {
                    family.termination = Termination::MaxFailures { b };
                    return;
                }
            }
        }
    }
}

/// `(a, b, T1)` of a family point.
fn branch_coords(sp: &SolutionPoint) -> [f64; 3] {
    [sp.point.a, sp.point.b, sp.point.t_half / sp.k as f64]
}

fn norm3(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton on the primaries' residual plus the arclength constraint.
fn arclength_corrector(
    params: &ProblemParams,
    pred: [f64; 3],
    tangent: [f64; 3],
    opts: &SolverOptions,
) -> Result<(f64, PrimariesRoot), SolverError> {
    let io = &opts.integrator;
    let f = |v: &[f64]| -> Result<Vec<f64>, FlowError> {
        if !(v[1] > 0.0) {
            return Err(FlowError::InvalidPoint(format!("b = {} left the positive half-line", v[1])));
        }
        let r = flow::residual2_primaries(params, v[0], v[1], v[2], io)?;
        let along: f64 = (0..3).map(|i| tangent[i] * (v[i] - pred[i])).sum();
        Ok(vec![r[0], r[1] / v[1], along])
    };
    let out = solver::newton_solve(f, &pred, &opts.newton)
        .map_err(|source| SolverError::Newton { stage: Stage::Primaries, source })?;
    let (a, b, t) = (out.x[0], out.x[1], out.x[2]);
    let residual = flow::residual2_primaries(params, a, b, t, io)
        .map_err(|source| SolverError::Flow { stage: Stage::Primaries, source })?;
    let norm = residual[0].abs().max(residual[1].abs());
    if !(norm <= opts.newton.tol_residual) {
        return Err(SolverError::NotConverged { stage: Stage::Primaries, residual: norm, iterations: out.iterations });
    }
    Ok((b, PrimariesRoot { a, t_half: t, residual, iterations: out.iterations }))
}

fn arclength<S>(family: &mut Family, b_max: f64, step: &StepOptions, opts: &SolverOptions, mut stop: S)
where
    S: FnMut(&[SolutionPoint]) -> bool,
{
    // one natural step gives the first secant
    natural(family, step.initial.min(b_max), &StepOptions { max_points: 2.min(step.max_points), ..*step }, opts, |_| false);
    if family.points.len() < 2 || family.points.last().expect("seed").point.b >= b_max {
        return;
    }
    let (params, k) = (family.params.clone(), family.k);
    let mut ds = step.initial;
    let mut failures = 0;
    loop {
        let n = family.points.len();
        if n >= step.max_points {
            family.termination = Termination::MaxPoints;
            return;
        }
        let (prev, last) = (&family.points[n - 2], &family.points[n - 1]);
        let (x0, x1) = (branch_coords(prev), branch_coords(last));
        let chord = [x1[0] - x0[0], x1[1] - x0[1], x1[2] - x0[2]];
        let len = norm3(&chord);
        let tangent = chord.map(|c| c / len);
        let pred = [0, 1, 2].map(|i| x1[i] + ds * tangent[i]);
        let u_pred = last.point.u + (last.point.u - prev.point.u) * ds / len;
        let b_from = x1[1];

        let outcome = arclength_corrector(&params, pred, tangent, opts)
            .and_then(|(b, prim)| {
                solver::finish_point(&params, b, k, &prim, Some(u_pred), false, opts)
            })
            .map_err(|e| e.to_string())
            .and_then(|sp| {
                accept(&sp, step)?;
                let x = branch_coords(&sp);
                let moved = (0..3).map(|i| (x[i] - pred[i]).abs()).fold((sp.point.u - u_pred).abs(), f64::max);
                if moved > step.corrector_limit * ds {
                    return Err(format!("corrector moved {moved:e} for step {ds:e}"));
                }
                Ok(sp)
            });
        match outcome {
            Ok(sp) => {
                let b = sp.point.b;
                family.step_history.push(StepRecord { from_b: b_from, step: ds, accepted: true, reason: None });
                family.points.push(sp);
                failures = 0;
                ds = (ds * step.grow).min(step.max);
                if stop(&family.points) {
                    family.termination = Termination::Stopped;
                    return;
                }
                if b >= b_max {
                    family.termination = Termination::ReachedBMax;
                    return;
                }
            }
            Err(reason) => {
                family.step_history.push(StepRecord { from_b: b_from, step: ds, accepted: false, reason: Some(reason.clone()) });
                failures += 1;
                ds *= step.shrink;
                if ds < step.min {
                    family.termination = Termination::StepUnderflow { b: b_from, reason };
                    return;
                }
                if failures >= step.max_failures {
                    family.termination = Termination::MaxFailures { b: b_from };
                    return;
                }
            }
        }
    }
}

/// Which crossing of a target `b` to return when the branch folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSide {
    /// First arrival at `b`, before any fold.
    BeforeFold,
    /// The return to `b` after the branch has turned back.
    AfterFold,
}

/// Follow the family from `b = 0` to the point at `b_target` on the chosen
/// side of the fold.
pub fn reach_branch_point(
    params: &ProblemParams,
    k: u32,
    b_target: f64,
    side: BranchSide,
    step: &StepOptions,
    opts: &SolverOptions,
) -> Result<SolutionPoint, ContinuationError> {
    if !(b_target > 0.0) {
        return Err(ContinuationError::InvalidInput(format!("b_target = {b_target} must be positive")));
    }
    let done = |fam: &Family| -> Option<SolutionPoint> {
        fam.points.iter().rev().find(|sp| sp.point.b == b_target).cloned()
    };
    match side {
        BranchSide::BeforeFold => {
            let fam = continue_family(params, k, b_target, &StepOptions { mode: ContinuationMode::Natural, ..*step }, opts)?;
            done(&fam).ok_or(ContinuationError::NotReached { b: b_target, termination: fam.termination })
        }
        BranchSide::AfterFold => {
            let mut peak = 0.0_f64;
            let crossed = |pts: &[SolutionPoint]| {
                let b = pts.last().expect("seed").point.b;
                peak = peak.max(b);
                peak > b_target && b < b_target
            };
            let fam = continue_until(
                params,
                k,
                f64::MAX,
                &StepOptions { mode: ContinuationMode::Arclength, ..*step },
                opts,
                crossed,
            )?;
            if fam.termination != Termination::Stopped {
                return Err(ContinuationError::NotReached { b: b_target, termination: fam.termination });
            }
            let n = fam.points.len();
            let (before, after) = (&fam.points[n - 2], &fam.points[n - 1]);
            if before.point.b == b_target {
                return Ok(before.clone());
            }
            let w = (b_target - before.point.b) / (after.point.b - before.point.b);
            let lerp = |x: f64, y: f64| x + w * (y - x);
            let guess = PointGuess {
                a: lerp(before.point.a, after.point.a),
                t1: lerp(before.point.t_half, after.point.t_half) / k as f64,
                u: Some(lerp(before.point.u, after.point.u)),
            };
            Ok(solver::solve_point_from(params, b_target, k, &guess, opts)?)
        }
    }
}

/// Trajectory-sharing pattern of the 2N primaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChoreographyClass {
    pub trajectory_count: usize,
    /// `theta(2T)` reduced to `[0, 2 pi)`.
    pub theta_advance: f64,
    pub match_error: f64,
    /// Number of primaries' half-periods after which the curves close.
    pub closure: usize,
}

/// Distance from `x` to the nearest multiple of `2 pi`.
fn angle_residue(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    r.min(TAU - r)
}

const MAX_CLOSURE: usize = 96;
const MATCH_SAMPLES: usize = 129;

/// Count the distinct closed curves traced by the primaries.
///
/// Over one primaries' half-period `T1 = T/k` the configuration returns to
/// itself rotated by `Theta = theta(T1)` and reflected in the ring plane. Body
/// `j` sits at `R^j` of body 0, with `R` the rotation by `pi/N` composed with
/// the reflection, so body `j` runs along body 0's curve exactly when some
/// `q` has `q Theta = j pi/N (mod 2 pi)` with `q` and `j` of equal parity.
/// Each such match is confirmed by comparing positions along the orbit.
pub fn classify_choreography(
    params: &ProblemParams,
    point: &ShootingPoint,
    k: u32,
    tol: f64,
    opts: &IntegratorOptions,
) -> Result<ChoreographyClass, ContinuationError> {
    point.validate().map_err(|e| SolverError::Flow { stage: Stage::Verify, source: e })?;
    if k == 0 || !(tol > 0.0) {
        return Err(ContinuationError::InvalidInput(format!("k = {k}, tol = {tol}")));
    }
    let n = params.n();
    let r0 = params.r0();
    let t1 = point.t_half / k as f64;
    let flow_failure = |source: FlowError| ContinuationError::Solver(SolverError::Flow { stage: Stage::Verify, source });
    let half = flow::shoot_primaries(params, point.a, point.b, t1, opts).map_err(flow_failure)?;
    let theta = half.dense().final_state()[4];
    let theta_advance = (2.0 * k as f64 * theta).rem_euclid(TAU);

    let mut d_max = 0.0_f64;
    let mut r_dev = 0.0_f64;
    for i in 0..MATCH_SAMPLES {
        let s = half.eval(t1 * i as f64 / (MATCH_SAMPLES - 1) as f64).expect("in span");
        d_max = d_max.max(s[2].abs());
        r_dev = r_dev.max((s[0] - r0).abs());
    }
    if d_max <= tol * r0 && r_dev <= tol * r0 {
        // every body rides the same circle
        return Ok(ChoreographyClass {
            trajectory_count: 1,
            theta_advance,
            match_error: d_max.max(r_dev) / r0,
            closure: 1,
        });
    }
    let flips = d_max > tol * r0;
    let parity_ok = |q: usize, j: usize| !flips || (q % 2 == j % 2);

    let closure = (1..=MAX_CLOSURE)
        .find(|&q| parity_ok(q, 0) && angle_residue(q as f64 * theta) <= tol)
        .ok_or_else(|| ContinuationError::Unclassifiable {
            reason: format!("curve does not close within {MAX_CLOSURE} half-periods (theta = {theta})"),
            match_error: (1..=MAX_CLOSURE)
                .filter(|&q| parity_ok(q, 0))
                .map(|q| angle_residue(q as f64 * theta))
                .fold(f64::INFINITY, f64::min),
        })?;

    let mut matches = Vec::new();
    let mut residue_max = angle_residue(closure as f64 * theta);
    for j in 0..2 * n {
        let best = (0..closure)
            .filter(|&q| parity_ok(q, j))
            .map(|q| (q, angle_residue(q as f64 * theta - j as f64 * PI / n as f64)))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((q, res)) = best {
            if res <= tol {
                residue_max = residue_max.max(res);
                matches.push((j, q));
            }
        }
    }
    let group = matches.len();
    if group == 0 || (2 * n) % group != 0 {
        return Err(ContinuationError::Unclassifiable {
            reason: format!("{group} matching bodies do not divide {}", 2 * n),
            match_error: residue_max,
        });
    }

    // confirm on positions over the whole closed orbit
    let span = (closure as f64 + 1.0) * t1;
    let long = integrator::integrate_primaries(params, point.a, [r0, 0.0, 0.0, point.b, 0.0], (0.0, span), opts)
        .map_err(|e| flow_failure(FlowError::Integration(e)))?;
    let body0 = |t: f64| {
        let s = long.eval(t).expect("in span");
        params.embed_bodies(s[0], s[4], s[2])
    };
    let mut position_err = 0.0_f64;
    for i in 0..MATCH_SAMPLES {
        let t = t1 * i as f64 / (MATCH_SAMPLES - 1) as f64;
        let bodies = body0(t);
        for &(j, q) in &matches {
            let shifted = body0(t + q as f64 * t1)[0];
            let gap = (0..3).map(|c| (bodies[j][c] - shifted[c]).abs()).fold(0.0, f64::max);
            position_err = position_err.max(gap / r0);
        }
    }
    let match_error = residue_max.max(position_err);
    if match_error > tol {
        return Err(ContinuationError::Unclassifiable {
            reason: "angular match not confirmed by positions".into(),
            match_error,
        });
    }
    Ok(ChoreographyClass {
        trajectory_count: 2 * n / group,
        theta_advance,
        match_error,
        closure,
    })
}

/// Classify every point of a family.
pub fn classify_family(
    family: &Family,
    tol: f64,
    opts: &IntegratorOptions,
    execution: Execution,
) -> Vec<Result<ChoreographyClass, ContinuationError>> {
    execution.map(&family.points, |sp| classify_choreography(&family.params, &sp.point, sp.k, tol, opts))
}

/// Nearest angle `(j / q) pi/N` to `theta` with `q <= max_q`, `q` and `j` of
/// equal parity, within `window`; smallest `q` first.
pub fn nearest_commensurate(n: usize, theta: f64, max_q: usize, window: f64) -> Option<f64> {
    let unit = PI / n as f64;
    (1..=max_q).find_map(|q| {
        let j = (q as f64 * theta / unit).round();
        let parity = (j as i64 - q as i64).rem_euclid(2) == 0;
        let target = j * unit / q as f64;
        (parity && (theta - target).abs() * q as f64 <= window).then_some(target)
    })
}

/// Move a solution along its family until `theta(T/k)` hits the nearest
/// commensurate angle, so the closure is exact rather than approximate.
///
/// Solves `(R', D/b, Z, theta(T/k) - target) = 0` for `(a, b, u, T)`.
pub fn refine_commensurate(
    params: &ProblemParams,
    sp: &SolutionPoint,
    window: f64,
    opts: &SolverOptions,
) -> Result<SolutionPoint, ContinuationError> {
    let p = sp.point;
    if p.b == 0.0 {
        return Err(ContinuationError::InvalidInput("refinement needs b != 0".into()));
    }
    let k = sp.k as f64;
    let io = &opts.integrator;
    let (_, traj) = flow::evaluate_maps(params, &p, io).map_err(|source| SolverError::Flow { stage: Stage::Polish, source })?;
    let theta = traj.state(p.t_half / k).expect("in span").theta;
    let target = nearest_commensurate(params.n(), theta, 12, window).ok_or_else(|| ContinuationError::Unclassifiable {
        reason: format!("theta(T1) = {theta} is not within {window} of a commensurate angle"),
        match_error: f64::INFINITY,
    })?;
    let f = |x: &[f64]| -> Result<Vec<f64>, FlowError> {
        let pt = ShootingPoint::new(x[0], x[1], x[2], x[3]);
        let (maps, traj) = flow::evaluate_maps(params, &pt, io)?;
        let th = if sp.k == 1 { maps.theta } else { traj.state(x[3] / k).expect("in span").theta };
        Ok(vec![maps.rdot, maps.d / x[1], maps.z, th - target])
    };
    let out = solver::newton_solve(f, &[p.a, p.b, p.u, p.t_half], &opts.newton)
        .map_err(|source: NewtonError| SolverError::Newton { stage: Stage::Polish, source })?;
    let point = ShootingPoint::new(out.x[0], out.x[1], out.x[2], out.x[3]);
    let report = flow::verify_periodicity(params, &point, io).map_err(|source| SolverError::Flow { stage: Stage::Verify, source })?;
    Ok(SolutionPoint {
        point,
        k: sp.k,
        converged: out.converged && report.residual_norm <= 10.0 * opts.newton.tol_residual,
        report,
        iterations: sp.iterations + out.iterations,
        alternatives: sp.alternatives.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> ProblemParams {
        ProblemParams::new(3, 1.0, 2.0).unwrap()
    }

    #[test]
    fn zero_range_is_the_seed() {
        let p = p3();
        let fam = continue_family(&p, 1, 0.0, &StepOptions::default(), &SolverOptions::default()).unwrap();
        assert_eq!(fam.points.len(), 1);
        assert_eq!(fam.points[0].point.b, 0.0);
        assert_eq!(fam.points[0].point.a, p.constants().a_star);
    }

    #[test]
    fn small_family() {
        let p = p3();
        let step = StepOptions::default();
        let fam = continue_family(&p, 1, 0.05, &step, &SolverOptions::default()).unwrap();
        assert_eq!(fam.termination, Termination::ReachedBMax);
        assert!(fam.points.len() >= 5);
        for w in fam.points.windows(2) {
            assert!(w[1].point.b > w[0].point.b);
            assert!(w[1].point.b - w[0].point.b <= step.max + 1e-15);
        }
        for sp in &fam.points {
            assert!(sp.report.state_gap <= 1e-8, "{sp:?}");
        }
    }

    #[test]
    fn family_is_continuous() {
        let p = p3();
        let opts = SolverOptions::default();
        let fam = continue_family(&p, 1, 0.02, &StepOptions::default(), &opts).unwrap();
        let (x, y) = (&fam.points[fam.points.len() - 2], &fam.points[fam.points.len() - 1]);
        let b = 0.5 * (x.point.b + y.point.b);
        let mid = solver::solve_point_from(&p, b, 1, &period_multiple_guess(x), &opts).unwrap();
        let lerp = |f: fn(&ShootingPoint) -> f64| 0.5 * (f(&x.point) + f(&y.point));
        assert!((mid.point.a - lerp(|q| q.a)).abs() < 1e-4);
        assert!((mid.point.u - lerp(|q| q.u)).abs() < 1e-4);
        assert!((mid.point.t_half - lerp(|q| q.t_half)).abs() < 1e-4);
    }

    #[test]
    fn commensurate_targets() {
        let target = nearest_commensurate(3, 5.23625, 12, 1e-3).unwrap();
        assert!((target - 5.0 * PI / 3.0).abs() < 1e-15);
        assert!((nearest_commensurate(3, 3.14217, 12, 1e-3).unwrap() - PI).abs() < 1e-15);
        assert!(nearest_commensurate(3, 1.0, 2, 1e-6).is_none());
    }

    #[test]
    fn circle_is_one_curve() {
        let p = p3();
        let eq = ShootingPoint::new(p.constants().a_star, 0.0, 0.0, p.constants().t1_star);
        let class = classify_choreography(&p, &eq, 1, 1e-6, &IntegratorOptions::default()).unwrap();
        assert_eq!(class.trajectory_count, 1);
    }

    #[test]
    fn published_points_on_either_side_of_the_fold() {
        let p = p3();
        let (step, opts) = (StepOptions::default(), SolverOptions::default());
        let two = reach_branch_point(&p, 1, 0.717282, BranchSide::BeforeFold, &step, &opts).unwrap();
        for (x, y) in [(two.point.a, 1.37168), (two.point.u, 1.73494), (two.point.t_half, 6.95831)] {
            assert!((x - y).abs() < 1e-3, "{two:?}");
        }
        let one = reach_branch_point(&p, 1, 0.81081, BranchSide::AfterFold, &step, &opts).unwrap();
        for (x, y) in [(one.point.a, 0.581722), (one.point.u, 1.96752), (one.point.t_half, 6.53474)] {
            assert!((x - y).abs() < 1e-3, "{one:?}");
        }
        let natural = reach_branch_point(&p, 1, 0.81081, BranchSide::BeforeFold, &step, &opts).unwrap();
        assert!((natural.point.a - one.point.a).abs() > 0.1);
    }
}
