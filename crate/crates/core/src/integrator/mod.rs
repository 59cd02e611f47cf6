//! Integration of the reduced hip-hop system with dense output.
//!
//! The primaries' subsystem `(r, r', d, d', theta)` does not see the massless
//! body, so it is integrated on its own; the massless body `(z, z')` is then
//! integrated against the primaries' continuous extension. Both stages are
//! adaptive DOP853 runs with the same tolerances. Keeping them separate makes
//! the primaries' values exactly independent of `u` and lets one primaries run
//! serve many massless runs.

pub mod dop853;
mod tableau;

use std::sync::Arc;

use thiserror::Error;

use crate::model::{ProblemParams, ReducedState};
pub use dop853::{DenseSolution, IntegrationError, OdeSystem, StepControl, SystemFault};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
    /// Collision floor for `r`; `None` means `1e-8 * r0`.
    pub r_min: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: None,
            max_steps: 10_000_000,
            r_min: None,
        }
    }
}

impl IntegratorOptions {
    fn control(&self) -> StepControl {
        StepControl {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            max_steps: self.max_steps,
        }
    }

    pub fn collision_floor(&self, params: &ProblemParams) -> f64 {
        self.r_min.unwrap_or(1e-8 * params.r0())
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        self.control().validate()
    }
}

struct PrimariesSystem<'a> {
    params: &'a ProblemParams,
    a: f64,
    r_min: f64,
}

impl OdeSystem<5> for PrimariesSystem<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 5], dy: &mut [f64; 5]) -> Result<(), SystemFault> {
        let r = y[0];
        if !(r > self.r_min) {
            return Err(SystemFault::Collision { r });
        }
        let (f, g) = self.params.primary_forces(self.a, r, y[2]);
        dy[0] = y[1];
        dy[1] = f;
        dy[2] = y[3];
        dy[3] = g;
        dy[4] = self.a / (r * r);
        Ok(())
    }
}

struct MasslessSystem<'a> {
    primaries: &'a PrimariesTrajectory,
}

impl OdeSystem<2> for MasslessSystem<'_> {
    fn rhs(&self, t: f64, y: &[f64; 2], dy: &mut [f64; 2]) -> Result<(), SystemFault> {
        let p = self.primaries.eval_clamped(t);
        dy[0] = y[1];
        dy[1] = self.primaries.params.axial_force(p[0], p[2], y[0]);
        Ok(())
    }
}

/// Dense solution of the primaries' subsystem for one angular momentum `a`.
#[derive(Debug, Clone)]
pub struct PrimariesTrajectory {
    params: ProblemParams,
    a: f64,
    dense: DenseSolution<5>,
}

impl PrimariesTrajectory {
    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn angular_momentum(&self) -> f64 {
        self.a
    }

    pub fn span(&self) -> (f64, f64) {
        self.dense.span()
    }

    pub fn dense(&self) -> &DenseSolution<5> {
        &self.dense
    }

    /// `(r, r', d, d', theta)` at `t`.
    pub fn eval(&self, t: f64) -> Option<[f64; 5]> {
        self.dense.eval(t)
    }

    fn eval_clamped(&self, t: f64) -> [f64; 5] {
        let (t0, t1) = self.dense.span();
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        self.dense.eval(t.clamp(lo, hi)).expect("clamped time lies in span")
    }
}

/// Integrate the primaries from `(r, r', d, d', theta)` at `t_span.0`.
pub fn integrate_primaries(
    params: &ProblemParams,
    a: f64,
    start: [f64; 5],
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<PrimariesTrajectory, IntegrationError> {
    let r_min = opts.collision_floor(params);
    if !(start[0] > r_min) {
        return Err(IntegrationError::Collision { t: t_span.0, r: start[0] });
    }
    let system = PrimariesSystem { params, a, r_min };
    let dense = dop853::solve(&system, t_span.0, start, t_span.1, &opts.control())?;
    Ok(PrimariesTrajectory {
        params: params.clone(),
        a,
        dense,
    })
}

/// Full reduced trajectory: primaries plus the massless body.
#[derive(Debug, Clone)]
pub struct Trajectory {
    primaries: Arc<PrimariesTrajectory>,
    massless: DenseSolution<2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EventError {
    #[error("functional has no sign change on [{ta}, {tb}] (values {fa:e}, {fb:e})")]
    NoSignChange { ta: f64, tb: f64, fa: f64, fb: f64 },
    #[error("bracket [{ta}, {tb}] is not inside the trajectory span")]
    OutOfSpan { ta: f64, tb: f64 },
}

impl Trajectory {
    /// Integrate the massless body from `(z, z')` at the primaries' start time
    /// over the primaries' span.
    pub fn from_primaries(
        primaries: Arc<PrimariesTrajectory>,
        z0: f64,
        zdot0: f64,
        opts: &IntegratorOptions,
    ) -> Result<Self, IntegrationError> {
        let (t0, t1) = primaries.span();
        let massless = {
            let system = MasslessSystem { primaries: &primaries };
            dop853::solve(&system, t0, [z0, zdot0], t1, &opts.control())?
        };
        Ok(Self { primaries, massless })
    }

    pub fn params(&self) -> &ProblemParams {
        &self.primaries.params
    }

    pub fn angular_momentum(&self) -> f64 {
        self.primaries.a
    }

    pub fn primaries(&self) -> &Arc<PrimariesTrajectory> {
        &self.primaries
    }

    pub fn span(&self) -> (f64, f64) {
        self.massless.span()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.massless.contains(t)
    }

    pub fn step_count(&self) -> usize {
        self.primaries.dense.step_count() + self.massless.step_count()
    }

    pub fn rejected_count(&self) -> usize {
        self.primaries.dense.rejected_count() + self.massless.rejected_count()
    }

    pub fn state(&self, t: f64) -> Option<ReducedState> {
        let p = self.primaries.dense.eval(t)?;
        let z = self.massless.eval(t)?;
        Some(ReducedState {
            r: p[0],
            rdot: p[1],
            d: p[2],
            ddot: p[3],
            theta: p[4],
            z: z[0],
            zdot: z[1],
        })
    }

    /// Time derivative of the state as given by the interpolant.
    pub fn rate(&self, t: f64) -> Option<ReducedState> {
        let (_, p) = self.primaries.dense.eval_with_rate(t)?;
        let (_, z) = self.massless.eval_with_rate(t)?;
        Some(ReducedState {
            r: p[0],
            rdot: p[1],
            d: p[2],
            ddot: p[3],
            theta: p[4],
            z: z[0],
            zdot: z[1],
        })
    }

    pub fn final_state(&self) -> ReducedState {
        let (_, t1) = self.span();
        self.state(t1).expect("end of span")
    }

    pub fn energy(&self, t: f64) -> Option<f64> {
        let p = self.primaries.dense.eval(t)?;
        Some(self
            .params()
            .energy_unchecked(self.angular_momentum(), p[0], p[1], p[2], p[3]))
    }

    /// Sample times covering every step of both stages, each step split into
    /// `per_step` pieces; sorted in the direction of integration.
    pub fn sample_times(&self, per_step: usize) -> Vec<f64> {
        let (t0, t1) = self.span();
        let dir = (t1 - t0).signum();
        let per_step = per_step.max(1);
        let mut times: Vec<f64> = Vec::new();
        for seg in self.primaries.dense.segments() {
            for j in 0..per_step {
                times.push(seg.t_start + seg.h * j as f64 / per_step as f64);
            }
        }
        for seg in self.massless.segments() {
            for j in 0..per_step {
                times.push(seg.t_start + seg.h * j as f64 / per_step as f64);
            }
        }
        times.push(t1);
        times.sort_by(|x, y| (dir * x).total_cmp(&(dir * y)));
        times.dedup();
        times
    }

    /// First root of `functional` strictly after `after` (in integration
    /// direction), located with [`locate_event`].
    pub fn first_crossing<F>(&self, functional: F, after: f64) -> Option<f64>
    where
        F: Fn(f64, &ReducedState) -> f64,
    {
        let (t0, t1) = self.span();
        let dir = (t1 - t0).signum();
        let times: Vec<f64> = self
            .sample_times(4)
            .into_iter()
            .filter(|&t| dir * (t - after) > 0.0)
            .collect();
        let value = |t: f64| functional(t, &self.state(t).expect("sample in span"));
        let mut prev: Option<(f64, f64)> = None;
        for t in times {
            let v = value(t);
            if let Some((tp, vp)) = prev {
                if vp * v < 0.0 {
                    return locate_event(self, &functional, (tp, t)).ok();
                }
            }
            if v == 0.0 {
                return Some(t);
            }
            prev = Some((t, v));
        }
        None
    }
}

/// Integrate the full reduced system from `state0` over `t_span`.
pub fn integrate(
    params: &ProblemParams,
    a: f64,
    state0: &ReducedState,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory, IntegrationError> {
    let start = [state0.r, state0.rdot, state0.d, state0.ddot, state0.theta];
    let primaries = Arc::new(integrate_primaries(params, a, start, t_span, opts)?);
    Trajectory::from_primaries(primaries, state0.z, state0.zdot, opts)
}

/// Root of `functional` inside `bracket` by bisection on the dense output.
pub fn locate_event<F>(traj: &Trajectory, functional: F, bracket: (f64, f64)) -> Result<f64, EventError>
where
    F: Fn(f64, &ReducedState) -> f64,
{
    let (ta, tb) = bracket;
    if !(traj.contains(ta) && traj.contains(tb)) {
        return Err(EventError::OutOfSpan { ta, tb });
    }
    let g = |t: f64| functional(t, &traj.state(t).expect("bracket in span"));
    bisect(g, ta, tb)
}

/// Bisection to machine resolution; requires a strict sign change.
pub fn bisect<G: Fn(f64) -> f64>(g: G, ta: f64, tb: f64) -> Result<f64, EventError> {
    let (mut lo, mut hi) = (ta, tb);
    let (mut flo, fhi) = (g(lo), g(hi));
    if !(flo * fhi < 0.0) {
        return Err(EventError::NoSignChange {
            ta,
            tb,
            fa: flo,
            fb: fhi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = g(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> ProblemParams {
        ProblemParams::new(3, 1.0, 2.0).unwrap()
    }

    #[test]
    fn initial_state_is_exact() {
        let p = p3();
        let c = p.constants();
        let s0 = ReducedState::initial(&p, 0.3, 0.7);
        let traj = integrate(&p, c.a_star, &s0, (0.0, 3.0), &IntegratorOptions::default()).unwrap();
        assert_eq!(traj.state(0.0).unwrap(), s0);
    }

    #[test]
    fn collision_start_is_rejected() {
        let p = p3();
        let mut s0 = ReducedState::initial(&p, 0.0, 0.0);
        s0.r = 1e-12;
        let err = integrate(&p, 1.0, &s0, (0.0, 1.0), &IntegratorOptions::default()).unwrap_err();
        assert!(matches!(err, IntegrationError::Collision { t, .. } if t == 0.0));
    }

    #[test]
    fn radial_infall_collides() {
        // a = 0: no centrifugal barrier, the ring collapses onto the axis
        let p = p3();
        let s0 = ReducedState::initial(&p, 0.0, 0.0);
        let opts = IntegratorOptions {
            r_min: Some(1e-3),
            ..Default::default()
        };
        let err = integrate(&p, 0.0, &s0, (0.0, 50.0), &opts).unwrap_err();
        match err {
            IntegrationError::Collision { t, r } => {
                assert!(t > 0.0 && t < 50.0);
                assert!(r <= 1e-3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn event_without_sign_change() {
        let p = p3();
        let c = p.constants();
        let traj = integrate(
            &p,
            c.a_star,
            &ReducedState::equilibrium(&p),
            (0.0, 5.0),
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            locate_event(&traj, |_, s| s.rdot, (0.5, 4.5)),
            Err(EventError::NoSignChange { .. })
        ));
        assert!(matches!(
            locate_event(&traj, |_, s| s.rdot, (0.5, 6.0)),
            Err(EventError::OutOfSpan { .. })
        ));
    }

    #[test]
    fn bisect_finds_cosine_root() {
        let t = bisect(|x: f64| x.cos(), 1.0, 2.0).unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
