//! Parameter-to-solution maps and periodicity checks.
//!
//! For shooting data `(a, b, u, T)` the reduced system starts from
//! `(r0, 0, 0, b, 0, 0, u)` and the maps `R', D, Z, Theta` are read off at
//! `t = T`. When `R'(T) = D(T) = Z(T) = 0` the reflection symmetries of the
//! flow make the solution `2T`-periodic in `r, d, z`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{self, IntegrationError, IntegratorOptions, PrimariesTrajectory, Trajectory};
use crate::model::{ProblemParams, ReducedState};

const SYMMETRY_GRID: usize = 65;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid shooting point: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// Shooting data: angular momentum `a`, initial ring speed `b`, initial
/// massless speed `u`, candidate half-period `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingPoint {
    pub a: f64,
    pub b: f64,
    pub u: f64,
    #[serde(rename = "T")]
    pub t_half: f64,
}

impl ShootingPoint {
    pub fn new(a: f64, b: f64, u: f64, t_half: f64) -> Self {
        Self { a, b, u, t_half }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if ![self.a, self.b, self.u, self.t_half].iter().all(|v| v.is_finite()) {
            return Err(FlowError::InvalidPoint(format!("non-finite entry in {self:?}")));
        }
        if !(self.t_half > 0.0) {
            return Err(FlowError::InvalidPoint(format!("T = {} must be positive", self.t_half)));
        }
        Ok(())
    }

    pub fn initial_state(&self, params: &ProblemParams) -> ReducedState {
        ReducedState::initial(params, self.b, self.u)
    }
}

/// Values of the maps at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapValues {
    pub rdot: f64,
    pub d: f64,
    pub z: f64,
    pub theta: f64,
}

impl MapValues {
    pub fn residual(&self) -> [f64; 3] {
        [self.rdot, self.d, self.z]
    }
}

pub fn evaluate_maps(
    params: &ProblemParams,
    point: &ShootingPoint,
    opts: &IntegratorOptions,
) -> Result<(MapValues, Trajectory), FlowError> {
    point.validate()?;
    let traj = integrator::integrate(
        params,
        point.a,
        &point.initial_state(params),
        (0.0, point.t_half),
        opts,
    )?;
    let end = traj.final_state();
    let maps = MapValues {
        rdot: end.rdot,
        d: end.d,
        z: end.z,
        theta: end.theta,
    };
    Ok((maps, traj))
}

/// `(R', D, Z)` at `T`.
pub fn residual3(
    params: &ProblemParams,
    point: &ShootingPoint,
    opts: &IntegratorOptions,
) -> Result<[f64; 3], FlowError> {
    Ok(evaluate_maps(params, point, opts)?.0.residual())
}

/// Primaries integrated from the flat ring with speed `b` over `[0, T]`.
pub fn shoot_primaries(
    params: &ProblemParams,
    a: f64,
    b: f64,
    t_half: f64,
    opts: &IntegratorOptions,
) -> Result<Arc<PrimariesTrajectory>, FlowError> {
    ShootingPoint::new(a, b, 0.0, t_half).validate()?;
    let start = [params.r0(), 0.0, 0.0, b, 0.0];
    Ok(Arc::new(integrator::integrate_primaries(params, a, start, (0.0, t_half), opts)?))
}

/// `(R', D)` at `T`; the massless body plays no part.
pub fn residual2_primaries(
    params: &ProblemParams,
    a: f64,
    b: f64,
    t_half: f64,
    opts: &IntegratorOptions,
) -> Result<[f64; 2], FlowError> {
    let p = shoot_primaries(params, a, b, t_half, opts)?;
    let end = p.dense().final_state();
    Ok([end[1], end[2]])
}

/// `Z` at the end of an existing primaries run, for massless speed `u`.
pub fn massless_z(
    primaries: &Arc<PrimariesTrajectory>,
    u: f64,
    opts: &IntegratorOptions,
) -> Result<f64, FlowError> {
    let traj = Trajectory::from_primaries(Arc::clone(primaries), 0.0, u, opts)?;
    Ok(traj.final_state().z)
}

/// Diagnostics of a candidate periodic orbit over `[0, 2T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PeriodicityReport {
    pub residual: [f64; 3],
    pub residual_norm: f64,
    pub state_gap: f64,
    pub theta_advance: f64,
    pub symmetry_defect: f64,
    pub energy_drift: f64,
}

pub fn verify_periodicity(
    params: &ProblemParams,
    point: &ShootingPoint,
    opts: &IntegratorOptions,
) -> Result<PeriodicityReport, FlowError> {
    point.validate()?;
    let t = point.t_half;
    let start = point.initial_state(params);
    let traj = integrator::integrate(params, point.a, &start, (0.0, 2.0 * t), opts)?;
    let at = |s: f64| traj.state(s).expect("time inside the integrated span");

    let mid = at(t);
    let residual = [mid.rdot, mid.d, mid.z];
    let residual_norm = residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let end = traj.final_state();
    let state_gap = end.gap_excluding_theta(&start);

    let mut symmetry_defect = 0.0_f64;
    for i in 0..SYMMETRY_GRID {
        let s = t * i as f64 / (SYMMETRY_GRID - 1) as f64;
        let (fwd, back) = (at(t + s), at(t - s));
        symmetry_defect = symmetry_defect
            .max((fwd.r - back.r).abs())
            .max((fwd.d + back.d).abs())
            .max((fwd.z + back.z).abs());
    }

    let e0 = params.energy_unchecked(point.a, start.r, start.rdot, start.d, start.ddot);
    let scale = if e0 != 0.0 { e0.abs() } else { 1.0 };
    let energy_drift = traj
        .sample_times(1)
        .into_iter()
        .map(|s| (traj.energy(s).expect("sample in span") - e0).abs() / scale)
        .fold(0.0_f64, f64::max);

    Ok(PeriodicityReport {
        residual,
        residual_norm,
        state_gap,
        theta_advance: end.theta,
        symmetry_defect,
        energy_drift,
    })
}
