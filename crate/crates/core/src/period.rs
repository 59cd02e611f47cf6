//! Oscillation period of the massless body when the primaries sit on their
//! circular equilibrium (`a = a*`, `b = 0`).
//!
//! With the ring frozen at `r0` the axial motion conserves
//! `z'^2 = 4mN / sqrt(z^2 + r0^2) + c`, `c = u^2 - 4mN/r0`, so the body turns
//! at `z = ±t1` and the half-period is
//! `T(u) = ∫_{-t1}^{t1} dz / sqrt(4mN/sqrt(z^2+r0^2) + c)`.
//!
//! Substituting `z = t1 sin(phi)` and writing `A = z^2 + r0^2`,
//! `B = t1^2 + r0^2` turns the integrand into
//! `sqrt(sqrt(A) sqrt(B) (sqrt(A) + sqrt(B)) / (4mN))`, which is smooth on
//! `[-pi/2, pi/2]` and free of cancellation.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ProblemParams;
use crate::parallel::Execution;
use crate::quadrature::{self, QuadratureError};

const QUAD_REL_TOL: f64 = 1e-11;
const QUAD_MAX_PANELS: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PeriodError {
    #[error("u = {u} is outside the oscillatory regime |u| < {u_max}")]
    OutOfRegime { u: f64, u_max: f64 },
    #[error("period quadrature failed at u = {u}: {source}")]
    Quadrature { u: f64, source: QuadratureError },
    #[error("no speed in (0, {u_max}) has half-period {target}")]
    NoPreimage { target: f64, u_max: f64 },
}

/// One row of the period curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodSample {
    pub u: f64,
    pub c: f64,
    pub t1: f64,
    #[serde(rename = "T")]
    pub t_half: f64,
}

fn check_regime(params: &ProblemParams, u: f64) -> Result<f64, PeriodError> {
    let u_max = params.constants().u_max;
    if !(u.abs() < u_max) {
        return Err(PeriodError::OutOfRegime { u, u_max });
    }
    Ok(u_max)
}

/// `c = u^2 - 4mN/r0`.
pub fn energy_constant(params: &ProblemParams, u: f64) -> f64 {
    u * u - 4.0 * params.m() * params.n() as f64 / params.r0()
}

/// Turning point `t1 = sqrt(16 m^2 N^2 / c^2 - r0^2)`, evaluated as
/// `t1^2 = (r0 u^2 / |c|)(4mN/|c| + r0)` to stay accurate as `u -> 0`.
pub fn turning_point(params: &ProblemParams, u: f64) -> Result<f64, PeriodError> {
    check_regime(params, u)?;
    let mass = 4.0 * params.m() * params.n() as f64;
    let r0 = params.r0();
    let abs_c = -energy_constant(params, u);
    Ok(((r0 * u * u / abs_c) * (mass / abs_c + r0)).sqrt())
}

/// Half-period `T(u)` of the massless body in the circular case.
pub fn period_t(params: &ProblemParams, u: f64) -> Result<f64, PeriodError> {
    let t1 = turning_point(params, u)?;
    let r0 = params.r0();
    if t1 < 1e-8 * r0 {
        return Ok(params.constants().t2_star);
    }
    let mass = 4.0 * params.m() * params.n() as f64;
    let root_b = mass / -energy_constant(params, u);
    let integrand = |phi: f64| {
        let z = t1 * phi.sin();
        let root_a = (z * z + r0 * r0).sqrt();
        (root_a * root_b * (root_a + root_b) / mass).sqrt()
    };
    // the integrand is even in phi
    quadrature::integrate(integrand, 0.0, FRAC_PI_2, QUAD_REL_TOL, QUAD_MAX_PANELS)
        .map(|half| 2.0 * half)
        .map_err(|source| PeriodError::Quadrature { u, source })
}

pub fn period_sample(params: &ProblemParams, u: f64) -> Result<PeriodSample, PeriodError> {
    let t_half = period_t(params, u)?;
    Ok(PeriodSample {
        u,
        c: energy_constant(params, u),
        t1: turning_point(params, u)?,
        t_half,
    })
}

/// Period samples over a grid, sorted by `u`; out-of-regime entries come back
/// as errors in their sorted position.
pub fn period_curve(
    params: &ProblemParams,
    grid: &[f64],
    execution: Execution,
) -> Vec<Result<PeriodSample, PeriodError>> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    execution.map(&sorted, |&u| period_sample(params, u))
}

/// Smallest speed `u` in `(0, u_max)` with `T(u) = target`.
///
/// `T` is scanned on a uniform grid and the first upward crossing is refined
/// by bisection; monotonicity is not assumed.
pub fn invert_period(params: &ProblemParams, target: f64) -> Result<f64, PeriodError> {
    let u_max = params.constants().u_max;
    const GRID: usize = 64;
    let mut lo = 0.0;
    let mut f_lo = params.constants().t2_star - target;
    for i in 1..GRID {
        let u = u_max * i as f64 / GRID as f64;
        let f = period_t(params, u)? - target;
        if f_lo < 0.0 && f >= 0.0 {
            if f == 0.0 {
                return Ok(u);
            }
            let failure = std::cell::RefCell::new(None);
            let root = crate::integrator::bisect(
                |x| match period_t(params, x) {
                    Ok(v) => v - target,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                },
                lo,
                u,
            );
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            return Ok(root.unwrap_or(u));
        }
        lo = u;
        f_lo = f;
    }
    Err(PeriodError::NoPreimage { target, u_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p3() -> ProblemParams {
        ProblemParams::new(3, 1.0, 2.0).unwrap()
    }

    #[test]
    fn turning_point_unit_speed() {
        let p = p3();
        let t1 = turning_point(&p, 1.0).unwrap();
        assert_relative_eq!(t1, 1.76f64.sqrt(), max_relative = 1e-15);
        // f(t1) + c = 0 with f(z) = 12 / sqrt(z^2 + 4), c = -5
        assert_relative_eq!(12.0 / (t1 * t1 + 4.0).sqrt(), 5.0, max_relative = 1e-14);
    }

    #[test]
    fn turning_point_limits() {
        let p = p3();
        let u_max = p.constants().u_max;
        assert!(turning_point(&p, 1e-9).unwrap() < 1e-8);
        let near = turning_point(&p, u_max * (1.0 - 1e-6)).unwrap();
        let nearer = turning_point(&p, u_max * (1.0 - 1e-7)).unwrap();
        assert!(near > 1e5 && nearer > near);
        assert!(matches!(
            turning_point(&p, u_max),
            Err(PeriodError::OutOfRegime { .. })
        ));
        assert!(turning_point(&p, -u_max * 1.01).is_err());
    }

    #[test]
    fn matches_direct_singular_quadrature() {
        // T(u) from tanh-sinh quadrature of the untransformed singular
        // integral at 40 digits
        let p = p3();
        let cases = [
            (0.5, 3.806_557_918_998_356_9),
            (1.0, 4.475_660_855_994_037_3),
            (1.5, 6.354_451_971_651_523_6),
            (2.0, 14.594_377_737_680_285),
        ];
        for (u, expect) in cases {
            assert_relative_eq!(period_t(&p, u).unwrap(), expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn small_amplitude_limit() {
        let p = p3();
        let t2 = p.constants().t2_star;
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&u| (period_t(&p, u).unwrap() - t2).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!(errs[2] / t2 < 1e-4);
    }

    #[test]
    fn even_in_u() {
        let p = p3();
        for u in [0.1, 0.9, 2.3] {
            assert_eq!(period_t(&p, u).unwrap(), period_t(&p, -u).unwrap());
        }
    }

    #[test]
    fn curve_sorted_with_errors_in_place() {
        let p = p3();
        let u_max = p.constants().u_max;
        let rows = period_curve(&p, &[2.0, u_max, 0.5, 1.0], Execution::Sequential);
        assert_eq!(rows.len(), 4);
        assert!(rows[3].is_err());
        let ok: Vec<f64> = rows[..3].iter().map(|r| r.as_ref().unwrap().t_half).collect();
        assert!(ok[0] < ok[1] && ok[1] < ok[2]);
        assert!(period_curve(&p, &[], Execution::Parallel).is_empty());
    }

    #[test]
    fn inversion_round_trip() {
        let p = p3();
        let target = period_t(&p, 1.3).unwrap();
        let u = invert_period(&p, target).unwrap();
        assert_relative_eq!(u, 1.3, max_relative = 1e-12);
        assert!(invert_period(&p, 1.0).is_err());
    }
}
