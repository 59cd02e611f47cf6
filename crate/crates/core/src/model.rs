//! Physical setup of the restricted hip-hop problem.
//!
//! `2N` equal-mass primaries sit at the vertices of a regular antiprism whose
//! shape is described by the ring radius `r`, the oriented plane offset `d` and
//! the phase `theta`; a massless body moves on the symmetry axis at height `z`.
//! Everything here is a pure function of [`ProblemParams`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("collision: ring radius r = {r:e} is at or below the floor {floor:e}")]
    Collision { r: f64, floor: f64 },
}

/// Fixed physical data: `N` (half the number of primaries), the primary mass
/// `m` and the initial ring radius `r0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemParams {
    #[serde(rename = "N")]
    n: usize,
    m: f64,
    r0: f64,
    #[serde(skip)]
    ring: Vec<RingTerm>,
}

/// One term `k` of the antiprism sums: `sin^2(k pi / 2N)` and the parity
/// weight `((-1)^k - 1)^2`, which is 4 for odd `k` and 0 for even `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RingTerm {
    sin2: f64,
    odd: bool,
}

impl ProblemParams {
    pub fn new(n: usize, m: f64, r0: f64) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidParameter {
                field: "N",
                reason: "must be at least 1".into(),
            });
        }
        if !(m.is_finite() && m > 0.0) {
            return Err(ModelError::InvalidParameter {
                field: "m",
                reason: format!("must be a positive finite mass, got {m}"),
            });
        }
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(ModelError::InvalidParameter {
                field: "r0",
                reason: format!("must be a positive finite radius, got {r0}"),
            });
        }
        let ring = (1..2 * n)
            .map(|k| {
                let s = ring_sin(k, 2 * n);
                RingTerm {
                    sin2: s * s,
                    odd: k % 2 == 1,
                }
            })
            .collect();
        Ok(Self { n, m, r0, ring })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Number of primaries, `2N`.
    pub fn bodies(&self) -> usize {
        2 * self.n
    }

    pub fn constants(&self) -> DerivedConstants {
        derived_constants(self)
    }

    /// Right-hand sides `(r'', d'', z'')` of the reduced equations.
    ///
    /// `f` carries the centrifugal term `a^2/r^3`; even-`k` terms of `g` and
    /// `h`-style sums vanish identically and are skipped.
    pub fn accelerations(&self, a: f64, state: &ReducedState) -> Result<Accelerations, ModelError> {
        self.guard(state.r, 0.0)?;
        let (f, g) = self.primary_forces(a, state.r, state.d);
        Ok(Accelerations {
            r: f,
            d: g,
            z: self.axial_force(state.r, state.d, state.z),
        })
    }

    /// `f(r, d)` and `g(r, d)` without any collision check.
    pub(crate) fn primary_forces(&self, a: f64, r: f64, d: f64) -> (f64, f64) {
        let r2 = r * r;
        let d2 = d * d;
        let mut radial = 0.0;
        let mut axial = 0.0;
        for term in &self.ring {
            let base = 4.0 * r2 * term.sin2 + if term.odd { 4.0 * d2 } else { 0.0 };
            let inv32 = 1.0 / (base * base.sqrt());
            radial += term.sin2 * inv32;
            if term.odd {
                axial += 4.0 * inv32;
            }
        }
        let f = a * a / (r2 * r) - 2.0 * r * self.m * radial;
        let g = -0.5 * self.m * d * axial;
        (f, g)
    }

    /// `h(r, d, z)`: pull of the two `N`-gons on the massless body.
    pub(crate) fn axial_force(&self, r: f64, d: f64, z: f64) -> f64 {
        let r2 = r * r;
        let lo = z - d;
        let hi = z + d;
        let q_lo = lo * lo + r2;
        let q_hi = hi * hi + r2;
        -self.m * self.n as f64 * (lo / (q_lo * q_lo.sqrt()) + hi / (q_hi * q_hi.sqrt()))
    }

    /// Potential `U(r, d)` of the primaries' reduced motion, normalised so that
    /// `-dU/dr = f - a^2/r^3` and `-dU/dd = g`.
    pub fn potential(&self, r: f64, d: f64) -> Result<f64, ModelError> {
        self.guard(r, 0.0)?;
        Ok(self.potential_unchecked(r, d))
    }

    pub(crate) fn potential_unchecked(&self, r: f64, d: f64) -> f64 {
        let r2 = r * r;
        let d2 = d * d;
        let sum: f64 = self
            .ring
            .iter()
            .map(|t| {
                let base = 4.0 * r2 * t.sin2 + if t.odd { 4.0 * d2 } else { 0.0 };
                1.0 / base.sqrt()
            })
            .sum();
        -0.5 * self.m * sum
    }

    /// Conserved energy of the `(r, d)` subsystem,
    /// `E = (r'^2 + d'^2)/2 + a^2/(2 r^2) + U(r, d)`.
    pub fn reduced_energy(&self, a: f64, state: &ReducedState) -> Result<f64, ModelError> {
        self.guard(state.r, 0.0)?;
        Ok(self.energy_unchecked(a, state.r, state.rdot, state.d, state.ddot))
    }

    pub(crate) fn energy_unchecked(&self, a: f64, r: f64, rdot: f64, d: f64, ddot: f64) -> f64 {
        0.5 * (rdot * rdot + ddot * ddot) + a * a / (2.0 * r * r) + self.potential_unchecked(r, d)
    }

    /// Cartesian positions of the `2N` primaries. Body `j` (0-based) is the
    /// first body rotated by `j pi / N` about the axis, with `z` negated for
    /// odd `j`.
    pub fn embed_bodies(&self, r: f64, theta: f64, d: f64) -> Vec<[f64; 3]> {
        let step = PI / self.n as f64;
        (0..self.bodies())
            .map(|j| {
                let phase = theta + j as f64 * step;
                let z = if j % 2 == 0 { d } else { -d };
                [r * phase.cos(), r * phase.sin(), z]
            })
            .collect()
    }

    fn guard(&self, r: f64, floor: f64) -> Result<(), ModelError> {
        if r > floor && r.is_finite() {
            Ok(())
        } else {
            Err(ModelError::Collision { r, floor })
        }
    }
}

/// `sin(k pi / m)` with the angle carried in double-double, which makes the
/// special values (`1/2`, `1`, ...) come out exact.
fn ring_sin(k: usize, m: usize) -> f64 {
    const PI_LO: f64 = 1.2246467991473532e-16;
    let k = k.min(m - k) as f64;
    let m = m as f64;
    let p = k * PI;
    let p_lo = k.mul_add(PI, -p) + k * PI_LO;
    let q = p / m;
    let q_lo = ((-q).mul_add(m, p) + p_lo) / m;
    q.sin() + q_lo * q.cos()
}

/// Trigonometric sums of the antiprism,
/// `alpha_N = (1/16) sum ((-1)^k - 1)^2 / sin^3(k pi/2N)` and
/// `gamma_N = (1/4) sum 1 / sin(k pi/2N)` over `k = 1..2N-1`.
pub fn sum_constants(n: usize) -> Result<(f64, f64), ModelError> {
    if n == 0 {
        return Err(ModelError::InvalidParameter {
            field: "N",
            reason: "must be at least 1".into(),
        });
    }
    let mut alpha = 0.0;
    let mut gamma = 0.0;
    for k in 1..2 * n {
        let s = ring_sin(k, 2 * n);
        if k % 2 == 1 {
            alpha += 4.0 / (s * s * s);
        }
        gamma += 1.0 / s;
    }
    Ok((alpha / 16.0, gamma / 4.0))
}

/// Constants of the circular equilibrium and the small-oscillation periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DerivedConstants {
    #[serde(rename = "alphaN")]
    pub alpha_n: f64,
    #[serde(rename = "gammaN")]
    pub gamma_n: f64,
    /// Angular momentum of the circular equilibrium at radius `r0`.
    pub a_star: f64,
    /// Linearised half-period of the primaries' out-of-plane oscillation.
    #[serde(rename = "T1Star")]
    pub t1_star: f64,
    /// Small-amplitude half-period of the massless body.
    #[serde(rename = "T2Star")]
    pub t2_star: f64,
    /// Escape speed of the massless body from the ring centre.
    pub u_max: f64,
}

impl DerivedConstants {
    /// Smallest `k >= 1` with `T2* < k T1*`.
    pub fn smallest_multiple(&self) -> u32 {
        let mut k = 1u32;
        while !(self.t2_star < k as f64 * self.t1_star) {
            k += 1;
        }
        k
    }
}

pub fn derived_constants(params: &ProblemParams) -> DerivedConstants {
    let (alpha_n, gamma_n) = sum_constants(params.n).expect("validated N");
    let (m, r0, n) = (params.m, params.r0, params.n as f64);
    DerivedConstants {
        alpha_n,
        gamma_n,
        a_star: (m * gamma_n * r0).sqrt(),
        t1_star: PI * (r0.powi(3) / (m * alpha_n)).sqrt(),
        t2_star: PI * (r0.powi(3) / (2.0 * m * n)).sqrt(),
        u_max: (4.0 * m * n / r0).sqrt(),
    }
}

/// Full state of the reduced system at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReducedState {
    pub r: f64,
    pub rdot: f64,
    pub d: f64,
    pub ddot: f64,
    pub theta: f64,
    pub z: f64,
    pub zdot: f64,
}

impl ReducedState {
    /// State at `t = 0` for shooting parameters `(b, u)`: the ring starts flat
    /// at radius `r0` with out-of-plane speed `b`, the massless body starts at
    /// the centre with speed `u`.
    pub fn initial(params: &ProblemParams, b: f64, u: f64) -> Self {
        Self {
            r: params.r0,
            rdot: 0.0,
            d: 0.0,
            ddot: b,
            theta: 0.0,
            z: 0.0,
            zdot: u,
        }
    }

    pub fn equilibrium(params: &ProblemParams) -> Self {
        Self::initial(params, 0.0, 0.0)
    }

    /// Max-norm distance over all components except `theta`.
    pub fn gap_excluding_theta(&self, other: &Self) -> f64 {
        [
            self.r - other.r,
            self.rdot - other.rdot,
            self.d - other.d,
            self.ddot - other.ddot,
            self.z - other.z,
            self.zdot - other.zdot,
        ]
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accelerations {
    pub r: f64,
    pub d: f64,
    pub z: f64,
}
