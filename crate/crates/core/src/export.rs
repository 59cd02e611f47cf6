//! CSV and JSON writers.
//!
//! Floats are written with 17 significant digits in C-locale scientific
//! notation, so outputs round-trip exactly and are byte-stable across runs.
//! Non-finite values become `null` in JSON and `NaN`/`inf` in CSV.

use std::io::{self, Write};

use serde::ser::{Serialize, SerializeSeq, Serializer};
use serde::Serialize as DeriveSerialize;
use serde_json::value::RawValue;

use crate::continuation::{Family, StepRecord, Termination};
use crate::flow::{PeriodicityReport, ShootingPoint};
use crate::integrator::Trajectory;
use crate::model::{DerivedConstants, ProblemParams};
use crate::period::{PeriodError, PeriodSample};
use crate::solver::SolutionPoint;

pub const TRAJECTORY_HEADER: &str = "t,r,r_dot,d,d_dot,theta,z,z_dot,energy";
pub const PERIOD_HEADER: &str = "u,c,t1,T,status";

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// JSON float with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        RawValue::from_string(fmt_f64(self.0))
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

struct F17s<'a>(&'a [f64]);

impl Serialize for F17s<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for &x in self.0 {
            seq.serialize_element(&F17(x))?;
        }
        seq.end()
    }
}

#[derive(DeriveSerialize)]
struct ParamsJson {
    #[serde(rename = "N")]
    n: usize,
    m: F17,
    r0: F17,
}

impl From<&ProblemParams> for ParamsJson {
    fn from(p: &ProblemParams) -> Self {
        Self { n: p.n(), m: F17(p.m()), r0: F17(p.r0()) }
    }
}

#[derive(DeriveSerialize)]
#[serde(rename_all = "camelCase")]
struct ConstantsJson {
    params: ParamsJson,
    #[serde(rename = "alphaN")]
    alpha_n: F17,
    #[serde(rename = "gammaN")]
    gamma_n: F17,
    a_star: F17,
    #[serde(rename = "T1Star")]
    t1_star: F17,
    #[serde(rename = "T2Star")]
    t2_star: F17,
    u_max: F17,
    k: u32,
}

pub fn constants_json(params: &ProblemParams, c: &DerivedConstants) -> String {
    let doc = ConstantsJson {
        params: params.into(),
        alpha_n: F17(c.alpha_n),
        gamma_n: F17(c.gamma_n),
        a_star: F17(c.a_star),
        t1_star: F17(c.t1_star),
        t2_star: F17(c.t2_star),
        u_max: F17(c.u_max),
        k: c.smallest_multiple(),
    };
    to_json(&doc)
}

#[derive(DeriveSerialize)]
#[serde(rename_all = "camelCase")]
struct PointJson<'a> {
    a: F17,
    b: F17,
    u: F17,
    #[serde(rename = "T")]
    t: F17,
    k: u32,
    residual: F17s<'a>,
    state_gap: F17,
    symmetry_defect: F17,
    energy_drift: F17,
    converged: bool,
    iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    u_alternatives: Vec<[F17; 2]>,
}

impl<'a> From<&'a SolutionPoint> for PointJson<'a> {
    fn from(sp: &'a SolutionPoint) -> Self {
        Self {
            a: F17(sp.point.a),
            b: F17(sp.point.b),
            u: F17(sp.point.u),
            t: F17(sp.point.t_half),
            k: sp.k,
            residual: F17s(&sp.report.residual),
            state_gap: F17(sp.report.state_gap),
            symmetry_defect: F17(sp.report.symmetry_defect),
            energy_drift: F17(sp.report.energy_drift),
            converged: sp.converged,
            iterations: sp.iterations,
            u_alternatives: sp.alternatives.iter().map(|&(x, y)| [F17(x), F17(y)]).collect(),
        }
    }
}

fn to_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("in-memory JSON serialization");
    s.push('\n');
    s
}

pub fn solution_point_json(sp: &SolutionPoint) -> String {
    to_json(&PointJson::from(sp))
}

#[derive(DeriveSerialize)]
#[serde(rename_all = "camelCase")]
struct StepJson<'a> {
    from_b: F17,
    step: F17,
    accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
}

impl<'a> From<&'a StepRecord> for StepJson<'a> {
    fn from(r: &'a StepRecord) -> Self {
        Self { from_b: F17(r.from_b), step: F17(r.step), accepted: r.accepted, reason: r.reason.as_deref() }
    }
}

#[derive(DeriveSerialize)]
#[serde(rename_all = "camelCase")]
struct FamilyJson<'a> {
    params: ParamsJson,
    k: u32,
    mode: crate::continuation::ContinuationMode,
    termination: &'a Termination,
    points: Vec<PointJson<'a>>,
    step_history: Vec<StepJson<'a>>,
}

pub fn family_json(fam: &Family) -> String {
    to_json(&FamilyJson {
        params: (&fam.params).into(),
        k: fam.k,
        mode: fam.mode,
        termination: &fam.termination,
        points: fam.points.iter().map(PointJson::from).collect(),
        step_history: fam.step_history.iter().map(StepJson::from).collect(),
    })
}

#[derive(DeriveSerialize)]
#[serde(rename_all = "camelCase")]
struct VerifyJson<'a> {
    a: F17,
    b: F17,
    u: F17,
    #[serde(rename = "T")]
    t: F17,
    residual: F17s<'a>,
    residual_norm: F17,
    state_gap: F17,
    theta_advance: F17,
    symmetry_defect: F17,
    energy_drift: F17,
    tolerance: F17,
    verified: bool,
}

pub fn verify_json(point: &ShootingPoint, report: &PeriodicityReport, tolerance: f64, verified: bool) -> String {
    to_json(&VerifyJson {
        a: F17(point.a),
        b: F17(point.b),
        u: F17(point.u),
        t: F17(point.t_half),
        residual: F17s(&report.residual),
        residual_norm: F17(report.residual_norm),
        state_gap: F17(report.state_gap),
        theta_advance: F17(report.theta_advance),
        symmetry_defect: F17(report.symmetry_defect),
        energy_drift: F17(report.energy_drift),
        tolerance: F17(tolerance),
        verified,
    })
}

/// Trajectory rows at `times` (each inside the span).
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &Trajectory, times: &[f64]) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for &t in times {
        let s = traj
            .state(t)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("t = {t} outside trajectory")))?;
        let e = traj.energy(t).expect("t inside span");
        let row = [t, s.r, s.rdot, s.d, s.ddot, s.theta, s.z, s.zdot, e].map(fmt_f64);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Uniform output times from `t0` to `t1` spaced by about `dt`, both ends
/// included.
pub fn output_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let steps = ((t1 - t0).abs() / dt).ceil().max(1.0) as usize;
    (0..=steps)
        .map(|i| if i == steps { t1 } else { t0 + (t1 - t0) * i as f64 / steps as f64 })
        .collect()
}

pub fn write_period_csv<W: Write>(
    out: &mut W,
    grid_sorted: &[f64],
    rows: &[Result<PeriodSample, PeriodError>],
) -> io::Result<()> {
    writeln!(out, "{PERIOD_HEADER}")?;
    for (&u, row) in grid_sorted.iter().zip(rows) {
        match row {
            Ok(s) => writeln!(out, "{},{},{},{},ok", fmt_f64(s.u), fmt_f64(s.c), fmt_f64(s.t1), fmt_f64(s.t_half))?,
            Err(e) => {
                let kind = match e {
                    PeriodError::OutOfRegime { .. } => "out_of_regime",
                    PeriodError::Quadrature { .. } => "quadrature_failed",
                    PeriodError::NoPreimage { .. } => "no_preimage",
                };
                writeln!(out, "{},,,,{kind}", fmt_f64(u))?
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{self, IntegratorOptions};
    use crate::model::ReducedState;
    use crate::parallel::Execution;
    use crate::period;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
        assert_eq!(serde_json::to_string(&F17(0.5)).unwrap(), "5.0000000000000000e-1");
        assert_eq!(serde_json::to_string(&F17(f64::NAN)).unwrap(), "null");
    }

    #[test]
    fn trajectory_csv_layout() {
        let p = ProblemParams::new(3, 1.0, 2.0).unwrap();
        let a = p.constants().a_star;
        let traj = integrator::integrate(&p, a, &ReducedState::initial(&p, 0.0, 0.5), (0.0, 1.0), &IntegratorOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &output_times(0.0, 1.0, 0.25)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,r,r_dot,d,d_dot,theta,z,z_dot,energy");
        assert_eq!(lines.len(), 6);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 9));
        assert!(write_trajectory_csv(&mut Vec::new(), &traj, &[2.0]).is_err());
    }

    #[test]
    fn period_csv_marks_errors() {
        let p = ProblemParams::new(3, 1.0, 2.0).unwrap();
        let mut grid = vec![1.0, 3.0];
        let rows = period::period_curve(&p, &grid, Execution::Sequential);
        grid.sort_by(f64::total_cmp);
        let mut buf = Vec::new();
        write_period_csv(&mut buf, &grid, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u,c,t1,T,status\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",ok"));
        assert!(text.lines().nth(2).unwrap().ends_with(",,,,out_of_regime"));
    }
}
