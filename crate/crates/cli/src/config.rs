//! Flat `key = value` run configuration.

use std::fmt;
use std::path::Path;

use hiphop_core::continuation::{ContinuationMode, StepOptions};
use hiphop_core::integrator::IntegratorOptions;
use hiphop_core::solver::{NewtonOptions, SolverOptions};
use hiphop_core::ProblemParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: field `{}`: {}", self.field, self.message),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn field_error(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { line: None, field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub m: f64,
    pub r0: f64,
    pub integrator: IntegratorOptions,
    pub newton: NewtonOptions,
    pub polish: bool,
    pub scan_points: usize,
    pub step: StepOptions,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub u: Option<f64>,
    pub t_half: Option<f64>,
    pub k: Option<u32>,
    pub b_max: f64,
    pub t_end: Option<f64>,
    pub dt: f64,
    pub u_grid: Option<Vec<f64>>,
    /// Pass/fail bound for `verify`.
    pub tol: f64,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 1.0,
            r0: 2.0,
            integrator: IntegratorOptions::default(),
            newton: NewtonOptions::default(),
            polish: true,
            scan_points: 16,
            step: StepOptions::default(),
            a: None,
            b: None,
            u: None,
            t_half: None,
            k: None,
            b_max: 0.05,
            t_end: None,
            dt: 0.01,
            u_grid: None,
            tol: 1e-8,
            out: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| field_error(key, format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(field_error(key, format!("`{v}` is not finite")));
    }
    Ok(x)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| field_error(key, format!("`{v}` is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(field_error(key, format!("`{v}` is not a boolean"))),
    }
}

pub fn parse_grid(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_error("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let with_line = |mut e: ConfigError| {
                e.line = Some(i + 1);
                e
            };
            let (key, value) = line.split_once('=').ok_or_else(|| {
                with_line(field_error(line, "expected `key = value`"))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(with_line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "N" => self.n = parse_int(key, v)?,
            "m" => self.m = parse_f64(key, v)?,
            "r0" => self.r0 = parse_f64(key, v)?,
            "rel_tol" => self.integrator.rel_tol = parse_f64(key, v)?,
            "abs_tol" => self.integrator.abs_tol = parse_f64(key, v)?,
            "max_step" => self.integrator.max_step = Some(parse_f64(key, v)?),
            "max_steps" => self.integrator.max_steps = parse_int(key, v)?,
            "r_min" => self.integrator.r_min = Some(parse_f64(key, v)?),
            "fd_step" => self.newton.fd_step = parse_f64(key, v)?,
            "tol_residual" => self.newton.tol_residual = parse_f64(key, v)?,
            "max_iter" => self.newton.max_iter = parse_int(key, v)?,
            "damping" => self.newton.damping = parse_f64(key, v)?,
            "polish" => self.polish = parse_bool(key, v)?,
            "scan_points" => self.scan_points = parse_int(key, v)?,
            "step_initial" => self.step.initial = parse_f64(key, v)?,
            "step_min" => self.step.min = parse_f64(key, v)?,
            "step_max" => self.step.max = parse_f64(key, v)?,
            "gap_tol" => self.step.gap_tol = parse_f64(key, v)?,
            "max_failures" => self.step.max_failures = parse_int(key, v)?,
            "mode" => {
                self.step.mode = match v {
                    "natural" => ContinuationMode::Natural,
                    "arclength" => ContinuationMode::Arclength,
                    _ => return Err(field_error(key, format!("`{v}` is not natural or arclength"))),
                }
            }
            "a" => self.a = Some(parse_f64(key, v)?),
            "b" => self.b = Some(parse_f64(key, v)?),
            "u" => self.u = Some(parse_f64(key, v)?),
            "T" => self.t_half = Some(parse_f64(key, v)?),
            "k" => self.k = Some(parse_int(key, v)?),
            "b_max" => self.b_max = parse_f64(key, v)?,
            "t_end" => self.t_end = Some(parse_f64(key, v)?),
            "dt" => self.dt = parse_f64(key, v)?,
            "u_grid" => self.u_grid = Some(parse_grid(key, v)?),
            "tol" => self.tol = parse_f64(key, v)?,
            "out" => self.out = Some(v.to_string()),
            _ => return Err(field_error(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params()?;
        self.integrator
            .validate()
            .map_err(|e| field_error("rel_tol/abs_tol", e.to_string()))?;
        self.newton
            .validate()
            .map_err(|e| field_error("fd_step/tol_residual/damping", e.to_string()))?;
        self.step
            .validate()
            .map_err(|e| field_error("step_initial/step_min/step_max", e.to_string()))?;
        if !(self.dt > 0.0) {
            return Err(field_error("dt", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(field_error("tol", "must be positive"));
        }
        if self.k == Some(0) {
            return Err(field_error("k", "must be at least 1"));
        }
        if self.scan_points < 2 {
            return Err(field_error("scan_points", "must be at least 2"));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ProblemParams, ConfigError> {
        ProblemParams::new(self.n, self.m, self.r0).map_err(|e| {
            let field = match &e {
                hiphop_core::model::ModelError::InvalidParameter { field, .. } => field.to_string(),
                _ => "N/m/r0".to_string(),
            };
            field_error(&field, e.to_string())
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            newton: self.newton,
            integrator: self.integrator,
            polish: self.polish,
            scan_points: self.scan_points,
            ..SolverOptions::default()
        }
    }
}
