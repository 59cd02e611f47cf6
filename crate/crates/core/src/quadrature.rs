//! Gauss–Legendre rules and a composite integrator that doubles the number
//! of panels until two successive levels agree.

use std::sync::OnceLock;

use thiserror::Error;

/// Points per panel.
pub const ORDER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("composite quadrature did not converge after {panels} panels (last change {change:e}, estimate {estimate})")]
pub struct QuadratureError {
    pub panels: usize,
    pub change: f64,
    pub estimate: f64,
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// from Newton iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(ORDER))
}

fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = rule();
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * width;
            x.iter().zip(w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
        })
        .sum()
}

/// Integrate `f` over `[a, b]` with 1, 2, 4, ... equal panels until two
/// successive estimates agree to `rel_tol` (relative to the estimate).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, max_panels: usize) -> Result<f64, QuadratureError> {
    let mut panels = 1;
    let mut prev = composite(&f, a, b, panels);
    loop {
        panels *= 2;
        let next = composite(&f, a, b, panels);
        let change = (next - prev).abs();
        if change <= rel_tol * next.abs() || change == 0.0 {
            return Ok(next);
        }
        if panels >= max_panels || !next.is_finite() {
            return Err(QuadratureError {
                panels,
                change,
                estimate: next,
            });
        }
        prev = next;
    }
}
