//! Trapezoid quadrature over the real line.
//!
//! Integrals are computed in the variable `u` with `x = sinh(u)`, so that
//! algebraically decaying integrands (Student-t tails) decay exponentially
//! in `u` and the trapezoid rule converges geometrically. The truncation
//! bound starts at the point where the density's tail mass is negligible and
//! is widened until the integral stops moving.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Tail mass of the density left outside the initial bound.
    pub tail_mass: f64,
    /// Initial step in the `u = asinh(x)` variable.
    pub initial_step: f64,
    /// Node doubling stops when successive results differ by less than this.
    pub tolerance: f64,
    /// Widening of the bound stops when the integral moves less than this.
    pub tail_tolerance: f64,
    /// Reported as non-converged if the last widening moved the result by more.
    pub flag_threshold: f64,
    /// Hard cap on the half-width in `x`.
    pub max_bound: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            tail_mass: 1e-10,
            initial_step: 0.125,
            tolerance: 1e-10,
            tail_tolerance: 1e-12,
            flag_threshold: 1e-6,
            max_bound: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    /// Half-width in `x` of the final interval.
    pub bound: f64,
    /// Node count of the final rule.
    pub nodes: usize,
    /// False if tail truncation still changed the result by more than the
    /// flag threshold at the cap.
    pub converged: bool,
}

/// Fixed trapezoid rule with `nodes` intervals on `x in [-bound, bound]`
/// (uniform in `asinh(x)`).
pub fn trapezoid_fixed(g: &impl Fn(f64) -> f64, bound: f64, nodes: usize) -> f64 {
    let u_max = bound.asinh();
    let h = 2.0 * u_max / nodes as f64;
    let term = |u: f64| {
        let val = g(u.sinh()) * u.cosh();
        if val.is_finite() {
            val
        } else {
            0.0
        }
    };
    let mut sum = 0.5 * (term(-u_max) + term(u_max));
    for k in 1..nodes {
        sum += term(-u_max + k as f64 * h);
    }
    sum * h
}

/// Trapezoid on `[-bound, bound]` with node doubling until two successive
/// results agree to `tolerance`.
fn trapezoid_refined(g: &impl Fn(f64) -> f64, bound: f64, cfg: &QuadratureConfig) -> (f64, usize) {
    let u_max = bound.asinh();
    let mut nodes = ((2.0 * u_max / cfg.initial_step).ceil() as usize).max(16);
    let mut prev = trapezoid_fixed(g, bound, nodes);
    for _ in 0..12 {
        nodes *= 2;
        let next = trapezoid_fixed(g, bound, nodes);
        if (next - prev).abs() <= cfg.tolerance * next.abs().max(1.0) {
            return (next, nodes);
        }
        prev = next;
    }
    (prev, nodes)
}

/// Integrates `g` over the real line starting from the half-width
/// `initial_bound` (chosen by the caller from the density's tail mass).
pub fn integrate(g: impl Fn(f64) -> f64, initial_bound: f64, cfg: &QuadratureConfig) -> Quadrature {
    let mut bound = initial_bound.max(1.0);
    let (mut value, mut nodes) = trapezoid_refined(&g, bound, cfg);
    let mut last_change = f64::INFINITY;
    while bound < cfg.max_bound {
        let wider = (bound * 4.0).min(cfg.max_bound);
        let (next, next_nodes) = trapezoid_refined(&g, wider, cfg);
        last_change = (next - value).abs();
        value = next;
        nodes = next_nodes;
        bound = wider;
        if last_change <= cfg.tail_tolerance {
            break;
        }
    }
    Quadrature {
        value,
        bound,
        nodes,
        converged: last_change <= cfg.flag_threshold,
    }
}
