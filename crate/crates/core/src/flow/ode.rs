//! Two-dimensional flows of `F(x, y) = y²` (or `|x|²`) constrained to the
//! epigraph `{y ≥ η(x)}`, integrated by explicit Euler steps followed by the
//! closest-point projection onto the graph of `η`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VilabError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeProblem {
    /// `F = y²` above `η(x) = x²`.
    AnalyticConstraint,
    /// `F = y²` above `η(x) = e^{−1/x²}`.
    NonAnalyticConstraint,
    /// `F = x² + y²`, no constraint.
    FreeQuadratic,
}

impl OdeProblem {
    pub fn energy(self, p: [f64; 2]) -> f64 {
        match self {
            OdeProblem::FreeQuadratic => p[0] * p[0] + p[1] * p[1],
            _ => p[1] * p[1],
        }
    }

    fn gradient(self, p: [f64; 2]) -> [f64; 2] {
        match self {
            OdeProblem::FreeQuadratic => [2.0 * p[0], 2.0 * p[1]],
            _ => [0.0, 2.0 * p[1]],
        }
    }

    /// `(η(x), η'(x), η''(x))`, or `None` without a constraint.
    pub fn eta(self, x: f64) -> Option<(f64, f64, f64)> {
        match self {
            OdeProblem::AnalyticConstraint => Some((x * x, 2.0 * x, 2.0)),
            OdeProblem::NonAnalyticConstraint => {
                if x == 0.0 {
                    return Some((0.0, 0.0, 0.0));
                }
                let e = (-1.0 / (x * x)).exp();
                let x3 = x * x * x;
                let d1 = 2.0 * e / x3;
                let d2 = e * (4.0 / (x3 * x3) - 6.0 / (x3 * x));
                Some((e, d1, d2))
            }
            OdeProblem::FreeQuadratic => None,
        }
    }

    pub fn is_feasible(self, p: [f64; 2], tol: f64) -> bool {
        match self.eta(p[0]) {
            Some((e, _, _)) => p[1] >= e - tol,
            None => true,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub energies: Vec<f64>,
}

impl OdeTrajectory {
    /// Euclidean distance of each recorded point to the origin, the unique
    /// critical point of all three problems.
    pub fn distances(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0].hypot(p[1])).collect()
    }
}

/// Closest point of the graph of `η` to `q`, by Newton's method on
/// `s ↦ (s − q_x) + (η(s) − q_y)η'(s) = 0` started at `q_x`.
fn project_to_graph(problem: OdeProblem, q: [f64; 2]) -> [f64; 2] {
    let mut s = q[0];
    for _ in 0..50 {
        let (e, d1, d2) = problem.eta(s).expect("constrained problem");
        let f = (s - q[0]) + (e - q[1]) * d1;
        let df = 1.0 + d1 * d1 + (e - q[1]) * d2;
        let step = f / df;
        s -= step;
        if step.abs() <= 1e-16 * (1.0 + s.abs()) {
            break;
        }
    }
    [s, problem.eta(s).unwrap().0]
}

/// Number of log-spaced recording times per decade after `t = 1`.
const SAMPLES_PER_DECADE: f64 = 50.0;

/// Integrates the constrained flow from `x0` up to `t_end`.
///
/// States are recorded every step up to `t = 1` and then at log-spaced times.
pub fn run_ode_flow(problem: OdeProblem, x0: [f64; 2], dt: f64, t_end: f64) -> Result<OdeTrajectory> {
    if !(dt > 0.0 && dt < 0.5) {
        return Err(VilabError::StepTooLarge(format!(
            "explicit steps need 0 < dt < 1/2, got {dt}"
        )));
    }
    if !problem.is_feasible(x0, 0.0) {
        return Err(VilabError::Infeasible(format!(
            "initial point {x0:?} lies below the constraint"
        )));
    }
    let mut out = OdeTrajectory::default();
    let record = |out: &mut OdeTrajectory, t: f64, p: [f64; 2]| {
        out.times.push(t);
        out.points.push(p);
        out.energies.push(problem.energy(p));
    };
    let mut p = x0;
    record(&mut out, 0.0, p);
    let n_steps = (t_end / dt).round() as u64;
    let mut next_log = 1.0f64;
    let growth = 10f64.powf(1.0 / SAMPLES_PER_DECADE);
    for i in 1..=n_steps {
        let g = problem.gradient(p);
        let mut q = [p[0] - dt * g[0], p[1] - dt * g[1]];
        if let Some((e, _, _)) = problem.eta(q[0]) {
            if q[1] < e {
                q = project_to_graph(problem, q);
            }
        }
        if !problem.is_feasible(q, 1e-12) || !q[0].is_finite() || !q[1].is_finite() {
            return Err(VilabError::StepTooLarge(format!(
                "state left the constraint set at step {i}"
            )));
        }
        p = q;
        let t = i as f64 * dt;
        if t < 1.0 || i == n_steps {
            record(&mut out, t, p);
        } else if t >= next_log {
            record(&mut out, t, p);
            while next_log <= t {
                next_log *= growth;
            }
        }
    }
    Ok(out)
}
