//! Bound-constrained convex quadratic programs
//!
//! ```text
//! minimise ½ xᵀAx − bᵀx   subject to  x_j ≥ l_j on sign nodes,  x_j = p_j on pinned nodes
//! ```
//!
//! with `A = a·S + diag(shift)` symmetric positive definite on the free nodes.
//! Two backends: a primal-dual active-set iteration with conjugate-gradient
//! inner solves, and projected successive over-relaxation.

use serde::{Deserialize, Serialize};

use crate::constraint::{k_norm_raw, Constraint};
use crate::error::{Result, VilabError};
use crate::operator::{cg_restricted, ShiftedOp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    ActiveSet,
    Psor { omega: f64 },
}

impl Default for Backend {
    fn default() -> Self {
        Backend::ActiveSet
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub backend: Backend,
    /// Target for the constrained gradient norm of the solution.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            backend: Backend::ActiveSet,
            tol: 1e-8,
            max_iter: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QpProblem<'a> {
    pub op: ShiftedOp<'a>,
    pub rhs: &'a [f64],
    pub weights: &'a [f64],
    pub constraint: &'a Constraint,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Constrained norm of the L² gradient `(Ax − b)/w` at `x`.
    pub residual: f64,
    pub iterations: usize,
}

impl QpProblem<'_> {
    fn n(&self) -> usize {
        self.rhs.len()
    }

    fn pinned_mask(&self) -> Vec<bool> {
        self.constraint.pinned.iter().map(Option::is_some).collect()
    }

    /// `Ax − b` as a covector.
    pub fn residual_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; self.n()];
        self.op.apply(x, &mut ax);
        ax.iter().zip(self.rhs).map(|(a, b)| a - b).collect()
    }

    /// Constrained gradient norm at `x` in the weighted L² metric.
    pub fn kkt_residual(&self, x: &[f64]) -> f64 {
        let r = self.residual_vec(x);
        let g: Vec<f64> = r.iter().zip(self.weights).map(|(r, w)| r / w).collect();
        k_norm_raw(
            self.weights,
            &self.constraint.sign_nodes,
            &self.pinned_mask(),
            &self.constraint.gap(x),
            &g,
        )
    }

    fn enforce_pins(&self, x: &mut [f64]) {
        for (xj, p) in x.iter_mut().zip(&self.constraint.pinned) {
            if let Some(p) = p {
                *xj = *p;
            }
        }
    }
}

pub fn solve_qp(problem: &QpProblem<'_>, x0: &[f64], opts: &SolveOptions) -> Result<QpSolution> {
    if !problem.constraint.pins_consistent() {
        return Err(VilabError::Infeasible(
            "pinned data lies below the obstacle on a sign node".into(),
        ));
    }
    match opts.backend {
        Backend::ActiveSet => match active_set(problem, x0, opts) {
            Ok(s) => Ok(s),
            // the active-set iteration may cycle on operators that are not
            // M-matrices; finish from the last iterate with PSOR
            Err(VilabError::NoConvergence { .. }) => {
                let mut start = x0.to_vec();
                problem.enforce_pins(&mut start);
                psor(problem, &start, 1.5, opts)
            }
            Err(e) => Err(e),
        },
        Backend::Psor { omega } => {
            if !(omega > 0.0 && omega < 2.0) {
                return Err(VilabError::InvalidParameter(format!(
                    "SOR relaxation must lie in (0, 2), got {omega}"
                )));
            }
            psor(problem, x0, omega, opts)
        }
    }
}

fn active_set(problem: &QpProblem<'_>, x0: &[f64], opts: &SolveOptions) -> Result<QpSolution> {
    let n = problem.n();
    let k = problem.constraint;
    let diag = problem.op.diag();
    let lo = &k.lower;
    let mut x = x0.to_vec();
    problem.enforce_pins(&mut x);
    for (j, xj) in x.iter_mut().enumerate() {
        if k.sign_nodes[j] && k.pinned[j].is_none() {
            *xj = xj.max(lo[j]);
        }
    }
    let mut active = vec![false; n];
    let mut cg_tol = 0.01 * opts.tol;
    let cg_max = 20 * n + 1000;
    let max_outer = 200;
    let mut total = 0;

    for outer in 0..max_outer {
        // multiplier estimate and new active set
        let r = problem.residual_vec(&x);
        let mut new_active = vec![false; n];
        for j in 0..n {
            if k.sign_nodes[j] && k.pinned[j].is_none() {
                let mu = if active[j] { r[j] } else { 0.0 };
                let gap = x[j] - lo[j];
                new_active[j] = mu - diag[j] * gap > 0.0 || (outer == 0 && gap <= 0.0 && r[j] > 0.0);
            }
        }
        let settled = outer > 0 && new_active == active;
        if settled {
            let res = problem.kkt_residual(&x);
            if res <= opts.tol {
                return Ok(QpSolution {
                    x,
                    residual: res,
                    iterations: total,
                });
            }
            if cg_tol < 1e-6 * opts.tol {
                break;
            }
            cg_tol *= 0.01;
        }
        active = new_active;

        let free: Vec<bool> = (0..n)
            .map(|j| !active[j] && k.pinned[j].is_none())
            .collect();
        for j in 0..n {
            if active[j] {
                x[j] = lo[j];
            }
        }
        let r = problem.residual_vec(&x);
        let b: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut dx = vec![0.0; n];
        let out = cg_restricted(&problem.op, &free, problem.weights, &b, &mut dx, cg_tol, cg_max);
        total += out.iterations;
        for j in 0..n {
            if free[j] {
                x[j] += dx[j];
            }
        }
        if !out.converged && out.residual > opts.tol {
            return Err(VilabError::NoConvergence {
                iterations: total,
                residual: out.residual,
            });
        }
        // nodes that came out below the obstacle enter the active set on the
        // next pass, since the multiplier test then sees −diag·(x − l) > 0
    }
    Err(VilabError::NoConvergence {
        iterations: total,
        residual: problem.kkt_residual(&x),
    })
}

fn psor(problem: &QpProblem<'_>, x0: &[f64], omega: f64, opts: &SolveOptions) -> Result<QpSolution> {
    let n = problem.n();
    let k = problem.constraint;
    let diag = problem.op.diag();
    let mut x = x0.to_vec();
    problem.enforce_pins(&mut x);
    for (j, xj) in x.iter_mut().enumerate() {
        if k.sign_nodes[j] && k.pinned[j].is_none() {
            *xj = xj.max(k.lower[j]);
        }
    }
    let check_every = 10;
    let mut res = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        for j in 0..n {
            if k.pinned[j].is_some() {
                continue;
            }
            let gs = (problem.rhs[j] - problem.op.offdiag_dot(j, &x)) / diag[j];
            let mut v = x[j] + omega * (gs - x[j]);
            if k.sign_nodes[j] {
                v = v.max(k.lower[j]);
            }
            x[j] = v;
        }
        if sweep % check_every == 0 || sweep == opts.max_iter {
            res = problem.kkt_residual(&x);
            if res <= opts.tol {
                return Ok(QpSolution {
                    x,
                    residual: res,
                    iterations: sweep,
                });
            }
        }
    }
    Err(VilabError::NoConvergence {
        iterations: opts.max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, GridKind};

    fn interval_problem(n: usize) -> (crate::geometry::Grid, Constraint, Vec<f64>) {
        let g = build_grid(GridKind::Interval, n).unwrap();
        let k = Constraint::obstacle(&g, &g.constant(0.125));
        let rhs: Vec<f64> = g.weights().iter().map(|w| -w).collect();
        (g, k, rhs)
    }

    #[test]
    fn backends_agree() {
        let (g, k, rhs) = interval_problem(65);
        let shift = vec![0.0; g.n_nodes()];
        let p = QpProblem {
            op: ShiftedOp {
                stiffness: Some(g.stiffness()),
                shift: &shift,
            },
            rhs: &rhs,
            weights: g.weights(),
            constraint: &k,
        };
        let x0 = vec![0.0; g.n_nodes()];
        let tol = 1e-10;
        let a = solve_qp(
            &p,
            &x0,
            &SolveOptions {
                tol,
                ..Default::default()
            },
        )
        .unwrap();
        let b = solve_qp(
            &p,
            &x0,
            &SolveOptions {
                backend: Backend::Psor { omega: 1.5 },
                tol,
                max_iter: 1_000_000,
            },
        )
        .unwrap();
        let diff = a
            .x
            .iter()
            .zip(&b.x)
            .zip(g.weights())
            .map(|((x, y), w)| w * (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff < 10.0 * tol, "{diff}");
        assert!(a.residual <= tol && b.residual <= tol);
    }

    #[test]
    fn rejects_bad_relaxation() {
        let (g, k, rhs) = interval_problem(17);
        let shift = vec![0.0; g.n_nodes()];
        let p = QpProblem {
            op: ShiftedOp {
                stiffness: Some(g.stiffness()),
                shift: &shift,
            },
            rhs: &rhs,
            weights: g.weights(),
            constraint: &k,
        };
        let r = solve_qp(
            &p,
            &vec![0.0; 17],
            &SolveOptions {
                backend: Backend::Psor { omega: 2.5 },
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(VilabError::InvalidParameter(_))));
    }
}
