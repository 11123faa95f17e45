//! Critical points: the elliptic obstacle and thin-obstacle solutions, the
//! two-homogeneous profiles `Q_A`, and projections onto the classified sphere
//! critical sets.

use crate::constraint::Constraint;
use crate::energy::{eval_gradient, EnergySpec};
use crate::error::{Result, VilabError};
use crate::fourier::{circle_frequency, filter_modes, mode_pair};
use crate::geometry::{Field, Grid, GridKind};
use crate::operator::ShiftedOp;
use crate::solver::{solve_qp, QpProblem, SolveOptions};

#[derive(Clone, Debug)]
pub struct StationaryReport {
    pub solution: Field,
    /// Constrained gradient norm at the solution.
    pub kkt_residual: f64,
    pub active_set: Vec<bool>,
    pub iterations: usize,
}

impl StationaryReport {
    pub fn contact_count(&self) -> usize {
        self.active_set.iter().filter(|&&a| a).count()
    }
}

fn check_boundary(grid: &Grid, g: &Field, what: impl Fn(usize) -> bool) -> Result<()> {
    grid.check(g);
    for j in 0..grid.n_nodes() {
        if what(j) && !(g.values[j] >= 0.0) {
            return Err(VilabError::Infeasible(format!(
                "boundary datum {} at node {j} is negative",
                g.values[j]
            )));
        }
    }
    Ok(())
}

fn solve_with(
    grid: &Grid,
    k: &Constraint,
    rhs: &[f64],
    start: &Field,
    opts: &SolveOptions,
) -> Result<StationaryReport> {
    let shift = vec![0.0; grid.n_nodes()];
    let problem = QpProblem {
        op: ShiftedOp {
            stiffness: Some(grid.stiffness()),
            shift: &shift,
        },
        rhs,
        weights: grid.weights(),
        constraint: k,
    };
    let sol = solve_qp(&problem, &start.values, opts)?;
    let solution = Field::new(grid.id(), sol.x);
    let active_set = k.contact_set(&solution);
    Ok(StationaryReport {
        solution,
        kkt_residual: sol.residual,
        active_set,
        iterations: sol.iterations,
    })
}

/// Minimises `F_ob` over `K_ob^g`. Only the boundary values of `g` are read.
pub fn solve_obstacle(grid: &Grid, g: &Field, opts: &SolveOptions) -> Result<StationaryReport> {
    solve_obstacle_from(grid, g, &grid.zeros(), opts)
}

/// As [`solve_obstacle`], starting the iteration from `start`.
pub fn solve_obstacle_from(
    grid: &Grid,
    g: &Field,
    start: &Field,
    opts: &SolveOptions,
) -> Result<StationaryReport> {
    EnergySpec::Obstacle.check_grid(grid)?;
    check_boundary(grid, g, |j| grid.boundary_mask()[j])?;
    let k = Constraint::obstacle(grid, g);
    let rhs: Vec<f64> = grid.weights().iter().map(|w| -w).collect();
    solve_with(grid, &k, &rhs, start, opts)
}

/// Minimises `F_th` over `K_th^g` on the half-disk.
pub fn solve_thin_obstacle(grid: &Grid, g: &Field, opts: &SolveOptions) -> Result<StationaryReport> {
    EnergySpec::ThinObstacle.check_grid(grid)?;
    let p = *grid.polar().expect("half-disk grids are polar");
    let ends = [p.node(p.n_rings, 0), p.node(p.n_rings, p.n_angles - 1)];
    check_boundary(grid, g, |j| ends.contains(&j))?;
    let k = Constraint::thin(grid, g);
    let rhs = vec![0.0; grid.n_nodes()];
    solve_with(grid, &k, &rhs, &grid.zeros(), opts)
}

/// Discrete harmonic extension of `g` with no sign condition.
pub fn harmonic_extension(grid: &Grid, g: &Field, opts: &SolveOptions) -> Result<Field> {
    let k = Constraint::pinned_only(grid, g);
    let rhs = vec![0.0; grid.n_nodes()];
    Ok(solve_with(grid, &k, &rhs, &grid.zeros(), opts)?.solution)
}

/// Solution of the interval obstacle problem with constant data `c ≥ 0`:
/// `((|x| − a)₊)²/2` with `a = 1 − √(2c)` when `c ≤ ½`, else `(x² − 1)/2 + c`.
pub fn obstacle_1d_exact(c: f64, x: f64) -> f64 {
    if c <= 0.5 {
        let a = 1.0 - (2.0 * c).sqrt();
        0.5 * (x.abs() - a).max(0.0).powi(2)
    } else {
        0.5 * (x * x - 1.0) + c
    }
}

/// Validates a candidate matrix for `Q_A`: symmetric, nonnegative, trace ½.
pub fn validate_qa(a: [[f64; 2]; 2]) -> Result<()> {
    if (a[0][1] - a[1][0]).abs() > 1e-14 {
        return Err(VilabError::InvalidParameter("A must be symmetric".into()));
    }
    let tr = a[0][0] + a[1][1];
    if (tr - 0.5).abs() > 1e-12 {
        return Err(VilabError::InvalidParameter(format!(
            "tr A must equal 1/2, got {tr}"
        )));
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let min_eig = 0.5 * tr - disc;
    if min_eig < -1e-12 {
        return Err(VilabError::InvalidParameter(format!(
            "A must be nonnegative, smallest eigenvalue {min_eig}"
        )));
    }
    Ok(())
}

/// `Q_A(x) = x·Ax` sampled on a two-dimensional grid or on the circle.
pub fn make_qa(grid: &Grid, a: [[f64; 2]; 2]) -> Result<Field> {
    validate_qa(a)?;
    if grid.kind() == GridKind::Interval {
        return Err(VilabError::IncompatibleGrid {
            spec: "Q_A".into(),
            grid: grid.kind().name(),
        });
    }
    Ok(grid.sample(|[x, y]| a[0][0] * x * x + 2.0 * a[0][1] * x * y + a[1][1] * y * y))
}

/// `A = R(φ) diag(s, ½−s) R(φ)ᵀ`, a convenient parametrisation of `S_ob`.
pub fn qa_matrix(s: f64, phi: f64) -> [[f64; 2]; 2] {
    let (c, si) = (phi.cos(), phi.sin());
    let t = 0.5 - s;
    [
        [s * c * c + t * si * si, (s - t) * c * si],
        [(s - t) * c * si, s * si * si + t * c * c],
    ]
}

/// Closest point of the classified critical set of a sphere functional.
///
/// For `F_ob^λ` with `λ = n²` the set is `1/λ + (λ-eigenspace)` restricted to
/// nonnegative functions, a disk of radius `1/λ` in the `(cos nθ, sin nθ)`
/// coefficients; the L² projection clips the coefficient vector radially. For
/// `F_th^{λ(2m)}` the set is the eigenspace with nonnegative values at the
/// equator, i.e. the half-plane `a ≥ 0` of the `cos 2mθ` coefficient.
pub fn nearest_critical(spec: &EnergySpec, grid: &Grid, u: &Field) -> Result<Field> {
    spec.check_grid(grid)?;
    grid.check(u);
    let lambda = spec.lambda();
    let n = circle_frequency(lambda).ok_or(VilabError::NotAnEigenvalue(lambda))?;
    if n == 0 || 2 * n >= grid.n_nodes() {
        return Err(VilabError::NotAnEigenvalue(lambda));
    }
    let (a, b) = mode_pair(&u.values, n);
    let (a, b, offset) = match spec {
        EnergySpec::SphereObstacle { .. } => {
            let rho = a.hypot(b);
            let cap = 1.0 / lambda;
            let s = if rho > cap { cap / rho } else { 1.0 };
            (a * s, b * s, cap)
        }
        EnergySpec::SphereThin { .. } => (a.max(0.0), b, 0.0),
        _ => {
            return Err(VilabError::IncompatibleGrid {
                spec: spec.name(),
                grid: grid.kind().name(),
            })
        }
    };
    let nf = n as f64;
    Ok(grid.sample_angle(|t| offset + a * (nf * t).cos() + b * (nf * t).sin()))
}

/// `dist₂(u, S_λ)`.
pub fn dist_to_critical(spec: &EnergySpec, grid: &Grid, u: &Field) -> Result<f64> {
    let p = nearest_critical(spec, grid, u)?;
    Ok(grid.norm(&u.sub(&p)))
}

/// Projection onto the modes of frequency `n` plus the mean, used by tests and
/// samplers to build critical points.
pub fn low_modes(u: &Field, n: usize) -> Field {
    Field::new(u.grid, filter_modes(&u.values, |k| k <= n))
}

/// Constrained gradient norm of `F_ob` at `Q_A` with its own trace pinned.
pub fn qa_stationarity(grid: &Grid, q: &Field) -> Result<f64> {
    let k = Constraint::obstacle(grid, q);
    let grad = eval_gradient(&EnergySpec::Obstacle, grid, q)?;
    Ok(k.constrained_grad_norm(grid, q, &grad))
}
