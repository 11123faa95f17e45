//! The functionals, their L² gradients, the Weiss-type ball energies and the
//! scalar helpers `f_γ` and `λ(k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VilabError};
use crate::geometry::{Field, Grid, GridKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteDimProblem {
    /// `F(u) = ‖u‖²`.
    FreeQuadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergySpec {
    /// `½∫|∇u|² + ∫u` on the ball.
    Obstacle,
    /// `½∫|∇u|²` on the half-ball.
    ThinObstacle,
    /// `½∫(|∇u|² − λu²) + ∫u` on the circle.
    SphereObstacle { lambda: f64 },
    /// `½∫(|∇u|² − λu²)` on the circle, with `λ = λ(2m)`.
    SphereThin { lambda: f64, m: u32 },
    FiniteDim { problem: FiniteDimProblem },
}

/// Coefficients of `F(u) = ½a·∫|∇u|² + ½μ∫u² + b∫u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic {
    pub stiffness: f64,
    pub mass: f64,
    pub linear: f64,
}

impl EnergySpec {
    /// The thin sphere functional at homogeneity `2m` on the circle.
    pub fn sphere_thin(m: u32) -> Self {
        EnergySpec::SphereThin {
            lambda: lambda_of(2 * m as usize, 2),
            m,
        }
    }

    pub fn name(&self) -> String {
        match self {
            EnergySpec::Obstacle => "obstacle".into(),
            EnergySpec::ThinObstacle => "thin_obstacle".into(),
            EnergySpec::SphereObstacle { lambda } => format!("sphere_obstacle(lambda={lambda})"),
            EnergySpec::SphereThin { lambda, m } => format!("sphere_thin(lambda={lambda}, m={m})"),
            EnergySpec::FiniteDim { problem } => format!("finite_dim({problem:?})"),
        }
    }

    /// λ of the sphere variants, 0 otherwise.
    pub fn lambda(&self) -> f64 {
        match *self {
            EnergySpec::SphereObstacle { lambda } | EnergySpec::SphereThin { lambda, .. } => lambda,
            _ => 0.0,
        }
    }

    pub fn quadratic(&self) -> Quadratic {
        match *self {
            EnergySpec::Obstacle => Quadratic {
                stiffness: 1.0,
                mass: 0.0,
                linear: 1.0,
            },
            EnergySpec::ThinObstacle => Quadratic {
                stiffness: 1.0,
                mass: 0.0,
                linear: 0.0,
            },
            EnergySpec::SphereObstacle { lambda } => Quadratic {
                stiffness: 1.0,
                mass: -lambda,
                linear: 1.0,
            },
            EnergySpec::SphereThin { lambda, .. } => Quadratic {
                stiffness: 1.0,
                mass: -lambda,
                linear: 0.0,
            },
            EnergySpec::FiniteDim {
                problem: FiniteDimProblem::FreeQuadratic,
            } => Quadratic {
                stiffness: 0.0,
                mass: 2.0,
                linear: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EnergySpec::SphereObstacle { lambda } if !(lambda > 0.0 && lambda.is_finite()) => Err(
                VilabError::InvalidParameter(format!("lambda must be positive, got {lambda}")),
            ),
            EnergySpec::SphereThin { lambda, m } => {
                let expected = lambda_of(2 * m as usize, 2);
                if m == 0 || lambda != expected {
                    Err(VilabError::InvalidParameter(format!(
                        "sphere_thin needs m >= 1 and lambda = 2m(2m+d-2) = {expected}, got lambda={lambda}, m={m}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Rejects grids on which the functional is not defined.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        self.validate()?;
        let ok = match self {
            EnergySpec::Obstacle => matches!(grid.kind(), GridKind::Interval | GridKind::Disk),
            EnergySpec::ThinObstacle => grid.kind() == GridKind::HalfDiskThin,
            EnergySpec::SphereObstacle { .. } | EnergySpec::SphereThin { .. } => {
                grid.kind() == GridKind::Circle
            }
            EnergySpec::FiniteDim { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(VilabError::IncompatibleGrid {
                spec: self.name(),
                grid: grid.kind().name(),
            })
        }
    }

    /// Whether the functional is one of the ball problems (as opposed to the sphere ones).
    pub fn is_ball(&self) -> bool {
        matches!(self, EnergySpec::Obstacle | EnergySpec::ThinObstacle)
    }
}

/// `F(u)` without the grid check; callers have validated the pair.
pub(crate) fn energy_unchecked(q: Quadratic, grid: &Grid, u: &Field) -> f64 {
    let mut e = 0.0;
    if q.stiffness != 0.0 {
        e += 0.5 * q.stiffness * grid.dirichlet(u, u);
    }
    for (v, w) in u.values.iter().zip(grid.weights()) {
        e += w * v * (0.5 * q.mass * v + q.linear);
    }
    e
}

/// `F(u) − F(φ)` expanded around `φ`, which avoids cancellation when `u` is close to `φ`.
pub(crate) fn energy_gap_unchecked(q: Quadratic, grid: &Grid, phi: &Field, u: &Field) -> f64 {
    let d = u.sub(phi);
    let g = gradient_unchecked(q, grid, phi);
    let mut e = 0.0;
    if q.stiffness != 0.0 {
        e += 0.5 * q.stiffness * grid.dirichlet(&d, &d);
    }
    for ((v, gv), w) in d.values.iter().zip(&g.values).zip(grid.weights()) {
        e += w * v * (0.5 * q.mass * v + gv);
    }
    e
}

pub(crate) fn gradient_unchecked(q: Quadratic, grid: &Grid, u: &Field) -> Field {
    let su = if q.stiffness != 0.0 {
        grid.stiffness_apply(u)
    } else {
        vec![0.0; u.len()]
    };
    let values = u
        .values
        .iter()
        .zip(&su)
        .zip(grid.weights())
        .map(|((v, s), w)| q.stiffness * s / w + q.mass * v + q.linear)
        .collect();
    Field::new(u.grid, values)
}

pub fn eval_energy(spec: &EnergySpec, grid: &Grid, u: &Field) -> Result<f64> {
    spec.check_grid(grid)?;
    grid.check(u);
    Ok(energy_unchecked(spec.quadratic(), grid, u))
}

/// The L² gradient `G` with `⟨G, v⟩ = dF(u)[v]` for every `v`.
///
/// On the ball this is `−Δu + 1` (or `−Δu`); at thin and boundary nodes the
/// discrete `Δ` carries the normal-flux term of the half cell.
pub fn eval_gradient(spec: &EnergySpec, grid: &Grid, u: &Field) -> Result<Field> {
    spec.check_grid(grid)?;
    grid.check(u);
    Ok(gradient_unchecked(spec.quadratic(), grid, u))
}

/// `∫_{∂B₁} u²` on a polar grid, by the angular quadrature of the outer ring.
pub fn boundary_l2_sq(grid: &Grid, u: &Field) -> Result<f64> {
    let p = polar_of(grid)?;
    grid.check(u);
    let outer = p.n_rings;
    let mut s = 0.0;
    for a in 0..p.n_angles {
        let w = if !p.periodic && (a == 0 || a == p.n_angles - 1) {
            0.5 * p.dtheta
        } else {
            p.dtheta
        };
        let v = u.values[p.node(outer, a)];
        s += w * v * v;
    }
    Ok(s)
}

fn polar_of(grid: &Grid) -> Result<crate::geometry::PolarLayout> {
    grid.polar().copied().ok_or(VilabError::IncompatibleGrid {
        spec: "weiss energy".into(),
        grid: grid.kind().name(),
    })
}

/// `∫|∇u|² − k∫_{∂B₁}u²`, the ball energy whose value on `r^k c` slices into
/// the sphere energy `∫|∇_θ c|² − λ(k)∫c²`.
pub fn weiss_energy(k: f64, grid: &Grid, u: &Field) -> Result<f64> {
    let b = boundary_l2_sq(grid, u)?;
    Ok(grid.dirichlet(u, u) - k * b)
}

/// `G_ob(u) = F_ob(u) − ∫_{∂B₁}u²`, i.e. half the `k = 2` energy plus `∫u`.
pub fn g_ob(grid: &Grid, u: &Field) -> Result<f64> {
    Ok(0.5 * weiss_energy(2.0, grid, u)? + grid.integral(u))
}

/// `G_th(u) = F_th(u) − m∫_{∂B₁}u²`, i.e. half the `k = 2m` energy.
pub fn g_th(m: u32, grid: &Grid, u: &Field) -> Result<f64> {
    Ok(0.5 * weiss_energy(2.0 * m as f64, grid, u)?)
}

/// `f_γ(t)`: `t^½` above 1, `t^{1−γ}` on `[0, 1]`, zero for negative `t`.
pub fn f_gamma(gamma: f64, t: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(VilabError::InvalidParameter(format!(
            "gamma must lie in (0, 1/2], got {gamma}"
        )));
    }
    Ok(if t >= 1.0 {
        t.sqrt()
    } else if t > 0.0 {
        t.powf(1.0 - gamma)
    } else {
        0.0
    })
}

/// `λ(k) = k(k + d − 2)`, the eigenvalue of the `k`-homogeneous harmonics on `S^{d−1}`.
pub fn lambda_of(k: usize, d: usize) -> f64 {
    (k * (k + d - 2)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use std::f64::consts::PI;

    #[test]
    fn f_gamma_values() {
        assert_eq!(f_gamma(0.5, 4.0).unwrap(), 2.0);
        assert_eq!(f_gamma(0.25, -3.0).unwrap(), 0.0);
        for g in [0.1, 0.25, 1.0 / 3.0, 0.5] {
            assert_eq!(f_gamma(g, 1.0).unwrap(), 1.0);
        }
        assert!(f_gamma(0.0, 1.0).is_err());
        assert!(f_gamma(0.6, 1.0).is_err());
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_of(2, 2), 4.0);
        for d in 2..7 {
            assert_eq!(lambda_of(2, d), 2.0 * d as f64);
        }
        assert_eq!(lambda_of(1, 2), 1.0);
    }

    #[test]
    fn obstacle_energy_of_half_square() {
        let g = build_grid(GridKind::Interval, 513).unwrap();
        let u = g.sample(|p| 0.5 * p[0] * p[0]);
        let e = eval_energy(&EnergySpec::Obstacle, &g, &u).unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-5, "{e}");
        let grad = eval_gradient(&EnergySpec::Obstacle, &g, &u).unwrap();
        for j in 1..512 {
            assert!(grad.values[j].abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_thin_annihilates_its_eigenspace() {
        let g = build_grid(GridKind::Circle, 128).unwrap();
        let spec = EnergySpec::sphere_thin(1);
        let u = g.sample_angle(|t| (2.0 * t).cos());
        assert!(eval_energy(&spec, &g, &u).unwrap().abs() < 1e-10);
        let v = g.sample_angle(|t| 0.3 * (2.0 * t).cos() - 1.7 * (2.0 * t).sin());
        let gv = eval_gradient(&spec, &g, &v).unwrap();
        assert!(gv.max_abs() < 1e-8);
    }

    #[test]
    fn sphere_obstacle_flat_critical_point() {
        let g = build_grid(GridKind::Circle, 64).unwrap();
        let spec = EnergySpec::SphereObstacle { lambda: 1.0 };
        let grad = eval_gradient(&spec, &g, &g.constant(1.0)).unwrap();
        assert!(grad.max_abs() < 1e-12);
    }

    #[test]
    fn zero_field_has_zero_energy() {
        for (spec, kind) in [
            (EnergySpec::Obstacle, GridKind::Disk),
            (EnergySpec::ThinObstacle, GridKind::HalfDiskThin),
            (EnergySpec::SphereObstacle { lambda: 4.0 }, GridKind::Circle),
        ] {
            let g = build_grid(kind, 16).unwrap();
            assert_eq!(eval_energy(&spec, &g, &g.zeros()).unwrap(), 0.0);
        }
    }

    #[test]
    fn incompatible_pairs_are_rejected() {
        let c = build_grid(GridKind::Circle, 16).unwrap();
        assert!(eval_energy(&EnergySpec::Obstacle, &c, &c.zeros()).is_err());
        let bad = EnergySpec::SphereThin { lambda: 3.0, m: 1 };
        assert!(eval_energy(&bad, &c, &c.zeros()).is_err());
    }

    #[test]
    fn weiss_energy_of_radius() {
        let g = build_grid(GridKind::Disk, 256).unwrap();
        let u = g.sample(|p| p[0].hypot(p[1]));
        let w = weiss_energy(1.0, &g, &u).unwrap();
        assert!((w + PI).abs() < 1e-2, "{w}");
        assert_eq!(weiss_energy(2.0, &g, &g.zeros()).unwrap(), 0.0);
    }
}
