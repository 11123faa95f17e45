//! Convex admissible sets: sign constraints on a node subset plus pinned
//! Dirichlet data.

use serde::{Deserialize, Serialize};

use crate::geometry::{Field, Grid, GridId};

/// Relative threshold below which a sign node counts as touching the obstacle.
pub const CONTACT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `u ≥ 0` at every interior node, boundary pinned.
    PositiveEverywhere,
    /// `u ≥ 0` on the thin set only.
    PositiveOnThinSet,
    /// `u ≥ 0` at every node, nothing pinned.
    PositiveCone,
    /// No sign condition; pinned nodes (if any) still hold.
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub grid: GridId,
    pub sign_nodes: Vec<bool>,
    /// Obstacle level on the sign nodes: `u_j ≥ lower_j`. Zero unless the
    /// constraint was shifted to deviation coordinates.
    pub lower: Vec<f64>,
    pub pinned: Vec<Option<f64>>,
    pub tolerance: f64,
}

impl Constraint {
    /// `K_ob^g`: nonnegative in the ball, equal to `g` on the boundary nodes.
    pub fn obstacle(grid: &Grid, g: &Field) -> Self {
        grid.check(g);
        let b = grid.boundary_mask();
        Self {
            kind: ConstraintKind::PositiveEverywhere,
            grid: grid.id(),
            sign_nodes: b.iter().map(|&x| !x).collect(),
            lower: vec![0.0; b.len()],
            pinned: pins(b, g),
            tolerance: 0.0,
        }
    }

    /// `K_th^g`: nonnegative on the thin set, equal to `g` on the boundary nodes.
    pub fn thin(grid: &Grid, g: &Field) -> Self {
        grid.check(g);
        let b = grid.boundary_mask();
        Self {
            kind: ConstraintKind::PositiveOnThinSet,
            grid: grid.id(),
            sign_nodes: grid.thin_mask().to_vec(),
            lower: vec![0.0; b.len()],
            pinned: pins(b, g),
            tolerance: 0.0,
        }
    }

    /// Nonnegativity everywhere without boundary data (the cone on the circle).
    pub fn cone(grid: &Grid) -> Self {
        Self {
            kind: ConstraintKind::PositiveCone,
            grid: grid.id(),
            sign_nodes: vec![true; grid.n_nodes()],
            lower: vec![0.0; grid.n_nodes()],
            pinned: vec![None; grid.n_nodes()],
            tolerance: 0.0,
        }
    }

    /// Nonnegativity on the thin set without boundary data (the equator of the circle).
    pub fn thin_sphere(grid: &Grid) -> Self {
        Self {
            kind: ConstraintKind::PositiveOnThinSet,
            grid: grid.id(),
            sign_nodes: grid.thin_mask().to_vec(),
            lower: vec![0.0; grid.n_nodes()],
            pinned: vec![None; grid.n_nodes()],
            tolerance: 0.0,
        }
    }

    pub fn unconstrained(grid: &Grid) -> Self {
        Self {
            kind: ConstraintKind::Unconstrained,
            grid: grid.id(),
            sign_nodes: vec![false; grid.n_nodes()],
            lower: vec![0.0; grid.n_nodes()],
            pinned: vec![None; grid.n_nodes()],
            tolerance: 0.0,
        }
    }

    /// Unconstrained apart from the boundary data `g` (harmonic-type solves).
    pub fn pinned_only(grid: &Grid, g: &Field) -> Self {
        grid.check(g);
        Self {
            kind: ConstraintKind::Unconstrained,
            grid: grid.id(),
            sign_nodes: vec![false; grid.n_nodes()],
            lower: vec![0.0; grid.n_nodes()],
            pinned: pins(grid.boundary_mask(), g),
            tolerance: 0.0,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// The same set seen from `phi`: `w ∈ K − phi` iff `phi + w ∈ K`.
    pub fn shifted(&self, phi: &Field) -> Self {
        self.check(phi);
        let mut k = self.clone();
        for (j, v) in phi.values.iter().enumerate() {
            k.lower[j] -= v;
            if let Some(p) = k.pinned[j].as_mut() {
                *p -= v;
            }
        }
        k
    }

    /// `u_j − lower_j`, the distance to the obstacle at every node.
    pub fn gap(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.lower).map(|(v, l)| v - l).collect()
    }

    fn check(&self, u: &Field) {
        assert_eq!(u.grid, self.grid, "field does not match the constraint's grid");
        assert_eq!(u.values.len(), self.sign_nodes.len(), "field length mismatch");
    }

    pub fn is_pinned(&self, j: usize) -> bool {
        self.pinned[j].is_some()
    }

    /// Pinned values must respect the sign condition where both apply.
    pub fn pins_consistent(&self) -> bool {
        self.pinned
            .iter()
            .zip(&self.sign_nodes)
            .zip(&self.lower)
            .all(|((p, &s), l)| !s || p.map_or(true, |v| v >= *l))
    }

    pub fn is_feasible(&self, u: &Field) -> bool {
        self.check(u);
        u.values.iter().enumerate().all(|(j, &v)| {
            v.is_finite()
                && (!self.sign_nodes[j] || v >= self.lower[j] - self.tolerance)
                && self.pinned[j].map_or(true, |p| v == p)
        })
    }

    /// Pointwise L² projection: clip sign nodes at zero and overwrite pinned nodes.
    pub fn project(&self, u: &Field) -> Field {
        self.check(u);
        let values = u
            .values
            .iter()
            .enumerate()
            .map(|(j, &v)| match self.pinned[j] {
                Some(p) => p,
                None if self.sign_nodes[j] => v.max(self.lower[j]),
                None => v,
            })
            .collect();
        Field::new(u.grid, values)
    }

    /// Nodes of `u` that sit on the obstacle.
    pub fn contact_set(&self, u: &Field) -> Vec<bool> {
        self.check(u);
        let thr = self.tolerance + CONTACT_EPS * (1.0 + u.max_abs());
        u.values
            .iter()
            .zip(&self.lower)
            .zip(&self.sign_nodes)
            .zip(&self.pinned)
            .map(|(((&v, l), &s), p)| s && p.is_none() && v - l <= thr)
            .collect()
    }

    /// Steepest feasible descent direction `d*` for the gradient `grad` at `u`.
    pub fn tangent_clip(&self, u: &Field, grad: &Field) -> Field {
        self.check(u);
        self.check(grad);
        let contact = self.contact_set(u);
        let values = (0..u.len())
            .map(|j| {
                if self.pinned[j].is_some() {
                    0.0
                } else if contact[j] {
                    (-grad.values[j]).max(0.0)
                } else {
                    -grad.values[j]
                }
            })
            .collect();
        Field::new(u.grid, values)
    }

    /// `‖grad‖_K`, the weighted norm of [`Self::tangent_clip`].
    pub fn constrained_grad_norm(&self, grid: &Grid, u: &Field, grad: &Field) -> f64 {
        grid.norm(&self.tangent_clip(u, grad))
    }
}

fn pins(mask: &[bool], g: &Field) -> Vec<Option<f64>> {
    mask.iter()
        .zip(&g.values)
        .map(|(&b, &v)| if b { Some(v) } else { None })
        .collect()
}

/// Closed-form constrained norm on raw data, for small instances that do not
/// come from a grid. `sign` marks nodes with `u ≥ 0`, `pinned` nodes admit no
/// variation.
pub fn k_norm_raw(weights: &[f64], sign: &[bool], pinned: &[bool], u: &[f64], grad: &[f64]) -> f64 {
    let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thr = CONTACT_EPS * (1.0 + umax);
    (0..u.len())
        .map(|j| {
            let d = if pinned[j] {
                0.0
            } else if sign[j] && u[j] <= thr {
                (-grad[j]).max(0.0)
            } else {
                -grad[j]
            };
            weights[j] * d * d
        })
        .sum::<f64>()
        .sqrt()
}
