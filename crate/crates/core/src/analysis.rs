//! Spectral splits, Łojasiewicz batteries, exponent estimates and decay-rate fits.

mod fit;
mod loja;
pub(crate) mod sampler;
mod spectral;

pub use fit::{
    decay_exponent, estimate_gamma, fit_line, fit_rate, fit_rate_series, fit_rate_series_floor, GammaEstimate, LineFit,
    RateFit, RateFits, RateModel, DIST_FLOOR,
};
pub use loja::{loja_check, thin_sign_conditions, LojaReport, LojaRow, NUMERIC_ZERO};
pub use sampler::{build_battery, Battery, BatteryKind, Recipe, BALL_OBSTACLE_DATA};
pub use spectral::{spectral_split, SpectralSplit};

use serde::Serialize;

use crate::constraint::Constraint;
use crate::geometry::{Field, Grid};

/// Łojasiewicz exponent of the obstacle functional on `S^{d−1}` near its critical set.
pub fn sphere_obstacle_gamma(d: usize) -> f64 {
    1.0 / (d as f64 + 2.0)
}

/// Łojasiewicz exponent of the thin-obstacle functional on `S^{d−1}`.
pub fn sphere_thin_gamma(d: usize) -> f64 {
    1.0 / d as f64
}

/// Both sides of `∫|∇w|² = 2(F(φ + w) − F(φ)) − 2∫_{φ=0} w` for the obstacle
/// energy, `w = u − φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct H1Upgrade {
    pub lhs: f64,
    pub rhs: f64,
}

impl H1Upgrade {
    pub fn rel_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// Evaluates the H¹ upgrade identity for the deviation `w` with energy gap
/// `energy_gap = F(φ + w) − F(φ)`. The continuum identity uses `∇F(φ) = 1_{φ=0}`;
/// on the grid the multiplier differs from the indicator only at the cells
/// cut by the free boundary, which is the quadrature error measured here.
pub fn h1_upgrade(grid: &Grid, k: &Constraint, phi: &Field, w: &Field, energy_gap: f64) -> H1Upgrade {
    let contact = k.contact_set(phi);
    let on_contact: f64 = (0..w.len())
        .filter(|&j| contact[j])
        .map(|j| grid.weights()[j] * w.values[j])
        .sum();
    H1Upgrade {
        lhs: grid.dirichlet(w, w),
        rhs: 2.0 * energy_gap - 2.0 * on_contact,
    }
}
