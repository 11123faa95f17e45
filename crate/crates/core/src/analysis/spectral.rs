use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Result, VilabError};
use crate::fourier::{circle_frequency, frequency, spectrum, synthesize};
use crate::geometry::{Field, Grid, GridKind};

/// `u = v₋ + v₀ + v₊` by the eigenvalue of each Fourier mode relative to `λ`.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralSplit {
    #[serde(skip)]
    pub v_minus: Field,
    #[serde(skip)]
    pub v_zero: Field,
    #[serde(skip)]
    pub v_plus: Field,
    /// Eigenvalues `k²` carried by `u` (nonzero spectral content), ascending.
    pub eigvals_used: Vec<f64>,
    /// `(n + 1)² − n²` for `λ = n²`.
    pub gap: f64,
}

pub fn spectral_split(grid: &Grid, u: &Field, lambda: f64) -> Result<SpectralSplit> {
    if grid.kind() != GridKind::Circle {
        return Err(VilabError::IncompatibleGrid {
            spec: "spectral split".into(),
            grid: grid.kind().name(),
        });
    }
    grid.check(u);
    let n_nodes = grid.n_nodes();
    let n = circle_frequency(lambda).ok_or(VilabError::NotAnEigenvalue(lambda))?;
    if 2 * n >= n_nodes {
        return Err(VilabError::NotAnEigenvalue(lambda));
    }
    let x = spectrum(&u.values);
    let zero = Complex64::new(0.0, 0.0);
    let part = |keep: &dyn Fn(usize) -> bool| {
        let y: Vec<Complex64> = x
            .iter()
            .enumerate()
            .map(|(j, &c)| if keep(frequency(j, n_nodes)) { c } else { zero })
            .collect();
        Field::new(u.grid, synthesize(&y))
    };
    let amp_max = x.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut present = vec![false; n_nodes / 2 + 1];
    for (j, c) in x.iter().enumerate() {
        if c.norm() > 1e-13 * amp_max {
            present[frequency(j, n_nodes)] = true;
        }
    }
    Ok(SpectralSplit {
        v_minus: part(&|k| k < n),
        v_zero: part(&|k| k == n),
        v_plus: part(&|k| k > n),
        eigvals_used: present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(k, _)| (k * k) as f64)
            .collect(),
        gap: (2 * n + 1) as f64,
    })
}
