//! Discrete domains: the interval, the polar disk, the half-disk carrying a thin
//! set, and the circle.
//!
//! Ball grids use a vertex-centred finite-volume discretisation. Each node owns
//! a control cell whose area is its quadrature weight, and neighbouring nodes
//! are joined by an edge with conductance `face length / node distance`. The
//! stiffness matrix is the graph Laplacian of those conductances, so
//! `u·Su ≈ ∫|∇u|²` and `Δu = −(Su)/w` is symmetric in the weighted product by
//! construction. The circle uses the exact spectral Laplacian.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VilabError};
use crate::operator::{dot, CsrMatrix, Circulant, Stiffness};

/// Smallest resolution accepted by [`build_grid`].
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// The unit ball of dimension one, `[−1, 1]`.
    Interval,
    /// The unit disk on a polar tensor grid with a single centre node.
    Disk,
    /// The upper half-disk; the diameter carries the thin set.
    HalfDiskThin,
    /// The unit circle with a uniform angular grid.
    Circle,
}

impl GridKind {
    pub fn name(self) -> &'static str {
        match self {
            GridKind::Interval => "interval",
            GridKind::Disk => "disk",
            GridKind::HalfDiskThin => "half_disk_thin",
            GridKind::Circle => "circle",
        }
    }

    /// Dimension of the ball the grid discretises (the circle is `∂B₁ ⊂ ℝ²`).
    pub fn ambient_dim(self) -> usize {
        match self {
            GridKind::Interval => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identifies a grid; two grids built from the same `(kind, n)` are identical.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridId {
    pub kind: GridKind,
    pub n: usize,
}

/// Ring structure of the polar grids.
///
/// Ring `0` is the centre node; rings `1..=n_rings` carry `n_angles` nodes each
/// at radius `ring · dr`, so the outermost ring lies on `∂B₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarLayout {
    pub n_rings: usize,
    pub n_angles: usize,
    pub dr: f64,
    pub dtheta: f64,
    /// `true` for the full disk, `false` for the half-disk whose angles run
    /// from `0` to `π` inclusive.
    pub periodic: bool,
}

impl PolarLayout {
    pub fn node(&self, ring: usize, angle: usize) -> usize {
        if ring == 0 {
            0
        } else {
            1 + (ring - 1) * self.n_angles + angle
        }
    }

    pub fn radius(&self, ring: usize) -> f64 {
        ring as f64 * self.dr
    }

    pub fn angle(&self, a: usize) -> f64 {
        a as f64 * self.dtheta
    }

    /// Radial quadrature weights `ω_i` with `Σ_i ω_i f(r_i) ≈ ∫₀¹ f(r) dr`:
    /// each ring owns the radial extent of its control cell.
    pub fn radial_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dr; self.n_rings + 1];
        w[0] = 0.5 * self.dr;
        w[self.n_rings] = 0.5 * self.dr;
        w
    }
}

/// A discretised domain together with its quadrature and stiffness matrix.
#[derive(Clone, Debug)]
pub struct Grid {
    id: GridId,
    coords: Vec<[f64; 2]>,
    weights: Vec<f64>,
    boundary_mask: Vec<bool>,
    thin_mask: Vec<bool>,
    spacing: f64,
    stiffness: Stiffness,
    polar: Option<PolarLayout>,
}

/// A real-valued grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: GridId,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridId, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self, other: &Field) {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
    }

    pub fn add(&self, other: &Field) -> Field {
        self.check(other);
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.check(other);
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        self.check(other);
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        self.check(other);
        Field::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Builds the grid of the given kind at resolution `n`.
///
/// `n` is the node count for the interval and the circle; for the polar grids
/// it is the number of angular nodes of the matching full circle, with `n/2`
/// radial rings.
pub fn build_grid(kind: GridKind, n: usize) -> Result<Grid> {
    if n < MIN_RESOLUTION {
        return Err(VilabError::ResolutionTooCoarse {
            n,
            min: MIN_RESOLUTION,
        });
    }
    if kind != GridKind::Interval && n % 2 != 0 {
        return Err(VilabError::ResolutionNotEven {
            n,
            kind: kind.name(),
        });
    }
    let id = GridId { kind, n };
    Ok(match kind {
        GridKind::Interval => interval(id),
        GridKind::Circle => circle(id),
        GridKind::Disk | GridKind::HalfDiskThin => polar(id),
    })
}

fn interval(id: GridId) -> Grid {
    let n = id.n;
    let h = 2.0 / (n - 1) as f64;
    let coords = (0..n).map(|j| [-1.0 + j as f64 * h, 0.0]).collect();
    let mut weights = vec![h; n];
    weights[0] = 0.5 * h;
    weights[n - 1] = 0.5 * h;
    let mut boundary_mask = vec![false; n];
    boundary_mask[0] = true;
    boundary_mask[n - 1] = true;
    let edges: Vec<_> = (0..n - 1).map(|j| (j, j + 1, 1.0 / h)).collect();
    Grid {
        id,
        coords,
        weights,
        boundary_mask,
        thin_mask: vec![false; n],
        spacing: h,
        stiffness: Stiffness::Sparse(CsrMatrix::from_edges(n, &edges)),
        polar: None,
    }
}

fn circle(id: GridId) -> Grid {
    let n = id.n;
    let h = 2.0 * PI / n as f64;
    let coords = (0..n)
        .map(|j| {
            let t = j as f64 * h;
            [t.cos(), t.sin()]
        })
        .collect();
    // S = W·(−Δ) with the spectral Laplacian; the Nyquist mode keeps k = n/2.
    let symbol = (0..n)
        .map(|k| {
            let kk = k.min(n - k) as f64;
            h * kk * kk
        })
        .collect();
    let mut thin_mask = vec![false; n];
    thin_mask[0] = true;
    thin_mask[n / 2] = true;
    Grid {
        id,
        coords,
        weights: vec![h; n],
        boundary_mask: vec![false; n],
        thin_mask,
        spacing: h,
        stiffness: Stiffness::Circulant(Circulant::from_symbol(symbol)),
        polar: None,
    }
}

fn polar(id: GridId) -> Grid {
    let n = id.n;
    let full = id.kind == GridKind::Disk;
    let n_rings = n / 2;
    let dr = 1.0 / n_rings as f64;
    let (n_angles, dtheta) = if full {
        (n, 2.0 * PI / n as f64)
    } else {
        (n / 2 + 1, 2.0 * PI / n as f64)
    };
    let layout = PolarLayout {
        n_rings,
        n_angles,
        dr,
        dtheta,
        periodic: full,
    };
    let n_nodes = 1 + n_rings * n_angles;
    // angular extent of each ray's cells; the half-disk end rays own half a cell
    let aw: Vec<f64> = (0..n_angles)
        .map(|a| {
            if !full && (a == 0 || a == n_angles - 1) {
                0.5 * dtheta
            } else {
                dtheta
            }
        })
        .collect();
    let total_angle: f64 = aw.iter().sum();

    let mut coords = vec![[0.0, 0.0]; n_nodes];
    let mut weights = vec![0.0; n_nodes];
    let mut boundary_mask = vec![false; n_nodes];
    let mut thin_mask = vec![false; n_nodes];
    let mut edges = Vec::with_capacity(2 * n_nodes);

    weights[0] = 0.5 * total_angle * (0.5 * dr).powi(2);
    thin_mask[0] = !full;
    for i in 1..=n_rings {
        let r = layout.radius(i);
        let outer = i == n_rings;
        let width = if outer { 0.5 * dr } else { dr };
        // ∫ r dr over the radial extent of the cell
        let radial_area = if outer {
            0.5 * (1.0 - (1.0 - 0.5 * dr).powi(2))
        } else {
            r * dr
        };
        for (a, &w_a) in aw.iter().enumerate() {
            let k = layout.node(i, a);
            let t = layout.angle(a);
            coords[k] = [r * t.cos(), r * t.sin()];
            weights[k] = radial_area * w_a;
            boundary_mask[k] = outer;
            thin_mask[k] = !full && !outer && (a == 0 || a == n_angles - 1);

            let inward = if i == 1 {
                0.5 * w_a
            } else {
                (r - 0.5 * dr) * w_a / dr
            };
            edges.push((layout.node(i - 1, a), k, inward));

            let next = if full {
                Some((a + 1) % n_angles)
            } else if a + 1 < n_angles {
                Some(a + 1)
            } else {
                None
            };
            if let Some(b) = next {
                edges.push((k, layout.node(i, b), width / (r * dtheta)));
            }
        }
    }
    Grid {
        id,
        coords,
        weights,
        boundary_mask,
        thin_mask,
        spacing: dr,
        stiffness: Stiffness::Sparse(CsrMatrix::from_edges(n_nodes, &edges)),
        polar: Some(layout),
    }
}

impl Grid {
    pub fn id(&self) -> GridId {
        self.id
    }

    pub fn kind(&self) -> GridKind {
        self.id.kind
    }

    /// Resolution parameter the grid was built with.
    pub fn resolution(&self) -> usize {
        self.id.n
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary_mask
    }

    pub fn thin_mask(&self) -> &[bool] {
        &self.thin_mask
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn stiffness(&self) -> &Stiffness {
        &self.stiffness
    }

    pub fn polar(&self) -> Option<&PolarLayout> {
        self.polar.as_ref()
    }

    /// Angle of node `j` on the circle or the polar grids.
    pub fn angle(&self, j: usize) -> f64 {
        let [x, y] = self.coords[j];
        match self.id.kind {
            GridKind::Circle => 2.0 * PI * j as f64 / self.id.n as f64,
            _ => {
                let t = y.atan2(x);
                if t < 0.0 {
                    t + 2.0 * PI
                } else {
                    t
                }
            }
        }
    }

    pub fn zeros(&self) -> Field {
        Field::new(self.id, vec![0.0; self.n_nodes()])
    }

    pub fn constant(&self, c: f64) -> Field {
        Field::new(self.id, vec![c; self.n_nodes()])
    }

    /// Samples `f` at every node's Cartesian coordinates.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Field {
        Field::new(self.id, self.coords.iter().map(|&p| f(p)).collect())
    }

    /// Samples `f(θ)` on the circle, or `f(r, θ)` on the polar grids via [`Self::sample_polar`].
    pub fn sample_angle(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.id, (0..self.n_nodes()).map(|j| f(self.angle(j))).collect())
    }

    pub fn sample_polar(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::new(
            self.id,
            (0..self.n_nodes())
                .map(|j| {
                    let [x, y] = self.coords[j];
                    let r = x.hypot(y);
                    let t = if r == 0.0 { 0.0 } else { self.angle(j) };
                    f(r, t)
                })
                .collect(),
        )
    }

    pub fn check(&self, f: &Field) {
        assert_eq!(f.grid, self.id, "field does not live on this grid");
        assert_eq!(f.values.len(), self.n_nodes(), "field length mismatch");
    }

    /// Weighted inner product `Σ_j w_j f_j g_j`.
    pub fn inner(&self, f: &Field, g: &Field) -> f64 {
        self.check(f);
        self.check(g);
        f.values
            .iter()
            .zip(&g.values)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn norm(&self, f: &Field) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// `∫ f`.
    pub fn integral(&self, f: &Field) -> f64 {
        self.check(f);
        dot(&f.values, &self.weights)
    }

    /// The Dirichlet form `∫ ∇f·∇g`.
    pub fn dirichlet(&self, f: &Field, g: &Field) -> f64 {
        self.check(f);
        self.check(g);
        self.stiffness.form(&f.values, &g.values)
    }

    /// `S f` as raw coefficients (a covector, not a field).
    pub fn stiffness_apply(&self, f: &Field) -> Vec<f64> {
        self.check(f);
        self.stiffness.apply_vec(&f.values)
    }

    /// Discrete Laplacian `−W⁻¹ S f`.
    pub fn laplacian(&self, f: &Field) -> Field {
        let sf = self.stiffness_apply(f);
        Field::new(
            self.id,
            sf.iter().zip(&self.weights).map(|(s, w)| -s / w).collect(),
        )
    }

    /// `(∫|∇f|² + ∫f²)^½`.
    pub fn h1_norm(&self, f: &Field) -> f64 {
        (self.dirichlet(f, f).max(0.0) + self.inner(f, f)).sqrt()
    }

    /// Values of ring `ring` of a polar field, ordered by angle.
    pub fn ring(&self, f: &Field, ring: usize) -> Vec<f64> {
        self.check(f);
        let p = self.polar.expect("ring access needs a polar grid");
        if ring == 0 {
            return vec![f.values[0]; p.n_angles];
        }
        (0..p.n_angles).map(|a| f.values[p.node(ring, a)]).collect()
    }
}
