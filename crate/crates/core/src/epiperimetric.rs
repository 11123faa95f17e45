//! Slicing of ball energies into sphere energies, the stopped-flow competitor
//! and the numerical (log-)epiperimetric check on the disk.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::sampler::{circle_modes, normalize, sample_rng};
use crate::constraint::Constraint;
use crate::energy::{energy_unchecked, g_ob, g_th, lambda_of, EnergySpec};
use crate::error::{Result, VilabError};
use crate::flow::{run_flow, FlowOptions, Trajectory};
use crate::fourier::circle_frequency;
use crate::geometry::{build_grid, Field, Grid, GridKind, PolarLayout};
use crate::stationary::{dist_to_critical, nearest_critical};

/// Ambient dimension of the disk grids.
const DIM: usize = 2;

/// `ε_fl`, the flow horizon when no other cap applies.
pub const DEFAULT_EPS_FL: f64 = 1.0;

/// A function of `(r, θ)` sampled ring by ring on a polar grid.
///
/// Ring `0` sits at the centre and keeps one value per angle, since the
/// family need not be single valued there.
#[derive(Clone, Debug, PartialEq)]
pub struct RingFamily {
    pub layout: PolarLayout,
    pub rings: Vec<Vec<f64>>,
}

impl RingFamily {
    pub fn from_fn(disk: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let layout = disk_layout(disk)?;
        let rings = (0..=layout.n_rings)
            .map(|i| {
                let r = ring_radius(&layout, i);
                (0..layout.n_angles).map(|a| f(r, layout.angle(a))).collect()
            })
            .collect();
        Ok(Self { layout, rings })
    }

    /// The 0-homogeneous family `u(r, ·) = c`.
    pub fn constant(disk: &Grid, c: &Field) -> Result<Self> {
        let layout = disk_layout(disk)?;
        check_trace(&layout, c)?;
        Ok(Self {
            layout,
            rings: vec![c.values.clone(); layout.n_rings + 1],
        })
    }

    /// The ball function `r^k u(r, θ)`.
    pub fn assemble(&self, disk: &Grid, k: f64) -> Result<Field> {
        let layout = disk_layout(disk)?;
        if layout != self.layout {
            return Err(VilabError::InvalidParameter("ring family does not match the disk grid".into()));
        }
        let mut v = vec![0.0; disk.n_nodes()];
        v[0] = if k == 0.0 {
            self.rings[0].iter().sum::<f64>() / layout.n_angles as f64
        } else {
            0.0
        };
        for i in 1..=layout.n_rings {
            let s = ring_radius(&layout, i).powf(k);
            for a in 0..layout.n_angles {
                v[layout.node(i, a)] = s * self.rings[i][a];
            }
        }
        Ok(Field::new(disk.id(), v))
    }
}

fn disk_layout(disk: &Grid) -> Result<PolarLayout> {
    match (disk.kind(), disk.polar()) {
        (GridKind::Disk, Some(p)) => Ok(*p),
        _ => Err(VilabError::IncompatibleGrid {
            spec: "slicing".into(),
            grid: disk.kind().name(),
        }),
    }
}

fn check_trace(layout: &PolarLayout, c: &Field) -> Result<()> {
    if c.grid.kind != GridKind::Circle || c.values.len() != layout.n_angles {
        return Err(VilabError::InvalidParameter(format!(
            "trace with {} nodes on a {} grid does not match {} disk angles",
            c.values.len(),
            c.grid.kind.name(),
            layout.n_angles
        )));
    }
    Ok(())
}

/// Ring radius with the outer ring pinned to exactly 1.
fn ring_radius(layout: &PolarLayout, i: usize) -> f64 {
    if i == layout.n_rings {
        1.0
    } else {
        layout.radius(i)
    }
}

/// `z(r, θ) = r^k c(θ)` on the disk whose rings match the circle grid of `c`.
pub fn homogeneous_extension(disk: &Grid, k: f64, c: &Field) -> Result<Field> {
    if !(k >= 0.0) {
        return Err(VilabError::InvalidParameter(format!("homogeneity must be nonnegative, got {k}")));
    }
    RingFamily::constant(disk, c)?.assemble(disk, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceTerms {
    /// `∫₀¹ F(u(r, ·)) r^{2k+d−3} dr`.
    pub angular: f64,
    /// `∫₀¹ r^{2k+d−1} ∫|∂_r u|² dr`.
    pub radial: f64,
}

impl SliceTerms {
    pub fn total(&self) -> f64 {
        self.angular + self.radial
    }
}

fn slice_with(k: f64, u: &RingFamily, f: impl Fn(&[f64]) -> f64) -> SliceTerms {
    let p = &u.layout;
    let d = DIM as f64;
    let omega = p.radial_weights();
    let mut angular = 0.0;
    for (i, ring) in u.rings.iter().enumerate() {
        let r = ring_radius(p, i);
        if r > 0.0 {
            angular += omega[i] * r.powf(2.0 * k + d - 3.0) * f(ring);
        }
    }
    let mut radial = 0.0;
    for i in 0..p.n_rings {
        let rm = 0.5 * (ring_radius(p, i) + ring_radius(p, i + 1));
        let h = ring_radius(p, i + 1) - ring_radius(p, i);
        let s: f64 = u.rings[i + 1]
            .iter()
            .zip(&u.rings[i])
            .map(|(b, a)| ((b - a) / h).powi(2))
            .sum();
        radial += h * rm.powf(2.0 * k + d - 1.0) * p.dtheta * s;
    }
    SliceTerms { angular, radial }
}

/// Sliced value of `∫|∇(r^k u)|² − k∫_{∂B₁}(r^k u)²` with the sphere energy
/// `F(c) = ∫|∇_θ c|² − λ(k)∫c²`.
pub fn slice_energy(k: f64, disk: &Grid, u: &RingFamily) -> Result<SliceTerms> {
    if disk_layout(disk)? != u.layout {
        return Err(VilabError::InvalidParameter("ring family does not match the disk grid".into()));
    }
    let circle = build_grid(GridKind::Circle, u.layout.n_angles)?;
    let lambda = k * (k + DIM as f64 - 2.0);
    Ok(slice_with(k, u, |ring| {
        let c = Field::new(circle.id(), ring.to_vec());
        circle.dirichlet(&c, &c) - lambda * circle.inner(&c, &c)
    }))
}

/// Which ball functional the competitor is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpiProblem {
    /// `G_ob` at 2-homogeneous singular points.
    Ob,
    /// `G_th` at `2m`-homogeneous singular points.
    Th { m: u32 },
}

impl EpiProblem {
    pub fn homogeneity(&self) -> usize {
        match *self {
            EpiProblem::Ob => 2,
            EpiProblem::Th { m } => 2 * m as usize,
        }
    }

    pub fn sphere_spec(&self) -> EnergySpec {
        match *self {
            EpiProblem::Ob => EnergySpec::SphereObstacle {
                lambda: lambda_of(2, DIM),
            },
            EpiProblem::Th { m } => EnergySpec::sphere_thin(m),
        }
    }

    pub fn constraint(&self, circle: &Grid) -> Constraint {
        match self {
            EpiProblem::Ob => Constraint::cone(circle),
            EpiProblem::Th { .. } => Constraint::thin_sphere(circle),
        }
    }

    /// Exponent `γ` of the epiperimetric inequality in dimension `d`.
    pub fn gamma(&self, d: usize) -> f64 {
        match self {
            EpiProblem::Ob => epi_gamma_ob(d),
            EpiProblem::Th { .. } => epi_gamma_th(d),
        }
    }

    /// `G` of the ball function `h` assembled on the disk.
    pub fn ball_energy(&self, disk: &Grid, h: &Field) -> Result<f64> {
        match *self {
            EpiProblem::Ob => g_ob(disk, h),
            EpiProblem::Th { m } => g_th(m, disk, h),
        }
    }
}

/// `0` for `d = 2`, `(d − 1)/(d + 3)` above.
pub fn epi_gamma_ob(d: usize) -> f64 {
    if d <= 2 {
        0.0
    } else {
        (d as f64 - 1.0) / (d as f64 + 3.0)
    }
}

pub fn epi_gamma_th(d: usize) -> f64 {
    (d as f64 - 2.0) / d as f64
}

/// Largest stopping time allowed: `½(2k + d − 2)^{−½}`.
pub fn alpha_cap(k: usize, d: usize) -> f64 {
    0.5 / ((2 * k + d - 2) as f64).sqrt()
}

/// Sliced `G(r^k u)` for the sphere energy of `spec`, with its `½` and linear term.
fn sliced_g(spec: &EnergySpec, circle: &Grid, k: usize, u: &RingFamily) -> SliceTerms {
    let q = spec.quadratic();
    let t = slice_with(k as f64, u, |ring| {
        energy_unchecked(q, circle, &Field::new(circle.id(), ring.to_vec()))
    });
    SliceTerms {
        angular: t.angular,
        radial: 0.5 * t.radial,
    }
}

/// `Θ = G_ob(Q_{I/4})`, by the same radial and angular quadrature the competitors use.
pub fn theta_ob(disk: &Grid) -> Result<f64> {
    let p = disk_layout(disk)?;
    let circle = build_grid(GridKind::Circle, p.n_angles)?;
    let q = crate::stationary::make_qa(&circle, [[0.25, 0.0], [0.0, 0.25]])?;
    let fam = RingFamily::constant(disk, &q)?;
    Ok(sliced_g(&EpiProblem::Ob.sphere_spec(), &circle, 2, &fam).total())
}

#[derive(Clone, Debug)]
pub struct Competitor {
    /// `min{ε_fl, ε₂, cap}`; zero on the trivial branch.
    pub alpha: f64,
    /// First time the energy gap halves, if reached before `ε_fl`.
    pub eps2: Option<f64>,
    pub sphere_traj: Trajectory,
    /// `u(−α log r, θ)` ring by ring.
    pub h: RingFamily,
    /// `r^k h` on the disk.
    pub h_ball: Field,
    pub g_z: f64,
    pub g_h: f64,
    /// Radial term of `G(h)`.
    pub radial_h: f64,
    /// `G` at the critical level.
    pub theta_ref: f64,
    /// `F(c) − F(ψ)`.
    pub gap: f64,
    pub trivial: bool,
}

/// Builds the stopped-flow competitor for the trace `c` on `disk`.
pub fn build_competitor(
    problem: EpiProblem,
    disk: &Grid,
    c: &Field,
    eps_fl: f64,
    dt: f64,
) -> Result<Competitor> {
    let layout = disk_layout(disk)?;
    check_trace(&layout, c)?;
    if !(eps_fl > 0.0) {
        return Err(VilabError::InvalidParameter(format!("eps_fl must be positive, got {eps_fl}")));
    }
    let circle = build_grid(GridKind::Circle, layout.n_angles)?;
    let spec = problem.sphere_spec();
    let k = problem.homogeneity();
    if circle_frequency(spec.lambda()) != Some(k) {
        return Err(VilabError::NotAnEigenvalue(spec.lambda()));
    }
    let kc = problem.constraint(&circle);
    if !kc.is_feasible(c) {
        return Err(VilabError::Infeasible("trace violates the sphere constraint".into()));
    }
    let q = spec.quadratic();
    let psi = nearest_critical(&spec, &circle, c)?;
    let f_psi = energy_unchecked(q, &circle, &psi);
    let f_c = energy_unchecked(q, &circle, c);
    let gap = f_c - f_psi;
    let theta_ref = sliced_g(&spec, &circle, k, &RingFamily::constant(disk, &psi)?).total();
    let z = RingFamily::constant(disk, c)?;
    let g_z = sliced_g(&spec, &circle, k, &z).total();

    let mut opts = FlowOptions::new(dt, eps_fl);
    if gap <= 1e-14 * (1.0 + f_psi.abs()) {
        opts.t_end = 0.0;
        let traj = run_flow(&spec, &kc, &circle, c, &opts)?;
        return Ok(Competitor {
            alpha: 0.0,
            eps2: None,
            sphere_traj: traj,
            h_ball: z.assemble(disk, k as f64)?,
            h: z,
            g_z,
            g_h: g_z,
            radial_h: 0.0,
            theta_ref,
            gap,
            trivial: true,
        });
    }
    let stop = f_psi + 0.5 * gap;
    opts.stop = Some(stop);
    let traj = run_flow(&spec, &kc, &circle, c, &opts)?;
    let n = traj.len();
    let eps2 = (n >= 2 && traj.energies[n - 1] <= stop).then(|| {
        let (e0, e1) = (traj.energies[n - 2], traj.energies[n - 1]);
        let s = if e0 > e1 { (e0 - stop) / (e0 - e1) } else { 1.0 };
        traj.times[n - 2] + s * (traj.times[n - 1] - traj.times[n - 2])
    });
    let alpha = eps_fl.min(eps2.unwrap_or(f64::INFINITY)).min(alpha_cap(k, DIM));
    let rings = (0..=layout.n_rings)
        .map(|i| {
            if i == layout.n_rings {
                return c.values.clone();
            }
            let r = ring_radius(&layout, i);
            let t = if r > 0.0 { (-alpha * r.ln()).min(alpha) } else { alpha };
            traj.state_at(t).values
        })
        .collect();
    let h = RingFamily { layout, rings };
    let terms = sliced_g(&spec, &circle, k, &h);
    Ok(Competitor {
        alpha,
        eps2,
        h_ball: h.assemble(disk, k as f64)?,
        sphere_traj: traj,
        h,
        g_z,
        g_h: terms.total(),
        radial_h: terms.radial,
        theta_ref,
        gap,
        trivial: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiOptions {
    pub eps_fl: f64,
    pub dt: f64,
    /// OB: bound on `dist(c, S_ob)`.
    pub delta: f64,
}

impl Default for EpiOptions {
    fn default() -> Self {
        Self {
            eps_fl: DEFAULT_EPS_FL,
            dt: 1e-3,
            delta: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpiRow {
    pub gap: f64,
    pub alpha: f64,
    pub eps2: Option<f64>,
    pub g_z: f64,
    pub g_h: f64,
    /// `None` on the trivial branch.
    pub epsilon_hat: Option<f64>,
    /// `|G(h) sliced − G(h) on the assembled field|`.
    pub slice_error: f64,
    pub trace_exact: bool,
    pub rings_feasible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpiReport {
    pub problem: EpiProblem,
    pub gamma_used: f64,
    pub theta: f64,
    pub worst_epsilon: Option<f64>,
    pub n_elements: usize,
    pub n_trivial: usize,
    /// `G(h) ≤ G(z)` on every element.
    pub never_worse: bool,
    pub trace_exact: bool,
    pub rings_feasible: bool,
    pub max_slice_error: f64,
    pub pass: bool,
    pub rows: Vec<EpiRow>,
}

fn check_hypotheses(problem: EpiProblem, circle: &Grid, disk: &Grid, c: &Field, opts: &EpiOptions) -> std::result::Result<(), String> {
    let spec = problem.sphere_spec();
    if !problem.constraint(circle).is_feasible(c) {
        return Err("trace violates the sphere constraint".into());
    }
    let k = problem.homogeneity();
    let z = RingFamily::constant(disk, c).map_err(|e| e.to_string())?;
    let g_z = sliced_g(&spec, circle, k, &z).total();
    match problem {
        EpiProblem::Ob => {
            let d = dist_to_critical(&spec, circle, c).map_err(|e| e.to_string())?;
            if d > opts.delta {
                return Err(format!("dist(c, S_ob) = {d:.3e} exceeds delta = {}", opts.delta));
            }
            let theta = theta_ob(disk).map_err(|e| e.to_string())?;
            if g_z - theta > 1.0 {
                return Err(format!("G(z) - Theta = {:.3e} exceeds 1", g_z - theta));
            }
        }
        EpiProblem::Th { .. } => {
            let l2 = circle.inner(c, c);
            if l2 > 1.0 {
                return Err(format!("int c^2 = {l2:.3e} exceeds 1"));
            }
            if g_z.abs() > 1.0 {
                return Err(format!("|G(z)| = {:.3e} exceeds 1", g_z.abs()));
            }
        }
    }
    Ok(())
}

/// Builds a competitor for every trace and evaluates
/// `ε̂ = (1 − (G(h) − Θ)/(G(z) − Θ)) / |G(z) − Θ|^γ` at `d = 2`.
pub fn check_log_epi(problem: EpiProblem, disk: &Grid, traces: &[Field], opts: &EpiOptions) -> Result<EpiReport> {
    let layout = disk_layout(disk)?;
    let circle = build_grid(GridKind::Circle, layout.n_angles)?;
    for (i, c) in traces.iter().enumerate() {
        check_trace(&layout, c)?;
        check_hypotheses(problem, &circle, disk, c, opts)
            .map_err(|detail| VilabError::Hypothesis { index: i, detail })?;
    }
    let gamma = problem.gamma(DIM);
    let kc = problem.constraint(&circle);
    let rows: Vec<Result<EpiRow>> = traces
        .par_iter()
        .map(|c| {
            let comp = build_competitor(problem, disk, c, opts.eps_fl, opts.dt)?;
            let assembled = problem.ball_energy(disk, &comp.h_ball)?;
            let rings_feasible = comp
                .h
                .rings
                .iter()
                .all(|r| kc.is_feasible(&Field::new(circle.id(), r.clone())));
            let trace_exact = comp.h.rings[layout.n_rings]
                .iter()
                .zip(&c.values)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            let dz = comp.g_z - comp.theta_ref;
            let epsilon_hat = (!comp.trivial && dz > 0.0)
                .then(|| (1.0 - (comp.g_h - comp.theta_ref) / dz) / dz.abs().powf(gamma));
            Ok(EpiRow {
                gap: comp.gap,
                alpha: comp.alpha,
                eps2: comp.eps2,
                g_z: comp.g_z,
                g_h: comp.g_h,
                epsilon_hat,
                slice_error: (comp.g_h - assembled).abs(),
                trace_exact,
                rings_feasible,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = rows
        .iter()
        .filter_map(|r| r.epsilon_hat)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))));
    let never_worse = rows.iter().all(|r| r.g_h <= r.g_z);
    let trace_exact = rows.iter().all(|r| r.trace_exact);
    let rings_feasible = rows.iter().all(|r| r.rings_feasible);
    let theta = match problem {
        EpiProblem::Ob => theta_ob(disk)?,
        EpiProblem::Th { .. } => 0.0,
    };
    Ok(EpiReport {
        problem,
        gamma_used: gamma,
        theta,
        worst_epsilon: worst,
        n_elements: rows.len(),
        n_trivial: rows.iter().filter(|r| r.epsilon_hat.is_none()).count(),
        never_worse,
        trace_exact,
        rings_feasible,
        max_slice_error: rows.iter().map(|r| r.slice_error).fold(0.0, f64::max),
        pass: worst.map_or(true, |e| e > 0.0) && never_worse && trace_exact && rings_feasible,
        rows,
    })
}

/// `n` traces near the critical set of `problem` on `circle`.
///
/// OB: `Q_A` traces `¼ + ρ cos 2(θ − θ₀)` plus a smooth perturbation of L²
/// size at most `delta`, clipped at zero; odd elements only perturb modes of
/// frequency `≥ k`. TH: `a cos 2mθ + b sin 2mθ` with
/// `a ≥ 0`, perturbed likewise, projected onto the thin cone and scaled so
/// that `∫c² ≤ 1`.
pub fn epi_battery(problem: EpiProblem, circle: &Grid, n: usize, seed: u64, delta: f64) -> Result<Vec<Field>> {
    if circle.kind() != GridKind::Circle {
        return Err(VilabError::IncompatibleGrid {
            spec: "epiperimetric battery".into(),
            grid: circle.kind().name(),
        });
    }
    if !(delta > 0.0) {
        return Err(VilabError::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let kc = problem.constraint(circle);
    Ok((0..n)
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            // odd elements stay above the critical frequency, where the gap is positive
            let lo = if i % 2 == 1 { problem.homogeneity() } else { 0 };
            let psi = match problem {
                EpiProblem::Ob => {
                    let rho: f64 = rng.gen_range(0.0..0.25);
                    let t0: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    circle.sample_angle(|t| 0.25 + rho * (2.0 * (t - t0)).cos())
                }
                EpiProblem::Th { m } => {
                    let rho: f64 = rng.gen_range(0.1..0.5);
                    let phi: f64 = rng.gen_range(-0.5..0.5) * std::f64::consts::PI;
                    let (a, b) = (rho * phi.cos(), rho * phi.sin());
                    let f = 2.0 * m as f64;
                    circle.sample_angle(|t| a * (f * t).cos() + b * (f * t).sin())
                }
            };
            let size = delta * rng.gen_range(0.1..1.0);
            let p = normalize(circle, &circle_modes(circle, &mut rng, lo, 8), size);
            let c = kc.project(&psi.add(&p));
            let l2 = circle.inner(&c, &c);
            if l2 > 1.0 {
                c.scale(1.0 / l2.sqrt())
            } else {
                c
            }
        })
        .collect())
}
