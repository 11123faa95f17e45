//! Stratified sample batteries for the four Łojasiewicz inequalities.
//!
//! Sample `i` depends only on `(seed, i)`, so a larger battery with the same
//! seed contains the smaller one.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loja::{loja_check, LojaReport};
use super::{sphere_obstacle_gamma, sphere_thin_gamma};
use crate::constraint::Constraint;
use crate::energy::EnergySpec;
use crate::error::{Result, VilabError};
use crate::flow::{run_deviation_flow, FlowOptions};
use crate::fourier::circle_frequency;
use crate::geometry::{Field, Grid, GridKind};
use crate::operator::ShiftedOp;
use crate::solver::{solve_qp, QpProblem, SolveOptions};
use crate::stationary::{solve_obstacle, solve_thin_obstacle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BatteryKind {
    /// `F_ob` on the interval or disk with boundary value `1/8`, `γ = ½`.
    BallObstacle,
    /// `F_th` on the half-disk with data `x² − y² − ¼`, `γ = ½`.
    BallThin,
    /// `F_th^{λ(2m)}` on the circle, `γ = 1/d`.
    SphereThin { m: u32 },
    /// `F_ob^λ` on the circle, `γ = 1/(d+2)`.
    SphereObstacle { lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// Critical point plus a scaled nonnegative bump.
    Bump,
    /// Critical point plus scaled eigenmodes, projected onto `K`.
    EigenMix,
    /// States along flows started near the critical point.
    FlowSnapshot,
    /// Minimisers of `F − ∫fu` for forcing supported off the thin set.
    Forced,
    /// Projected bumps with no sign structure on the thin set.
    Unconditioned,
    /// Critical point vanishing somewhere, plus a perturbation.
    Touching,
}

#[derive(Clone, Debug)]
pub struct Battery {
    pub kind: BatteryKind,
    pub spec: EnergySpec,
    pub constraint: Constraint,
    pub phi: Field,
    pub gamma: f64,
    pub delta: Option<f64>,
    pub samples: Vec<Field>,
    pub recipes: Vec<Recipe>,
}

impl Battery {
    pub fn check(&self, grid: &Grid) -> Result<LojaReport> {
        loja_check(
            &self.spec,
            &self.constraint,
            grid,
            &self.phi,
            self.gamma,
            &self.samples,
            self.delta,
        )
    }
}

/// Boundary value of the ball obstacle battery.
pub const BALL_OBSTACLE_DATA: f64 = 0.125;

pub(crate) fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

/// Amplitude `10^{−k}`, cycling through four decades.
fn decade(j: usize) -> f64 {
    10f64.powi(-(1 + (j % 4) as i32))
}

/// Smooth random function vanishing on the Dirichlet boundary of `grid` (and
/// on the thin set when `off_thin`).
fn random_smooth(grid: &Grid, rng: &mut ChaCha8Rng, off_thin: bool) -> Field {
    match grid.kind() {
        GridKind::Interval => {
            let a: Vec<f64> = (1..=8).map(|k| rng.gen_range(-1.0..1.0) / k as f64).collect();
            grid.sample(|[x, _]| {
                a.iter()
                    .enumerate()
                    .map(|(k, c)| c * ((k + 1) as f64 * PI * (x + 1.0) / 2.0).sin())
                    .sum()
            })
        }
        GridKind::Circle => circle_modes(grid, rng, 0, 12),
        _ => {
            let waves: Vec<[f64; 4]> = (0..6)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(0.0..2.0 * PI),
                    ]
                })
                .collect();
            grid.sample(|[x, y]| {
                let s: f64 = waves.iter().map(|w| w[0] * (w[1] * x + w[2] * y + w[3]).cos()).sum();
                let cut = (1.0 - x * x - y * y).max(0.0);
                if off_thin {
                    y * cut * s
                } else {
                    cut * s
                }
            })
        }
    }
}

/// `Σ_{lo ≤ k ≤ hi} (a_k cos kθ + b_k sin kθ)/(1 + k)` with uniform coefficients.
pub(crate) fn circle_modes(grid: &Grid, rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Field {
    let c: Vec<(f64, f64)> = (lo..=hi)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    grid.sample_angle(|t| {
        c.iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let k = (lo + i) as f64;
                (a * (k * t).cos() + b * (k * t).sin()) / (1.0 + k)
            })
            .sum()
    })
}

/// Nonnegative bump `(1 − |x − c|²/ρ²)₊²` supported strictly inside the domain.
fn random_bump(grid: &Grid, rng: &mut ChaCha8Rng, touch_thin: bool) -> Field {
    let two_d = grid.kind() != GridKind::Interval;
    let cx: f64 = rng.gen_range(-0.7..0.7);
    let cy: f64 = if !two_d {
        0.0
    } else if touch_thin {
        0.0
    } else {
        rng.gen_range(-0.5..0.5)
    };
    let room = 0.95 - (cx * cx + cy * cy).sqrt();
    let rho = rng.gen_range(0.05..room.max(0.06));
    grid.sample(|[x, y]| {
        let s = ((x - cx).powi(2) + (y - cy).powi(2)) / (rho * rho);
        (1.0 - s).max(0.0).powi(2)
    })
}

pub(crate) fn normalize(grid: &Grid, f: &Field, size: f64) -> Field {
    let n = grid.norm(f);
    if n > 0.0 {
        f.scale(size / n)
    } else {
        f.clone()
    }
}

/// Builds a battery of `n` samples for `kind` on `grid`.
///
/// `delta` bounds the L² size of sphere perturbations (and so their distance
/// to the critical set); it is ignored by the ball batteries.
pub fn build_battery(kind: BatteryKind, grid: &Grid, n: usize, seed: u64, delta: f64) -> Result<Battery> {
    if n == 0 {
        return Err(VilabError::InvalidParameter("a battery needs at least one sample".into()));
    }
    let tight = SolveOptions {
        tol: 1e-10,
        ..SolveOptions::default()
    };
    match kind {
        BatteryKind::BallObstacle => {
            let spec = EnergySpec::Obstacle;
            spec.check_grid(grid)?;
            let phi = solve_obstacle(grid, &grid.constant(BALL_OBSTACLE_DATA), &tight)?.solution;
            let k = Constraint::obstacle(grid, &phi);
            let snaps = flow_snapshots(grid, &k, &phi, n.div_ceil(3), seed)?;
            let (samples, recipes): (Vec<Field>, Vec<Recipe>) = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sample_rng(seed, i);
                    let j = i / 3;
                    match i % 3 {
                        0 => (phi.add(&random_bump(grid, &mut rng, false).scale(decade(j))), Recipe::Bump),
                        1 => {
                            let m = random_smooth(grid, &mut rng, false);
                            let m = normalize(grid, &m, decade(j));
                            (k.project(&phi.add(&m)), Recipe::EigenMix)
                        }
                        _ => (snaps[j].clone(), Recipe::FlowSnapshot),
                    }
                })
                .unzip();
            Ok(Battery {
                kind,
                spec,
                constraint: k,
                phi,
                gamma: 0.5,
                delta: None,
                samples,
                recipes,
            })
        }
        BatteryKind::BallThin => {
            let spec = EnergySpec::ThinObstacle;
            spec.check_grid(grid)?;
            let g = grid.sample(|[x, y]| x * x - y * y - 0.25);
            let phi = solve_thin_obstacle(grid, &g, &tight)?.solution;
            let k = Constraint::thin(grid, &g);
            let out: Vec<Result<(Field, Recipe)>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sample_rng(seed, i);
                    let j = i / 3;
                    if i % 3 == 2 {
                        let b = random_bump(grid, &mut rng, true).scale(decade(j));
                        Ok((k.project(&phi.add(&b)), Recipe::Unconditioned))
                    } else {
                        let f = random_smooth(grid, &mut rng, true);
                        let f = normalize(grid, &f, decade(j));
                        Ok((forced_thin(grid, &k, &phi, &f, &tight)?, Recipe::Forced))
                    }
                })
                .collect();
            let (samples, recipes) = out.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
            Ok(Battery {
                kind,
                spec,
                constraint: k,
                phi,
                gamma: 0.5,
                delta: None,
                samples,
                recipes,
            })
        }
        BatteryKind::SphereThin { m } => {
            let spec = EnergySpec::sphere_thin(m);
            spec.check_grid(grid)?;
            let freq = (2 * m) as f64;
            let k = Constraint::thin_sphere(grid);
            let phi = grid.sample_angle(|t| (freq * t).cos());
            let (samples, recipes) = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sample_rng(seed, i);
                    let rho = rng.gen_range(0.5..1.0);
                    let (a, b, recipe) = match i % 3 {
                        2 => (0.0, rho, Recipe::Touching),
                        r => {
                            let ang = rng.gen_range(-0.5 * PI..0.5 * PI);
                            let recipe = if r == 0 { Recipe::EigenMix } else { Recipe::Bump };
                            (rho * ang.cos(), rho * ang.sin(), recipe)
                        }
                    };
                    let psi = grid.sample_angle(|t| a * (freq * t).cos() + b * (freq * t).sin());
                    let p = if i % 3 == 1 {
                        circle_modes(grid, &mut rng, 0, 2 * m as usize)
                    } else {
                        circle_modes(grid, &mut rng, 0, 12)
                    };
                    let size = delta * 10f64.powf(-rng.gen_range(0.0..3.0));
                    (k.project(&psi.add(&normalize(grid, &p, size))), recipe)
                })
                .unzip();
            Ok(Battery {
                kind,
                spec,
                constraint: k,
                phi,
                gamma: sphere_thin_gamma(2),
                delta: Some(delta),
                samples,
                recipes,
            })
        }
        BatteryKind::SphereObstacle { lambda } => {
            let spec = EnergySpec::SphereObstacle { lambda };
            spec.check_grid(grid)?;
            let freq = circle_frequency(lambda)
                .filter(|&f| f > 0)
                .ok_or(VilabError::NotAnEigenvalue(lambda))? as f64;
            let k = Constraint::cone(grid);
            let c = 1.0 / lambda;
            let phi = grid.constant(c);
            let (samples, recipes) = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sample_rng(seed, i);
                    let (rho, recipe) = match i % 3 {
                        2 => (c, Recipe::Touching),
                        0 => (rng.gen_range(0.0..c), Recipe::EigenMix),
                        _ => (rng.gen_range(0.0..c), Recipe::Bump),
                    };
                    let t0 = rng.gen_range(0.0..2.0 * PI);
                    let psi = grid.sample_angle(|t| c + rho * (freq * (t - t0)).cos());
                    let p = if i % 3 == 1 {
                        circle_modes(grid, &mut rng, 0, freq as usize)
                    } else {
                        circle_modes(grid, &mut rng, 0, 12)
                    };
                    let size = delta * 10f64.powf(-rng.gen_range(0.0..3.0));
                    (k.project(&psi.add(&normalize(grid, &p, size))), recipe)
                })
                .unzip();
            Ok(Battery {
                kind,
                spec,
                constraint: k,
                phi,
                gamma: sphere_obstacle_gamma(2),
                delta: Some(delta),
                samples,
                recipes,
            })
        }
    }
}

/// States of obstacle flows started at `φ` plus random bumps, stepped in
/// deviation coordinates so the limit is `φ` itself; run `r` supplies
/// snapshots `20r .. 20r + 19`, at roughly log-spaced times.
fn flow_snapshots(grid: &Grid, k: &Constraint, phi: &Field, count: usize, seed: u64) -> Result<Vec<Field>> {
    const PER_RUN: usize = 20;
    let runs = count.div_ceil(PER_RUN);
    let picks: Vec<usize> = (0..PER_RUN)
        .map(|i| i + (1.3f64.powi(i as i32)).round() as usize)
        .collect();
    let t_end = 0.005 * *picks.last().unwrap() as f64;
    let per_run: Vec<Result<Vec<Field>>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = sample_rng(seed ^ 0x5eed_f10e, r);
            let amp = 10f64.powf(-rng.gen_range(1.0..2.0));
            let w0 = random_bump(grid, &mut rng, false).scale(amp);
            let tr = run_deviation_flow(&EnergySpec::Obstacle, k, grid, phi, &w0, &FlowOptions::new(0.005, t_end))?;
            let last = tr.deviations.len() - 1;
            Ok(picks.iter().map(|&p| phi.add(&tr.deviations[p.min(last)])).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(runs * PER_RUN);
    for r in per_run {
        out.extend(r?);
    }
    out.truncate(count);
    Ok(out)
}

/// Minimiser of `½uᵀSu − ∫fu` over `K_th^g`.
fn forced_thin(grid: &Grid, k: &Constraint, start: &Field, f: &Field, opts: &SolveOptions) -> Result<Field> {
    let shift = vec![0.0; grid.n_nodes()];
    let rhs: Vec<f64> = f.values.iter().zip(grid.weights()).map(|(f, w)| f * w).collect();
    let problem = QpProblem {
        op: ShiftedOp {
            stiffness: Some(grid.stiffness()),
            shift: &shift,
        },
        rhs: &rhs,
        weights: grid.weights(),
        constraint: k,
    };
    Ok(Field::new(grid.id(), solve_qp(&problem, &start.values, opts)?.x))
}
