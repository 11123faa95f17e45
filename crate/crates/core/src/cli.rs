//! Experiment runner behind the `vilab` binary.
//!
//! A run reads a TOML config, executes one pipeline and writes `trace.csv`
//! plus `summary.json` into the output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{build_battery, fit_rate_series_floor, BatteryKind, DIST_FLOOR, LojaReport, RateFits};
use crate::constraint::Constraint;
use crate::energy::{eval_energy, EnergySpec};
use crate::epiperimetric::{check_log_epi, epi_battery, EpiOptions, EpiProblem, EpiReport};
use crate::error::VilabError;
use crate::flow::ode::{run_ode_flow, OdeProblem};
use crate::flow::{run_deviation_flow_partial, run_flow_partial, DeviationFlow, FlowOptions, Trajectory};
use crate::geometry::{build_grid, Field, Grid, GridKind};
use crate::solver::{Backend, SolveOptions};
use crate::stationary::{nearest_critical, obstacle_1d_exact, solve_obstacle, solve_thin_obstacle};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "t,energy,l2_dist,h1_dist,step_norm,k_norm";

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "vilab", version, about = "Constrained gradient flows, Lojasiewicz batteries and epiperimetric competitors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Solve a ball obstacle or thin-obstacle problem.
    Stationary(RunArgs),
    /// Run a constrained gradient flow and fit its decay rate.
    Flow(RunArgs),
    /// Evaluate a Lojasiewicz battery.
    Loja(RunArgs),
    /// Build stopped-flow competitors for an epiperimetric battery.
    Epi(RunArgs),
    /// Integrate one of the two-dimensional constrained ODE examples.
    Ode(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write `wall_ms: null` so that repeated runs are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Stationary,
    Flow,
    Loja,
    Epi,
    Ode,
}

impl CliCommand {
    fn split(&self) -> (Command, &RunArgs) {
        match self {
            CliCommand::Stationary(a) => (Command::Stationary, a),
            CliCommand::Flow(a) => (Command::Flow, a),
            CliCommand::Loja(a) => (Command::Loja, a),
            CliCommand::Epi(a) => (Command::Epi, a),
            CliCommand::Ode(a) => (Command::Ode, a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationaryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loja: Option<LojaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epi: Option<EpiConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    pub n: usize,
}

/// Boundary or thin-set data `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Data {
    Constant { value: f64 },
    /// `xx·x² + yy·y² + c`.
    Quadratic { xx: f64, yy: f64, c: f64 },
}

impl Data {
    fn sample(&self, grid: &Grid) -> Field {
        match *self {
            Data::Constant { value } => grid.constant(value),
            Data::Quadratic { xx, yy, c } => grid.sample(|[x, y]| xx * x * x + yy * y * y + c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallProblem {
    Obstacle,
    ThinObstacle,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_flow_tol() -> f64 {
    1e-10
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryConfig {
    pub problem: BallProblem,
    pub data: Data,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub backend: Backend,
}

/// Initial datum of a flow. Ball flows add it to the stationary solution;
/// sphere flows use it directly. Both are projected onto the constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    /// `amplitude·(1 − |x − center|²/radius²)₊²`.
    Bump {
        amplitude: f64,
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// `offset + Σ (a cos kθ + b sin kθ)` over rows `[k, a, b]`.
    Modes {
        #[serde(default)]
        offset: f64,
        modes: Vec<[f64; 3]>,
    },
}

impl Initial {
    fn sample(&self, grid: &Grid) -> Field {
        match self {
            Initial::Bump { amplitude, radius, center } => grid.sample(|[x, y]| {
                let s = ((x - center[0]).powi(2) + (y - center[1]).powi(2)) / (radius * radius);
                amplitude * (1.0 - s).max(0.0).powi(2)
            }),
            Initial::Modes { offset, modes } => {
                let two_d = grid.kind() != GridKind::Interval;
                grid.sample(|[x, y]| {
                    let t = if two_d { y.atan2(x) } else { std::f64::consts::PI * x };
                    offset + modes.iter().map(|[k, a, b]| a * (k * t).cos() + b * (k * t).sin()).sum::<f64>()
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub energy: EnergySpec,
    /// Boundary data of the ball problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Data>,
    pub initial: Initial,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_flow_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Łojasiewicz exponent used to predict the power-law exponent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LojaConfig {
    pub battery: BatteryKind,
    pub samples: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_elements() -> usize {
    50
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiConfig {
    pub problem: EpiProblem,
    #[serde(default = "default_elements")]
    pub elements: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps_fl")]
    pub eps_fl: f64,
    #[serde(default = "default_epi_dt")]
    pub dt: f64,
}

fn default_eps_fl() -> f64 {
    crate::epiperimetric::DEFAULT_EPS_FL
}

fn default_epi_dt() -> f64 {
    1e-3
}

fn default_ode_dt() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    pub problem: OdeProblem,
    pub x0: f64,
    /// Defaults to `η(x0)` on the constraint, `0` for the free problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(default = "default_ode_dt")]
    pub dt: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

/// A configuration or numerical failure with its exit code.
#[derive(Debug)]
pub struct RunError {
    pub code: i32,
    pub message: String,
}

impl RunError {
    fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }
}

impl From<VilabError> for RunError {
    fn from(e: VilabError) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: e.to_string(),
        }
    }
}

/// One CSV row; the meaning of the columns per command is listed in the README.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    pub t: f64,
    pub energy: f64,
    pub l2_dist: f64,
    pub h1_dist: f64,
    pub step_norm: f64,
    pub k_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarySummary {
    pub contact_count: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Sup distance to the closed-form interval solution, when one exists.
    pub sup_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub rate_fit: Option<RateFits>,
    pub loja_report: Option<LojaReport>,
    pub epi_report: Option<EpiReport>,
    pub wall_ms: Option<u64>,
    pub schema: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationarySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything a run produced, complete or partial.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<Row>,
    pub summary: Summary,
}

/// Formats with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn csv_string(rows: &[Row]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let cols = [r.t, r.energy, r.l2_dist, r.h1_dist, r.step_norm, r.k_norm];
        s.push_str(&cols.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// Parses a CSV written by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<Row>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err("unexpected CSV header".into());
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| format!("bad value {c:?}: {e}")))
                .collect::<Result<_, _>>()?;
            if v.len() != 6 {
                return Err(format!("expected 6 columns, got {}", v.len()));
            }
            Ok(Row {
                t: v[0],
                energy: v[1],
                l2_dist: v[2],
                h1_dist: v[3],
                step_norm: v[4],
                k_norm: v[5],
            })
        })
        .collect()
}

/// Parses and validates a config for `command`.
pub fn parse_config(text: &str, command: Command) -> Result<ExperimentConfig, RunError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| RunError::config(format!("config: {e}")))?;
    validate(&cfg, command)?;
    Ok(cfg)
}

fn need<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, RunError> {
    section
        .as_ref()
        .ok_or_else(|| RunError::config(format!("config: missing [{name}] section")))
}

fn positive(x: f64, name: &str) -> Result<(), RunError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(RunError::config(format!("config: {name} must be positive and finite, got {x}")))
    }
}

fn config_grid(cfg: &ExperimentConfig) -> Result<Grid, RunError> {
    let g = need(&cfg.grid, "grid")?;
    build_grid(g.kind, g.n).map_err(|e| RunError::config(format!("config: {e}")))
}

fn validate(cfg: &ExperimentConfig, command: Command) -> Result<(), RunError> {
    if cfg.schema != SCHEMA_VERSION {
        return Err(RunError::config(format!(
            "config: schema {} is not supported (expected {SCHEMA_VERSION})",
            cfg.schema
        )));
    }
    if let Some(c) = cfg.command {
        if c != command {
            return Err(RunError::config(format!("config is for {c:?}, not {command:?}")));
        }
    }
    let cfgerr = |e: VilabError| RunError::config(format!("config: {e}"));
    match command {
        Command::Stationary => {
            let s = need(&cfg.stationary, "stationary")?;
            let grid = config_grid(cfg)?;
            positive(s.tol, "tol")?;
            let spec = match s.problem {
                BallProblem::Obstacle => EnergySpec::Obstacle,
                BallProblem::ThinObstacle => EnergySpec::ThinObstacle,
            };
            spec.check_grid(&grid).map_err(cfgerr)?;
        }
        Command::Flow => {
            let f = need(&cfg.flow, "flow")?;
            let grid = config_grid(cfg)?;
            f.energy.check_grid(&grid).map_err(cfgerr)?;
            positive(f.dt, "dt")?;
            if !(f.t_end >= 0.0) {
                return Err(RunError::config("config: t_end must be nonnegative"));
            }
            positive(f.tol, "tol")?;
            if f.energy.is_ball() && f.data.is_none() {
                return Err(RunError::config("config: ball flows need flow.data"));
            }
            if let Some([a, b]) = f.window {
                if !(a < b) {
                    return Err(RunError::config("config: window must be increasing"));
                }
            }
        }
        Command::Loja => {
            let l = need(&cfg.loja, "loja")?;
            config_grid(cfg)?;
            if l.samples == 0 {
                return Err(RunError::config("config: samples must be positive"));
            }
            positive(l.delta, "delta")?;
        }
        Command::Epi => {
            let e = need(&cfg.epi, "epi")?;
            let grid = config_grid(cfg)?;
            if grid.kind() != GridKind::Disk {
                return Err(RunError::config("config: epi runs on a disk grid"));
            }
            positive(e.delta, "delta")?;
            positive(e.eps_fl, "eps_fl")?;
            positive(e.dt, "dt")?;
            if let EpiProblem::Th { m: 0 } = e.problem {
                return Err(RunError::config("config: m must be positive"));
            }
        }
        Command::Ode => {
            let o = need(&cfg.ode, "ode")?;
            if !(o.dt > 0.0 && o.dt < 0.5) {
                return Err(RunError::config(format!("config: ode dt must lie in (0, 0.5), got {}", o.dt)));
            }
            positive(o.t_end, "t_end")?;
            if !o.x0.is_finite() {
                return Err(RunError::config("config: x0 must be finite"));
            }
        }
    }
    Ok(())
}

struct Partial {
    rows: Vec<Row>,
    rate_fit: Option<RateFits>,
    loja_report: Option<LojaReport>,
    epi_report: Option<EpiReport>,
    stationary: Option<StationarySummary>,
}

impl Partial {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            rate_fit: None,
            loja_report: None,
            epi_report: None,
            stationary: None,
        }
    }
}

/// Runs a validated config. On failure the record holds whatever was computed.
pub fn run(cfg: &ExperimentConfig, command: Command, timing: bool) -> (RunRecord, Option<RunError>) {
    let start = Instant::now();
    let mut part = Partial::new();
    let err = match command {
        Command::Stationary => run_stationary(cfg, &mut part),
        Command::Flow => run_flow_cmd(cfg, &mut part),
        Command::Loja => run_loja(cfg, &mut part),
        Command::Epi => run_epi(cfg, &mut part),
        Command::Ode => run_ode(cfg, &mut part),
    }
    .err();
    let summary = Summary {
        config: cfg.clone(),
        rate_fit: part.rate_fit,
        loja_report: part.loja_report,
        epi_report: part.epi_report,
        wall_ms: timing.then(|| start.elapsed().as_millis() as u64),
        schema: SCHEMA_VERSION,
        stationary: part.stationary,
        error: err.as_ref().map(|e| e.message.clone()),
    };
    (
        RunRecord {
            rows: part.rows,
            summary,
        },
        err,
    )
}

fn run_stationary(cfg: &ExperimentConfig, part: &mut Partial) -> Result<(), RunError> {
    let s = need(&cfg.stationary, "stationary")?;
    let grid = config_grid(cfg)?;
    let g = s.data.sample(&grid);
    let opts = SolveOptions {
        tol: s.tol,
        backend: s.backend,
        ..SolveOptions::default()
    };
    let (spec, rep) = match s.problem {
        BallProblem::Obstacle => (EnergySpec::Obstacle, solve_obstacle(&grid, &g, &opts)?),
        BallProblem::ThinObstacle => (EnergySpec::ThinObstacle, solve_thin_obstacle(&grid, &g, &opts)?),
    };
    let exact = match (grid.kind(), s.problem, s.data) {
        (GridKind::Interval, BallProblem::Obstacle, Data::Constant { value }) if value >= 0.0 => {
            Some(grid.sample(|[x, _]| obstacle_1d_exact(value, x)))
        }
        _ => None,
    };
    let (l2, h1, sup) = match &exact {
        Some(e) => {
            let d = rep.solution.sub(e);
            (grid.norm(&d), grid.dirichlet(&d, &d).max(0.0).sqrt(), Some(d.max_abs()))
        }
        None => (f64::NAN, f64::NAN, None),
    };
    part.rows.push(Row {
        t: 0.0,
        energy: eval_energy(&spec, &grid, &rep.solution)?,
        l2_dist: l2,
        h1_dist: h1,
        step_norm: f64::NAN,
        k_norm: rep.kkt_residual,
    });
    part.stationary = Some(StationarySummary {
        contact_count: rep.contact_count(),
        iterations: rep.iterations,
        kkt_residual: rep.kkt_residual,
        sup_error: sup,
    });
    Ok(())
}

fn traj_rows(grid: &Grid, traj: &Trajectory, target: &Field) -> Vec<Row> {
    (0..traj.len())
        .map(|i| {
            let d = traj.states[i].sub(target);
            Row {
                t: traj.times[i],
                energy: traj.energies[i],
                l2_dist: grid.norm(&d),
                h1_dist: grid.dirichlet(&d, &d).max(0.0).sqrt(),
                step_norm: traj.step_norms[i],
                k_norm: traj.k_norms[i],
            }
        })
        .collect()
}

fn deviation_rows(grid: &Grid, dev: &DeviationFlow, f_phi: f64) -> Vec<Row> {
    (0..dev.times.len())
        .map(|i| {
            let w = &dev.deviations[i];
            let step = if i == 0 {
                f64::NAN
            } else {
                grid.norm(&w.sub(&dev.deviations[i - 1])) / (dev.times[i] - dev.times[i - 1])
            };
            Row {
                t: dev.times[i],
                energy: f_phi + dev.energy_gaps[i],
                l2_dist: grid.norm(w),
                h1_dist: grid.dirichlet(w, w).max(0.0).sqrt(),
                step_norm: step,
                k_norm: dev.k_norms[i],
            }
        })
        .collect()
}

fn fit_rows(rows: &[Row], window: Option<[f64; 2]>, gamma: Option<f64>, floor: f64) -> Option<RateFits> {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.l2_dist).collect();
    fit_rate_series_floor(&t, &d, window.map(|[a, b]| (a, b)), gamma, floor).ok()
}

fn run_flow_cmd(cfg: &ExperimentConfig, part: &mut Partial) -> Result<(), RunError> {
    let f = need(&cfg.flow, "flow")?;
    let grid = config_grid(cfg)?;
    let solve = SolveOptions {
        tol: f.tol,
        ..SolveOptions::default()
    };
    let init = f.initial.sample(&grid);
    let opts = FlowOptions {
        solve,
        ..FlowOptions::new(f.dt, f.t_end)
    };
    let ball = f.energy.is_ball();
    let err = match f.energy {
        EnergySpec::Obstacle | EnergySpec::ThinObstacle => {
            let g = f.data.expect("validated").sample(&grid);
            let (k, phi) = if f.energy == EnergySpec::Obstacle {
                (Constraint::obstacle(&grid, &g), solve_obstacle(&grid, &g, &solve)?.solution)
            } else {
                (Constraint::thin(&grid, &g), solve_thin_obstacle(&grid, &g, &solve)?.solution)
            };
            let w0 = k.project(&phi.add(&init)).sub(&phi);
            let f_phi = eval_energy(&f.energy, &grid, &phi)?;
            let (dev, err) = run_deviation_flow_partial(&f.energy, &k, &grid, &phi, &w0, &opts)?;
            part.rows = deviation_rows(&grid, &dev, f_phi);
            err
        }
        _ => {
            let k = match f.energy {
                EnergySpec::SphereObstacle { .. } => Constraint::cone(&grid),
                EnergySpec::SphereThin { .. } => Constraint::thin_sphere(&grid),
                _ => Constraint::unconstrained(&grid),
            };
            let u0 = k.project(&init);
            let (traj, err) = run_flow_partial(&f.energy, &k, &grid, &u0, &opts);
            if traj.is_empty() {
                return Err(err.expect("an empty trajectory comes with an error").into());
            }
            let target = match f.energy {
                EnergySpec::FiniteDim { .. } => grid.zeros(),
                _ => nearest_critical(&f.energy, &grid, traj.last())?,
            };
            part.rows = traj_rows(&grid, &traj, &target);
            err
        }
    };
    if let Some(e) = err {
        return Err(e.into());
    }
    // deviation flows keep relative precision all the way down
    let floor = if ball { f64::MIN_POSITIVE } else { DIST_FLOOR };
    part.rate_fit = fit_rows(&part.rows, f.window, f.gamma, floor);
    Ok(())
}

fn run_loja(cfg: &ExperimentConfig, part: &mut Partial) -> Result<(), RunError> {
    let l = need(&cfg.loja, "loja")?;
    let grid = config_grid(cfg)?;
    let battery = build_battery(l.battery, &grid, l.samples, cfg.seed, l.delta)?;
    let rep = battery.check(&grid)?;
    part.rows = rep
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.included)
        .map(|(i, r)| Row {
            t: i as f64,
            energy: r.gap,
            l2_dist: r.l2_dist,
            h1_dist: r.h1_dist,
            step_norm: f64::NAN,
            k_norm: r.k_norm,
        })
        .collect();
    part.loja_report = Some(rep);
    Ok(())
}

fn run_epi(cfg: &ExperimentConfig, part: &mut Partial) -> Result<(), RunError> {
    let e = need(&cfg.epi, "epi")?;
    let disk = config_grid(cfg)?;
    let circle = build_grid(GridKind::Circle, disk.resolution())?;
    let traces = epi_battery(e.problem, &circle, e.elements, cfg.seed, e.delta)?;
    let opts = EpiOptions {
        eps_fl: e.eps_fl,
        dt: e.dt,
        delta: e.delta,
    };
    let spec = e.problem.sphere_spec();
    let rep = check_log_epi(e.problem, &disk, &traces, &opts)?;
    part.rows = rep
        .rows
        .iter()
        .zip(&traces)
        .enumerate()
        .map(|(i, (r, c))| {
            let psi = nearest_critical(&spec, &circle, c)?;
            Ok(Row {
                t: i as f64,
                energy: r.g_h - r.g_z,
                l2_dist: circle.norm(&c.sub(&psi)),
                h1_dist: f64::NAN,
                step_norm: r.alpha,
                k_norm: r.epsilon_hat.unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<_, VilabError>>()?;
    part.epi_report = Some(rep);
    Ok(())
}

fn run_ode(cfg: &ExperimentConfig, part: &mut Partial) -> Result<(), RunError> {
    let o = need(&cfg.ode, "ode")?;
    let y0 = o
        .y0
        .unwrap_or_else(|| o.problem.eta(o.x0).map_or(0.0, |e| e.0));
    let traj = run_ode_flow(o.problem, [o.x0, y0], o.dt, o.t_end)?;
    let d = traj.distances();
    part.rows = (0..traj.times.len())
        .map(|i| {
            let step = if i == 0 {
                f64::NAN
            } else {
                let (p, q) = (traj.points[i], traj.points[i - 1]);
                (p[0] - q[0]).hypot(p[1] - q[1]) / (traj.times[i] - traj.times[i - 1])
            };
            Row {
                t: traj.times[i],
                energy: traj.energies[i],
                l2_dist: d[i],
                h1_dist: f64::NAN,
                step_norm: step,
                k_norm: f64::NAN,
            }
        })
        .collect();
    part.rate_fit = fit_rows(&part.rows, o.window, None, DIST_FLOOR);
    Ok(())
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_record(dir: &Path, rec: &RunRecord) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.csv"), csv_string(&rec.rows))?;
    let mut json = serde_json::to_string_pretty(&rec.summary).map_err(std::io::Error::other)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)
}

fn configure_threads() -> Result<(), RunError> {
    if let Ok(v) = std::env::var("VILAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| RunError::config(format!("VILAB_THREADS must be a positive integer, got {v:?}")))?;
        // a pool configured earlier in the process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (command, args) = cli.command.split();
    let fail = |e: RunError| {
        eprintln!("error: {}", e.message);
        e.code
    };
    if let Err(e) = configure_threads() {
        return fail(e);
    }
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return fail(RunError::config(format!("cannot read {}: {e}", args.config.display()))),
    };
    let mut cfg = match parse_config(&text, command) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("vilab-out"));
    let (rec, err) = run(&cfg, command, !args.no_timing);
    if let Err(e) = write_record(&out, &rec) {
        eprintln!("error: cannot write results to {}: {e}", out.display());
        return EXIT_NUMERIC;
    }
    match err {
        Some(e) => fail(e),
        None => {
            let _ = writeln!(std::io::stdout(), "wrote {}", out.display());
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let t = "schema = 1\n[grid]\nkind = \"interval\"\nn = 32\nextra = 1\n";
        assert_eq!(parse_config(t, Command::Stationary).unwrap_err().code, EXIT_CONFIG);
        let t = "schema = 2\n";
        assert_eq!(parse_config(t, Command::Ode).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![Row {
            t: 0.1,
            energy: -1.0 / 3.0,
            l2_dist: 1e-300,
            h1_dist: f64::NAN,
            step_norm: 2.0f64.sqrt(),
            k_norm: 0.0,
        }];
        let back = parse_csv(&csv_string(&rows)).unwrap();
        assert_eq!(back[0].energy.to_bits(), rows[0].energy.to_bits());
        assert_eq!(back[0].step_norm.to_bits(), rows[0].step_norm.to_bits());
        assert!(back[0].h1_dist.is_nan());
    }
}
