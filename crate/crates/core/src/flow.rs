//! Implicit-Euler time stepping of the constrained gradient flow
//! `⟨u' + ∇F(u), v − u⟩ ≥ 0` for every admissible `v`.

pub mod ode;

use crate::constraint::Constraint;
use crate::energy::{energy_unchecked, gradient_unchecked, EnergySpec, Quadratic};
use crate::error::{Result, VilabError};
use crate::geometry::{Field, Grid};
use crate::operator::ShiftedOp;
use crate::solver::{solve_qp, QpProblem, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Stop once the energy has dropped to this level or below.
    pub stop: Option<f64>,
    pub solve: SolveOptions,
}

impl FlowOptions {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            stop: None,
            solve: SolveOptions {
                tol: 1e-10,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    pub energies: Vec<f64>,
    /// `‖u_k − u_{k−1}‖/dt`; undefined (NaN) at the initial state.
    pub step_norms: Vec<f64>,
    /// `‖∇F(u_k)‖_K`.
    pub k_norms: Vec<f64>,
    pub dt: f64,
    pub spec: EnergySpec,
    pub constraint: Constraint,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    /// State at time `t` by linear interpolation between stored snapshots;
    /// beyond the last snapshot the flow is extended constantly.
    pub fn state_at(&self, t: f64) -> Field {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = (t - t0) / (t1 - t0);
        self.states[k].zip_map(&self.states[k + 1], |a, b| a + s * (b - a))
    }

    fn push(&mut self, grid: &Grid, t: f64, state: Field, step_norm: f64) {
        let q = self.spec.quadratic();
        let grad = gradient_unchecked(q, grid, &state);
        self.k_norms
            .push(self.constraint.constrained_grad_norm(grid, &state, &grad));
        self.energies.push(energy_unchecked(q, grid, &state));
        self.times.push(t);
        self.step_norms.push(step_norm);
        self.states.push(state);
    }
}

/// Result of one proximal step.
#[derive(Clone, Debug)]
pub struct Step {
    pub state: Field,
    /// Constrained norm of `(v − u)/dt + ∇F(v)` at `v`: the certificate of the
    /// discrete variational inequality.
    pub residual: f64,
    pub iterations: usize,
}

/// `argmin_{v ∈ K} ‖v − u‖²/(2dt) + F(v)`.
pub fn step_implicit(
    spec: &EnergySpec,
    k: &Constraint,
    grid: &Grid,
    u: &Field,
    dt: f64,
    opts: &SolveOptions,
) -> Result<Step> {
    spec.check_grid(grid)?;
    grid.check(u);
    prox_step(spec.quadratic(), None, k, grid, u, dt, opts)
}

/// The proximal QP for `F(v) = ½a∫|∇v|² + ½μ∫v² + ∫ℓv`, with `ℓ` the constant
/// `q.linear` unless a nodal field is given.
fn prox_step(
    q: Quadratic,
    linear: Option<&[f64]>,
    k: &Constraint,
    grid: &Grid,
    u: &Field,
    dt: f64,
    opts: &SolveOptions,
) -> Result<Step> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(VilabError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let diag_coeff = q.mass + 1.0 / dt;
    if diag_coeff <= 0.0 {
        return Err(VilabError::StepTooLarge(format!(
            "the proximal problem is not convex for dt = {dt} (need dt < {})",
            -1.0 / q.mass
        )));
    }
    let w = grid.weights();
    let shift: Vec<f64> = w.iter().map(|w| w * diag_coeff).collect();
    let rhs: Vec<f64> = (0..u.len())
        .map(|j| {
            let l = linear.map_or(q.linear, |l| l[j]);
            w[j] * (u.values[j] / dt - l)
        })
        .collect();
    let problem = QpProblem {
        op: ShiftedOp {
            stiffness: if q.stiffness != 0.0 {
                Some(grid.stiffness())
            } else {
                None
            },
            shift: &shift,
        },
        rhs: &rhs,
        weights: w,
        constraint: k,
    };
    let sol = solve_qp(&problem, &u.values, opts)?;
    Ok(Step {
        state: Field::new(u.grid, sol.x),
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// Runs the flow, returning whatever was computed before a failure together
/// with the error.
pub fn run_flow_partial(
    spec: &EnergySpec,
    k: &Constraint,
    grid: &Grid,
    u0: &Field,
    opts: &FlowOptions,
) -> (Trajectory, Option<VilabError>) {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        energies: Vec::new(),
        step_norms: Vec::new(),
        k_norms: Vec::new(),
        dt: opts.dt,
        spec: *spec,
        constraint: k.clone(),
    };
    if let Err(e) = spec.check_grid(grid) {
        return (traj, Some(e));
    }
    grid.check(u0);
    if !k.is_feasible(u0) {
        return (
            traj,
            Some(VilabError::Infeasible("initial datum violates the constraint".into())),
        );
    }
    if !(opts.t_end >= 0.0) {
        return (
            traj,
            Some(VilabError::InvalidParameter(format!(
                "t_end must be nonnegative, got {}",
                opts.t_end
            ))),
        );
    }
    traj.push(grid, 0.0, u0.clone(), f64::NAN);
    if opts.stop.is_some_and(|s| traj.energies[0] <= s) {
        return (traj, None);
    }
    let n_steps = (opts.t_end / opts.dt).round() as usize;
    for i in 1..=n_steps {
        let prev = traj.last().clone();
        let step = match step_implicit(spec, k, grid, &prev, opts.dt, &opts.solve) {
            Ok(s) => s,
            Err(e) => return (traj, Some(e)),
        };
        let step_norm = grid.norm(&step.state.sub(&prev)) / opts.dt;
        traj.push(grid, i as f64 * opts.dt, step.state, step_norm);
        if opts.stop.is_some_and(|s| *traj.energies.last().unwrap() <= s) {
            break;
        }
    }
    (traj, None)
}

pub fn run_flow(
    spec: &EnergySpec,
    k: &Constraint,
    grid: &Grid,
    u0: &Field,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    match run_flow_partial(spec, k, grid, u0, opts) {
        (t, None) => Ok(t),
        (_, Some(e)) => Err(e),
    }
}

/// A flow recorded as deviations `w(t) = u(t) − φ` from a critical point.
///
/// Differences of `O(1)` states lose all digits once `‖u − φ‖` drops under
/// roughly `1e−13`; stepping `w` directly keeps full relative precision, so
/// exponential decay stays measurable over many decades.
#[derive(Clone, Debug)]
pub struct DeviationFlow {
    pub times: Vec<f64>,
    pub deviations: Vec<Field>,
    /// `F(φ + w) − F(φ)`.
    pub energy_gaps: Vec<f64>,
    pub k_norms: Vec<f64>,
    /// Multiplier `∇F(φ)`, cleaned to vanish off the contact set of `φ`.
    pub multiplier: Field,
    /// Contact set of `φ`.
    pub contact: Vec<bool>,
}

/// Runs the flow of `spec` in `k` started at `φ + w0`, stepping the deviation.
///
/// `φ` must be a constrained critical point; its gradient is replaced by the
/// exact multiplier (nonnegative, supported on the contact set), which fixes
/// the discrete target to the exact solution of the KKT system.
pub fn run_deviation_flow(
    spec: &EnergySpec,
    k: &Constraint,
    grid: &Grid,
    phi: &Field,
    w0: &Field,
    opts: &FlowOptions,
) -> Result<DeviationFlow> {
    match run_deviation_flow_partial(spec, k, grid, phi, w0, opts)? {
        (f, None) => Ok(f),
        (_, Some(e)) => Err(e),
    }
}

/// As [`run_deviation_flow`], keeping the steps computed before a solver
/// failure. Invalid inputs are still reported as `Err`.
pub fn run_deviation_flow_partial(
    spec: &EnergySpec,
    k: &Constraint,
    grid: &Grid,
    phi: &Field,
    w0: &Field,
    opts: &FlowOptions,
) -> Result<(DeviationFlow, Option<VilabError>)> {
    spec.check_grid(grid)?;
    if !(opts.dt > 0.0 && opts.dt.is_finite()) || !(opts.t_end >= 0.0) {
        return Err(VilabError::InvalidParameter(format!(
            "need dt > 0 and t_end >= 0, got dt = {}, t_end = {}",
            opts.dt, opts.t_end
        )));
    }
    grid.check(phi);
    grid.check(w0);
    if !k.is_feasible(phi) {
        return Err(VilabError::Infeasible("reference point violates the constraint".into()));
    }
    let q = spec.quadratic();
    let grad = gradient_unchecked(q, grid, phi);
    let cert = k.constrained_grad_norm(grid, phi, &grad);
    if cert > 1e-6 {
        return Err(VilabError::InvalidParameter(format!(
            "reference point is not critical (constrained gradient norm {cert:.3e})"
        )));
    }
    let contact = k.contact_set(phi);
    let multiplier = Field::new(
        phi.grid,
        (0..phi.len())
            .map(|j| if contact[j] { grad.values[j].max(0.0) } else { 0.0 })
            .collect(),
    );
    let ks = k.shifted(phi);
    if !ks.is_feasible(w0) {
        return Err(VilabError::Infeasible("initial datum violates the constraint".into()));
    }
    let gap_of = |w: &Field| {
        let mut e = 0.5 * q.stiffness * grid.dirichlet(w, w) + 0.5 * q.mass * grid.inner(w, w);
        e += grid.inner(&multiplier, w);
        e
    };
    let knorm_of = |w: &Field| {
        let g = gradient_unchecked(
            Quadratic {
                linear: 0.0,
                ..q
            },
            grid,
            w,
        )
        .add(&multiplier);
        ks.constrained_grad_norm(grid, w, &g)
    };
    let mut out = DeviationFlow {
        times: vec![0.0],
        deviations: vec![w0.clone()],
        energy_gaps: vec![gap_of(w0)],
        k_norms: vec![knorm_of(w0)],
        multiplier: multiplier.clone(),
        contact,
    };
    let qd = Quadratic {
        linear: 0.0,
        ..q
    };
    let n_steps = (opts.t_end / opts.dt).round() as usize;
    for i in 1..=n_steps {
        let prev = out.deviations.last().unwrap();
        // the solve tolerance follows the size of the deviation
        let scale = grid.norm(prev) / opts.dt;
        let solve = SolveOptions {
            tol: (opts.solve.tol * scale).max(f64::MIN_POSITIVE),
            ..opts.solve
        };
        let step = match prox_step(qd, Some(&multiplier.values), &ks, grid, prev, opts.dt, &solve) {
            Ok(s) => s,
            Err(e) => return Ok((out, Some(e))),
        };
        out.times.push(i as f64 * opts.dt);
        out.energy_gaps.push(gap_of(&step.state));
        out.k_norms.push(knorm_of(&step.state));
        out.deviations.push(step.state);
    }
    Ok((out, None))
}

/// Discrepancies of `‖u'‖² = −⟨u', ∇F(u)⟩` (i) and `‖u'‖ = ‖∇F(u)‖_K` (iii).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdentityReport {
    /// Worst per-step relative error of (i).
    pub max_rel_err_i: f64,
    /// Worst per-step relative error of (iii).
    pub max_rel_err_iii: f64,
    /// `∫|‖u'‖² + ⟨u',∇F⟩| dt / ∫‖u'‖² dt`.
    pub int_rel_err_i: f64,
    /// `∫|‖u'‖ − ‖∇F‖_K| dt / ∫‖u'‖ dt`.
    pub int_rel_err_iii: f64,
    /// As `int_rel_err_i`, with `∇F` taken at the state the step starts from.
    pub pre_rel_err_i: f64,
    /// As `int_rel_err_iii`, with `‖∇F‖_K` taken at the state the step starts from.
    pub pre_rel_err_iii: f64,
    pub monotone: bool,
    /// Largest single-step energy increase (0 when monotone).
    pub max_energy_increase: f64,
}

/// Energy slack allowed per step by the monotonicity check.
pub const ENERGY_SLACK: f64 = 1e-10;

/// Evaluates the flow identities at each post-step state, with `u'` the
/// backward difference quotient.
pub fn verify_flow_identities(grid: &Grid, traj: &Trajectory) -> Result<IdentityReport> {
    if traj.len() < 2 {
        return Err(VilabError::Degenerate(
            "identities need a trajectory with at least two states".into(),
        ));
    }
    let q = traj.spec.quadratic();
    let mut rep = IdentityReport {
        monotone: true,
        ..Default::default()
    };
    let (mut num_i, mut den_i, mut num_iii, mut den_iii) = (0.0, 0.0, 0.0, 0.0);
    let (mut pre_i, mut pre_iii) = (0.0, 0.0);
    let mut grad_prev = gradient_unchecked(q, grid, &traj.states[0]);
    for k in 1..traj.len() {
        let dt = traj.times[k] - traj.times[k - 1];
        let du = traj.states[k].sub(&traj.states[k - 1]).scale(1.0 / dt);
        let grad = gradient_unchecked(q, grid, &traj.states[k]);
        let sq = grid.inner(&du, &du);
        let speed = sq.sqrt();
        let e_i = (sq + grid.inner(&du, &grad)).abs();
        let e_iii = (speed - traj.k_norms[k]).abs();
        let scale_i = sq.max(f64::MIN_POSITIVE);
        let scale_iii = speed.max(traj.k_norms[k]).max(f64::MIN_POSITIVE);
        if sq > 0.0 || e_i > 0.0 {
            rep.max_rel_err_i = rep.max_rel_err_i.max(e_i / scale_i);
        }
        if scale_iii > f64::MIN_POSITIVE {
            rep.max_rel_err_iii = rep.max_rel_err_iii.max(e_iii / scale_iii);
        }
        num_i += e_i * dt;
        den_i += sq * dt;
        num_iii += e_iii * dt;
        den_iii += speed * dt;
        pre_i += (sq + grid.inner(&du, &grad_prev)).abs() * dt;
        pre_iii += (speed - traj.k_norms[k - 1]).abs() * dt;
        grad_prev = grad;
        let inc = traj.energies[k] - traj.energies[k - 1];
        if inc > ENERGY_SLACK {
            rep.monotone = false;
        }
        rep.max_energy_increase = rep.max_energy_increase.max(inc.max(0.0));
    }
    rep.int_rel_err_i = if den_i > 0.0 { num_i / den_i } else { 0.0 };
    rep.int_rel_err_iii = if den_iii > 0.0 { num_iii / den_iii } else { 0.0 };
    rep.pre_rel_err_i = if den_i > 0.0 { pre_i / den_i } else { 0.0 };
    rep.pre_rel_err_iii = if den_iii > 0.0 { pre_iii / den_iii } else { 0.0 };
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuityReport {
    /// `sup_t ‖u(t) − v(t)‖ / (e^{λt}‖u₀ − v₀‖)`.
    pub sup_ratio: f64,
    pub lambda: f64,
    /// Whether `‖u(t) − v(t)‖` never increased (up to roundoff).
    pub non_increasing: bool,
    pub max_increase: f64,
}

/// Growth constant `λ` of `−u·∇F(u) ≤ λ‖u‖²` for the difference of two flows.
pub fn growth_constant(spec: &EnergySpec) -> f64 {
    spec.lambda()
}

/// Runs the flows from `u0` and `v0` side by side and measures how their
/// distance evolves against the `e^{λt}` envelope.
pub fn continuity_probe(
    spec: &EnergySpec,
    k: &Constraint,
    grid: &Grid,
    u0: &Field,
    v0: &Field,
    opts: &FlowOptions,
) -> Result<ContinuityReport> {
    let a = run_flow(spec, k, grid, u0, opts)?;
    let b = run_flow(spec, k, grid, v0, opts)?;
    let lambda = growth_constant(spec);
    let d0 = grid.norm(&u0.sub(v0));
    let mut rep = ContinuityReport {
        sup_ratio: 0.0,
        lambda,
        non_increasing: true,
        max_increase: 0.0,
    };
    if d0 == 0.0 {
        return Ok(rep);
    }
    let mut prev = d0;
    for (i, t) in a.times.iter().enumerate().take(a.len().min(b.len())) {
        let d = grid.norm(&a.states[i].sub(&b.states[i]));
        rep.sup_ratio = rep.sup_ratio.max(d / ((lambda * t).exp() * d0));
        let inc = d - prev;
        if inc > 1e-12 * d0 {
            rep.non_increasing = false;
        }
        rep.max_increase = rep.max_increase.max(inc);
        prev = d;
    }
    Ok(rep)
}
