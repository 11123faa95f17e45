//! C interface to vilab.
//!
//! Every function returns a status code (`VILAB_OK` on success) and writes
//! results through out-pointers. Handles are opaque and owned by the caller,
//! who releases them with the matching `*_free`. After a failure,
//! [`vilab_last_error`] holds a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vilab::constraint::Constraint;
use vilab::energy::{eval_energy, EnergySpec};
use vilab::flow::{run_flow, FlowOptions, Trajectory};
use vilab::geometry::{build_grid, Field, Grid, GridKind};
use vilab::solver::SolveOptions;
use vilab::stationary::{solve_obstacle, solve_thin_obstacle};
use vilab::VilabError;

pub const VILAB_OK: i32 = 0;
pub const VILAB_ERR_NULL: i32 = 1;
pub const VILAB_ERR_INVALID: i32 = 2;
pub const VILAB_ERR_GRID: i32 = 3;
pub const VILAB_ERR_INFEASIBLE: i32 = 4;
pub const VILAB_ERR_NUMERIC: i32 = 5;
pub const VILAB_ERR_PANIC: i32 = 6;

pub const VILAB_GRID_INTERVAL: i32 = 0;
pub const VILAB_GRID_DISK: i32 = 1;
pub const VILAB_GRID_HALF_DISK_THIN: i32 = 2;
pub const VILAB_GRID_CIRCLE: i32 = 3;

pub const VILAB_ENERGY_OBSTACLE: i32 = 0;
pub const VILAB_ENERGY_THIN_OBSTACLE: i32 = 1;
pub const VILAB_ENERGY_SPHERE_OBSTACLE: i32 = 2;
pub const VILAB_ENERGY_SPHERE_THIN: i32 = 3;

/// Energy selector. `lambda` is read by the sphere obstacle energy, `m` by
/// the sphere thin-obstacle energy (`λ = (2m)²`).
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct VilabEnergy {
    pub variant: i32,
    pub lambda: f64,
    pub m: u32,
}

pub struct VilabGrid(Grid);

pub struct VilabField(Field);

pub struct VilabTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("interior nuls removed"));
}

fn code_of(e: &VilabError) -> i32 {
    match e {
        VilabError::ResolutionTooCoarse { .. }
        | VilabError::ResolutionNotEven { .. }
        | VilabError::IncompatibleGrid { .. } => VILAB_ERR_GRID,
        VilabError::Infeasible(_) | VilabError::EmptyCriticalSet(_) => VILAB_ERR_INFEASIBLE,
        VilabError::NoConvergence { .. } | VilabError::StepTooLarge(_) | VilabError::Degenerate(_) => {
            VILAB_ERR_NUMERIC
        }
        VilabError::InvalidParameter(_) | VilabError::NotAnEigenvalue(_) | VilabError::Hypothesis { .. } => {
            VILAB_ERR_INVALID
        }
    }
}

struct Fail(i32, String);

impl From<VilabError> for Fail {
    fn from(e: VilabError) -> Self {
        Fail(code_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VILAB_ERR_NULL, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VILAB_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            VILAB_ERR_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            VILAB_ERR_INVALID,
            format!("output buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn energy_spec(e: &VilabEnergy) -> Result<EnergySpec, Fail> {
    let spec = match e.variant {
        VILAB_ENERGY_OBSTACLE => EnergySpec::Obstacle,
        VILAB_ENERGY_THIN_OBSTACLE => EnergySpec::ThinObstacle,
        VILAB_ENERGY_SPHERE_OBSTACLE => EnergySpec::SphereObstacle { lambda: e.lambda },
        VILAB_ENERGY_SPHERE_THIN => EnergySpec::sphere_thin(e.m),
        v => return Err(Fail(VILAB_ERR_INVALID, format!("unknown energy variant {v}"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn same_grid(grid: &Grid, f: &Field, what: &str) -> Result<(), Fail> {
    if f.grid != grid.id() || f.len() != grid.n_nodes() {
        return Err(Fail(VILAB_ERR_INVALID, format!("{what} does not belong to this grid")));
    }
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vilab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn vilab_grid_new(kind: i32, n: usize, out: *mut *mut VilabGrid) -> i32 {
    guard(|| {
        let kind = match kind {
            VILAB_GRID_INTERVAL => GridKind::Interval,
            VILAB_GRID_DISK => GridKind::Disk,
            VILAB_GRID_HALF_DISK_THIN => GridKind::HalfDiskThin,
            VILAB_GRID_CIRCLE => GridKind::Circle,
            k => return Err(Fail(VILAB_ERR_INVALID, format!("unknown grid kind {k}"))),
        };
        write_out(out, VilabGrid(build_grid(kind, n)?))
    })
}

/// # Safety
/// `grid` must be null or a handle from [`vilab_grid_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vilab_grid_free(grid: *mut VilabGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_grid_n_nodes(grid: *const VilabGrid, out: *mut usize) -> i32 {
    guard(|| {
        let g = deref(grid, "grid")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = g.0.n_nodes();
        Ok(())
    })
}

/// Node coordinates as interleaved `x, y` pairs; `len` counts doubles.
///
/// # Safety
/// `grid` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vilab_grid_coords(grid: *const VilabGrid, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let g = deref(grid, "grid")?;
        let flat: Vec<f64> = g.0.coords().iter().flat_map(|p| *p).collect();
        copy_out(&flat, out, len)
    })
}

/// # Safety
/// `grid` must be a live handle, `values` must hold `len` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_field_new(
    grid: *const VilabGrid,
    values: *const f64,
    len: usize,
    out: *mut *mut VilabField,
) -> i32 {
    guard(|| {
        let g = deref(grid, "grid")?;
        if values.is_null() {
            return Err(null("values"));
        }
        if len != g.0.n_nodes() {
            return Err(Fail(
                VILAB_ERR_INVALID,
                format!("grid has {} nodes, got {len} values", g.0.n_nodes()),
            ));
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        write_out(out, VilabField(Field::new(g.0.id(), v)))
    })
}

/// # Safety
/// `field` must be null or a live field handle.
#[no_mangle]
pub unsafe extern "C" fn vilab_field_free(field: *mut VilabField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_field_len(field: *const VilabField, out: *mut usize) -> i32 {
    guard(|| {
        let f = deref(field, "field")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = f.0.len();
        Ok(())
    })
}

/// # Safety
/// `field` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vilab_field_values(field: *const VilabField, out: *mut f64, len: usize) -> i32 {
    guard(|| copy_out(&deref(field, "field")?.0.values, out, len))
}

/// Energy of `u` for the selected functional.
///
/// # Safety
/// All pointers must be live handles or writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_energy(
    energy: *const VilabEnergy,
    grid: *const VilabGrid,
    u: *const VilabField,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let spec = energy_spec(deref(energy, "energy")?)?;
        let g = deref(grid, "grid")?;
        let u = deref(u, "field")?;
        same_grid(&g.0, &u.0, "field")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = eval_energy(&spec, &g.0, &u.0)?;
        Ok(())
    })
}

/// Stationary obstacle (`thin = 0`) or thin-obstacle (`thin ≠ 0`) solution
/// with boundary data `data`.
///
/// # Safety
/// All pointers must be live handles or writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_solve_stationary(
    grid: *const VilabGrid,
    data: *const VilabField,
    thin: i32,
    tol: f64,
    out: *mut *mut VilabField,
) -> i32 {
    guard(|| {
        let g = deref(grid, "grid")?;
        let d = deref(data, "data")?;
        same_grid(&g.0, &d.0, "data")?;
        if !(tol > 0.0) {
            return Err(Fail(VILAB_ERR_INVALID, format!("tol must be positive, got {tol}")));
        }
        let opts = SolveOptions {
            tol,
            ..SolveOptions::default()
        };
        let rep = if thin == 0 {
            solve_obstacle(&g.0, &d.0, &opts)?
        } else {
            solve_thin_obstacle(&g.0, &d.0, &opts)?
        };
        write_out(out, VilabField(rep.solution))
    })
}

/// Implicit-Euler flow from `u0`. Ball energies need boundary data `data`
/// (ignored and may be null on the circle); `u0` is projected onto the
/// admissible set first.
///
/// # Safety
/// All pointers must be live handles or writable, except `data` as noted.
#[no_mangle]
pub unsafe extern "C" fn vilab_flow_run(
    energy: *const VilabEnergy,
    grid: *const VilabGrid,
    data: *const VilabField,
    u0: *const VilabField,
    dt: f64,
    t_end: f64,
    out: *mut *mut VilabTrajectory,
) -> i32 {
    guard(|| {
        let spec = energy_spec(deref(energy, "energy")?)?;
        let g = &deref(grid, "grid")?.0;
        let u0 = &deref(u0, "initial field")?.0;
        same_grid(g, u0, "initial field")?;
        spec.check_grid(g)?;
        let k = match spec {
            EnergySpec::Obstacle | EnergySpec::ThinObstacle => {
                let d = &deref(data, "data")?.0;
                same_grid(g, d, "data")?;
                if spec == EnergySpec::Obstacle {
                    Constraint::obstacle(g, d)
                } else {
                    Constraint::thin(g, d)
                }
            }
            EnergySpec::SphereObstacle { .. } => Constraint::cone(g),
            _ => Constraint::thin_sphere(g),
        };
        let traj = run_flow(&spec, &k, g, &k.project(u0), &FlowOptions::new(dt, t_end))?;
        write_out(out, VilabTrajectory(traj))
    })
}

/// # Safety
/// `traj` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn vilab_trajectory_free(traj: *mut VilabTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_trajectory_len(traj: *const VilabTrajectory, out: *mut usize) -> i32 {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = t.0.len();
        Ok(())
    })
}

/// # Safety
/// `traj` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vilab_trajectory_times(traj: *const VilabTrajectory, out: *mut f64, len: usize) -> i32 {
    guard(|| copy_out(&deref(traj, "trajectory")?.0.times, out, len))
}

/// # Safety
/// `traj` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vilab_trajectory_energies(
    traj: *const VilabTrajectory,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| copy_out(&deref(traj, "trajectory")?.0.energies, out, len))
}

/// Constrained gradient norms `‖∇F(u_k)‖_K` along the trajectory.
///
/// # Safety
/// `traj` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vilab_trajectory_k_norms(
    traj: *const VilabTrajectory,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| copy_out(&deref(traj, "trajectory")?.0.k_norms, out, len))
}

/// Copies state `index` into a new field handle.
///
/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vilab_trajectory_state(
    traj: *const VilabTrajectory,
    index: usize,
    out: *mut *mut VilabField,
) -> i32 {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        let s = t.0.states.get(index).ok_or_else(|| {
            Fail(
                VILAB_ERR_INVALID,
                format!("state {index} out of range ({} states)", t.0.len()),
            )
        })?;
        write_out(out, VilabField(s.clone()))
    })
}
