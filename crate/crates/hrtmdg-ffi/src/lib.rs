//! C bindings for the hybrid Raviart-Thomas Helmholtz solver.
//!
//! The surface follows the usual handle conventions: constructors return an
//! owned pointer through an out-parameter and a status code, every handle has
//! a matching `*_free`, and the message for the most recent failure on the
//! current thread is available through [`hrtmdg_last_error`]. Handles are
//! independent once created; a solution stays valid after the mesh it was
//! built from has been freed.
//!
//! The generated header lives in `include/hrtmdg.h` and is refreshed by the
//! build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::sync::Arc;

use hrtmdg::global::{solve, FieldSolution, GlobalOpts};
use hrtmdg::mesh::{generate_structured, import_mesh, Mesh};
use hrtmdg::refelem::build_reference_element;
use hrtmdg::{analysis, mms, Error};

/// Outcome of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HrtmdgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was rejected before any work started (bad degree,
    /// non-positive wavenumber, unknown case name, malformed mesh, ...).
    InvalidArgument = 2,
    /// The discrete system could not be solved (resonant wavenumber,
    /// singular factorization, iteration stall).
    SolveFailed = 3,
    /// A file could not be read.
    IoFailed = 4,
}

/// Triangulated unit-square domain. Opaque; create with
/// [`hrtmdg_mesh_create_structured`] or [`hrtmdg_mesh_read`], release with
/// [`hrtmdg_mesh_free`].
pub struct HrtmdgMesh {
    inner: Arc<Mesh>,
}

/// Discrete fields of one solve together with the diagnostics computed
/// against the manufactured case. Opaque; create with [`hrtmdg_solve`],
/// release with [`hrtmdg_solution_free`].
pub struct HrtmdgSolution {
    fields: FieldSolution,
    err_u: f64,
    err_sigma: f64,
    conservation_max: f64,
    flux_jump_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: HrtmdgStatus, message: impl std::fmt::Display) -> HrtmdgStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).unwrap_or_default());
    status
}

fn fail_with(err: Error) -> HrtmdgStatus {
    let status = match &err {
        Error::Io { .. } => HrtmdgStatus::IoFailed,
        Error::LocalResonance { .. }
        | Error::SingularSystem { .. }
        | Error::IterativeDivergence { .. }
        | Error::SizeCap { .. } => HrtmdgStatus::SolveFailed,
        _ => HrtmdgStatus::InvalidArgument,
    };
    fail(status, err)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrtmdg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on the calling thread, or an empty
/// string if nothing has failed yet. The pointer stays valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn hrtmdg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds the structured criss-cross triangulation of the unit square with
/// `n` subdivisions per side (2 n^2 triangles).
///
/// # Safety
/// `out` must be a valid pointer to a mesh-handle slot.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_create_structured(
    n: u32,
    out: *mut *mut HrtmdgMesh,
) -> HrtmdgStatus {
    if out.is_null() {
        return fail(HrtmdgStatus::NullArgument, "out pointer is null");
    }
    match generate_structured(n as usize) {
        Ok(mesh) => {
            *out = Box::into_raw(Box::new(HrtmdgMesh {
                inner: Arc::new(mesh),
            }));
            HrtmdgStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Reads a mesh from the plain-text vertex/cell format.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer to
/// a mesh-handle slot.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_read(
    path: *const c_char,
    out: *mut *mut HrtmdgMesh,
) -> HrtmdgStatus {
    if path.is_null() || out.is_null() {
        return fail(HrtmdgStatus::NullArgument, "path or out pointer is null");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => return fail(HrtmdgStatus::InvalidArgument, "path is not valid UTF-8"),
    };
    match import_mesh(path) {
        Ok(mesh) => {
            *out = Box::into_raw(Box::new(HrtmdgMesh {
                inner: Arc::new(mesh),
            }));
            HrtmdgStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Releases a mesh handle. Passing null is a no-op.
///
/// # Safety
/// `mesh` must be null or a pointer previously returned by a mesh
/// constructor that has not already been freed.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_free(mesh: *mut HrtmdgMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Number of triangles, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live mesh handle.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_cells(mesh: *const HrtmdgMesh) -> u64 {
    match mesh.as_ref() {
        Some(m) => m.inner.n_cells() as u64,
        None => 0,
    }
}

/// Number of interior edges (the edges that carry multiplier unknowns), or 0
/// for a null handle.
///
/// # Safety
/// `mesh` must be null or a live mesh handle.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_interior_edges(mesh: *const HrtmdgMesh) -> u64 {
    match mesh.as_ref() {
        Some(m) => m.inner.n_interior_edges() as u64,
        None => 0,
    }
}

/// Longest edge length, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live mesh handle.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_size(mesh: *const HrtmdgMesh) -> f64 {
    match mesh.as_ref() {
        Some(m) => m.inner.mesh_size(),
        None => 0.0,
    }
}

/// Maps reference coordinates of one triangle to physical coordinates.
///
/// # Safety
/// `mesh` must be a live mesh handle; `x` and `y` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_mesh_map_point(
    mesh: *const HrtmdgMesh,
    cell: u64,
    xhat: f64,
    yhat: f64,
    x: *mut f64,
    y: *mut f64,
) -> HrtmdgStatus {
    let Some(m) = mesh.as_ref() else {
        return fail(HrtmdgStatus::NullArgument, "mesh handle is null");
    };
    if x.is_null() || y.is_null() {
        return fail(HrtmdgStatus::NullArgument, "x or y pointer is null");
    }
    if cell >= m.inner.n_cells() as u64 {
        return fail(
            HrtmdgStatus::InvalidArgument,
            format!("cell {cell} out of range ({} cells)", m.inner.n_cells()),
        );
    }
    let p = m.inner.cell_geometry(cell as usize).map([xhat, yhat]);
    *x = p[0];
    *y = p[1];
    HrtmdgStatus::Ok
}

/// Solves one manufactured case on the given mesh.
///
/// `k` is the polynomial degree (0 to 3), `kappa` the positive wavenumber,
/// and `case_name` one of the manufactured cases (`plane_wave`,
/// `plane_wave:<angle>`, `sine_product`, `polynomial:<degree>`). The handle
/// written to `out` carries the discrete fields and the error and
/// conservation diagnostics of the solve.
///
/// # Safety
/// `mesh` must be a live mesh handle, `case_name` a NUL-terminated UTF-8
/// string, and `out` a valid pointer to a solution-handle slot.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_solve(
    mesh: *const HrtmdgMesh,
    k: u32,
    kappa: f64,
    case_name: *const c_char,
    out: *mut *mut HrtmdgSolution,
) -> HrtmdgStatus {
    let Some(m) = mesh.as_ref() else {
        return fail(HrtmdgStatus::NullArgument, "mesh handle is null");
    };
    if case_name.is_null() || out.is_null() {
        return fail(HrtmdgStatus::NullArgument, "case_name or out pointer is null");
    }
    let name = match CStr::from_ptr(case_name).to_str() {
        Ok(s) => s,
        Err(_) => {
            return fail(HrtmdgStatus::InvalidArgument, "case_name is not valid UTF-8")
        }
    };
    if !(kappa > 0.0 && kappa.is_finite()) {
        return fail(
            HrtmdgStatus::InvalidArgument,
            format!("kappa must be positive, got {kappa}"),
        );
    }
    let re = match build_reference_element(k as usize) {
        Ok(re) => Arc::new(re),
        Err(e) => return fail_with(e),
    };
    let case = match mms::by_name(name, kappa) {
        Ok(c) => c,
        Err(e) => return fail_with(e),
    };
    let opts = GlobalOpts::default();
    let (fields, _stats) = match solve(&m.inner, &re, kappa, &case, &opts) {
        Ok(r) => r,
        Err(e) => return fail_with(e),
    };

    let degree = 2 * k as usize + 8;
    let err_u = analysis::broken_l2_error_u(&fields, &|p| case.u(p), degree);
    let err_sigma = analysis::broken_l2_error_sigma(&fields, &|p| case.sigma(p), degree);
    let (conservation_max, _, _) = analysis::conservation_residuals(&fields, &case);
    let (flux_jump_max, _) = analysis::flux_jump_moments(&fields);
    *out = Box::into_raw(Box::new(HrtmdgSolution {
        fields,
        err_u,
        err_sigma,
        conservation_max,
        flux_jump_max,
    }));
    HrtmdgStatus::Ok
}

/// Releases a solution handle. Passing null is a no-op.
///
/// # Safety
/// `sol` must be null or a pointer previously returned by [`hrtmdg_solve`]
/// that has not already been freed.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_solution_free(sol: *mut HrtmdgSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Broken L2 errors of the scalar and flux fields against the exact
/// manufactured solution.
///
/// # Safety
/// `sol` must be a live solution handle; `err_u` and `err_sigma` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_solution_errors(
    sol: *const HrtmdgSolution,
    err_u: *mut f64,
    err_sigma: *mut f64,
) -> HrtmdgStatus {
    let Some(s) = sol.as_ref() else {
        return fail(HrtmdgStatus::NullArgument, "solution handle is null");
    };
    if err_u.is_null() || err_sigma.is_null() {
        return fail(HrtmdgStatus::NullArgument, "err_u or err_sigma pointer is null");
    }
    *err_u = s.err_u;
    *err_sigma = s.err_sigma;
    HrtmdgStatus::Ok
}

/// Largest per-element mass-balance residual and largest interface
/// normal-flux jump moment; both vanish to roundoff on a healthy solve.
///
/// # Safety
/// `sol` must be a live solution handle; `conservation_max` and
/// `flux_jump_max` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_solution_diagnostics(
    sol: *const HrtmdgSolution,
    conservation_max: *mut f64,
    flux_jump_max: *mut f64,
) -> HrtmdgStatus {
    let Some(s) = sol.as_ref() else {
        return fail(HrtmdgStatus::NullArgument, "solution handle is null");
    };
    if conservation_max.is_null() || flux_jump_max.is_null() {
        return fail(
            HrtmdgStatus::NullArgument,
            "conservation_max or flux_jump_max pointer is null",
        );
    }
    *conservation_max = s.conservation_max;
    *flux_jump_max = s.flux_jump_max;
    HrtmdgStatus::Ok
}

/// Number of multiplier unknowns of the condensed system, or 0 for a null
/// handle.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_solution_multiplier_dofs(sol: *const HrtmdgSolution) -> u64 {
    match sol.as_ref() {
        Some(s) => s.fields.lambda.iter().map(|l| l.len() as u64).sum(),
        None => 0,
    }
}

/// Evaluates the discrete fields at reference coordinates inside one
/// triangle. Writes six doubles to `values`: Re u, Im u, Re sigma_x,
/// Im sigma_x, Re sigma_y, Im sigma_y.
///
/// # Safety
/// `sol` must be a live solution handle and `values` must point to at least
/// six writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hrtmdg_solution_eval(
    sol: *const HrtmdgSolution,
    cell: u64,
    xhat: f64,
    yhat: f64,
    values: *mut f64,
) -> HrtmdgStatus {
    let Some(s) = sol.as_ref() else {
        return fail(HrtmdgStatus::NullArgument, "solution handle is null");
    };
    if values.is_null() {
        return fail(HrtmdgStatus::NullArgument, "values pointer is null");
    }
    let n_cells = s.fields.mesh.n_cells();
    if cell >= n_cells as u64 {
        return fail(
            HrtmdgStatus::InvalidArgument,
            format!("cell {cell} out of range ({n_cells} cells)"),
        );
    }
    let u = s.fields.eval_u(cell as usize, [xhat, yhat]);
    let sig = s.fields.eval_sigma(cell as usize, [xhat, yhat]);
    let out = std::slice::from_raw_parts_mut(values, 6);
    out[0] = u.re;
    out[1] = u.im;
    out[2] = sig[0].re;
    out[3] = sig[0].im;
    out[4] = sig[1].re;
    out[5] = sig[1].im;
    HrtmdgStatus::Ok
}
