//! C ABI over the `dispersal` solver.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns a
//! [`DispersalStatus`]; the message of the most recent failure on the calling
//! thread is available from [`dispersal_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use dispersal::grid::{SpatialField, SpatialGrid};
use dispersal::solver::{existence_mu1, solve_steady_state, ModelConfig, SteadyState};
use dispersal::Error;

/// Result codes. `DISPERSAL_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispersalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Habitat = 3,
    NonConvergence = 4,
    NonExistence = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Problem definition: habitat, trait range and mutation strength.
pub struct DispersalModel {
    config: ModelConfig,
}

/// Converged steady state of a model.
pub struct DispersalSteadyState {
    state: SteadyState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DispersalStatus {
    match err {
        Error::InvalidGrid(_) | Error::GridMismatch(_) | Error::InvalidParameter(_) | Error::InvalidA1(_) | Error::ZeroField => {
            DispersalStatus::InvalidArgument
        }
        Error::Habitat(_) => DispersalStatus::Habitat,
        Error::NonConvergence { .. } => DispersalStatus::NonConvergence,
        Error::NonExistence { .. } => DispersalStatus::NonExistence,
        _ => DispersalStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), DispersalStatus>>(f: F) -> DispersalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DispersalStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            DispersalStatus::Panic
        }
    }
}

fn fail(err: Error) -> DispersalStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(what: &str) -> DispersalStatus {
    set_error(format!("{what} is null"));
    DispersalStatus::NullPointer
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dispersal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dispersal_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// One-dimensional model on `(0, length)` with `cells` cells. `m` holds the
/// habitat at the `cells + 1` nodes. `trait_cells = 0` picks a layer-resolving
/// trait grid. Constant `m` is accepted only when `trivial` is true.
///
/// # Safety
/// `m` must point to `cells + 1` readable doubles and `out` to writable storage
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dispersal_model_new(
    m: *const f64,
    cells: usize,
    length: f64,
    alpha_lo: f64,
    alpha_hi: f64,
    epsilon: f64,
    trait_cells: usize,
    trivial: bool,
    out: *mut *mut DispersalModel,
) -> DispersalStatus {
    guard(|| {
        if m.is_null() {
            return Err(null("m"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = SpatialGrid::new(vec![length], vec![cells]).map_err(fail)?;
        let values = std::slice::from_raw_parts(m, grid.len()).to_vec();
        let field = SpatialField::new(Arc::new(grid), values).map_err(fail)?;
        let cells = (trait_cells > 0).then_some(trait_cells);
        let config = ModelConfig::new(field, alpha_lo, alpha_hi, epsilon, cells, trivial).map_err(fail)?;
        *out = Box::into_raw(Box::new(DispersalModel { config }));
        Ok(())
    })
}

/// Default configuration: `(0, 1)`, 96 cells, `m = 1 + cos(πx)/2`,
/// traits in `[0.5, 2]`.
///
/// # Safety
/// `out` must be writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dispersal_model_new_default(epsilon: f64, out: *mut *mut DispersalModel) -> DispersalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ModelConfig::desk_scale(epsilon).map_err(fail)?;
        *out = Box::into_raw(Box::new(DispersalModel { config }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `dispersal_model_new*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dispersal_model_free(model: *mut DispersalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Spatial and trait node counts of the model.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispersal_model_dims(
    model: *const DispersalModel,
    spatial_nodes: *mut usize,
    trait_nodes: *mut usize,
) -> DispersalStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if spatial_nodes.is_null() || trait_nodes.is_null() {
            return Err(null("output"));
        }
        *spatial_nodes = model.config.spatial().len();
        *trait_nodes = model.config.traits.len();
        Ok(())
    })
}

/// Principal eigenvalue `μ₁` of the linearization at zero. A positive steady
/// state exists exactly when it is negative.
///
/// # Safety
/// `model` must be a live handle; `mu1` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispersal_model_mu1(model: *const DispersalModel, mu1: *mut f64) -> DispersalStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if mu1.is_null() {
            return Err(null("mu1"));
        }
        *mu1 = existence_mu1(&model.config).map_err(fail)?;
        Ok(())
    })
}

/// Solves for the positive steady state.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dispersal_steady_state_solve(
    model: *const DispersalModel,
    out: *mut *mut DispersalSteadyState,
) -> DispersalStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let state = solve_steady_state(&model.config).map_err(fail)?;
        *out = Box::into_raw(Box::new(DispersalSteadyState { state }));
        Ok(())
    })
}

/// # Safety
/// `state` must come from [`dispersal_steady_state_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dispersal_steady_state_free(state: *mut DispersalSteadyState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Sup-norm residual of the converged state.
///
/// # Safety
/// `state` must be a live handle; `residual` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispersal_steady_state_residual(state: *const DispersalSteadyState, residual: *mut f64) -> DispersalStatus {
    guard(|| {
        let state = state.as_ref().ok_or_else(|| null("state"))?;
        if residual.is_null() {
            return Err(null("residual"));
        }
        *residual = state.state.residual_inf;
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), DispersalStatus> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        set_error(format!("buffer holds {len} values, need {}", src.len()));
        return Err(DispersalStatus::BufferTooSmall);
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the density, space-major with the trait index contiguous, into
/// `buf` of capacity `len`.
///
/// # Safety
/// `state` must be a live handle; `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dispersal_steady_state_density(state: *const DispersalSteadyState, buf: *mut f64, len: usize) -> DispersalStatus {
    guard(|| {
        let state = state.as_ref().ok_or_else(|| null("state"))?;
        copy_out(&state.state.u.values, buf, len)
    })
}

/// Copies the trait-integrated density `û` into `buf` of capacity `len`.
///
/// # Safety
/// `state` must be a live handle; `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dispersal_steady_state_total(state: *const DispersalSteadyState, buf: *mut f64, len: usize) -> DispersalStatus {
    guard(|| {
        let state = state.as_ref().ok_or_else(|| null("state"))?;
        copy_out(&state.state.u_hat.values, buf, len)
    })
}

/// `A₀`, the absolute value of the first negative zero of `Ai'`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispersal_airy_a0(out: *mut f64) -> DispersalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = dispersal::airy::find_a0().map_err(fail)?;
        Ok(())
    })
}

/// `Ai(x)` for `|x| ≤ 20`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispersal_airy_ai(x: f64, out: *mut f64) -> DispersalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = dispersal::airy::airy_ai(x).map_err(fail)?;
        Ok(())
    })
}
