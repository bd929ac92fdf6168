//! C interface to `kinetic-mfg`.
//!
//! Objects cross the boundary as opaque handles created by
//! [`kmfg_config_parse`] or [`kmfg_solve`] and released by the matching
//! `*_free`. Every fallible call returns a [`KmfgStatus`]; on failure a
//! message is available from [`kmfg_last_error`] until the next failing call
//! on the same thread.
//! Panics never unwind into C: they are reported as `KMFG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kinetic_mfg::cli_io::{parse_config, RunConfig};
use kinetic_mfg::model::{build_initial_density, MAX_OUTSIDE_MASS};
use kinetic_mfg::oracle::{oracle_solve, OracleConfig};
use kinetic_mfg::solver::{pdhg_solve, Solution};
use kinetic_mfg::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmfgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed configuration text.
    Parse = 3,
    /// A configuration value outside its admissible range.
    Range = 4,
    /// Divergence, root-finding or other numerical failure.
    Numerical = 5,
    Io = 6,
    /// The solver stopped before meeting its tolerances; the solution is still returned.
    NotConverged = 7,
    /// The output buffer is shorter than the requested field.
    BufferTooSmall = 8,
    /// Unknown field selector.
    InvalidArgument = 9,
    Panic = 10,
}

/// Field selector for [`kmfg_solution_field`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmfgField {
    /// Density at time nodes `0..=nt`.
    Density = 0,
    /// Value function at time nodes `0..=nt`.
    Value = 1,
    /// First flux component on intervals `0..nt`.
    Flux1 = 2,
    /// Second flux component (d = 2 only).
    Flux2 = 3,
    /// Terminal density, a single slice.
    TerminalDensity = 4,
}

/// Grid dimensions of a configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KmfgGrid {
    pub d: usize,
    pub nx: usize,
    pub nv: usize,
    pub nt: usize,
    pub horizon: f64,
    pub v_max: f64,
}

/// Final state of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KmfgSummary {
    pub iterations: usize,
    pub converged: bool,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub feasibility: f64,
    pub energy_residual: f64,
}

/// Opaque run configuration.
pub struct KmfgConfig(RunConfig);

/// Opaque solver output.
pub struct KmfgSolution(Solution);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(e: &Error) -> KmfgStatus {
    match e {
        Error::Parse { .. } | Error::Config(_) => KmfgStatus::Parse,
        Error::Range { .. } => KmfgStatus::Range,
        Error::Io(_) => KmfgStatus::Io,
        _ => KmfgStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<KmfgStatus, (KmfgStatus, String)>) -> KmfgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            KmfgStatus::Panic
        }
    }
}

fn fail(e: Error) -> (KmfgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (KmfgStatus, String) {
    (KmfgStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failing call on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn kmfg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kmfg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses `key = value` configuration text into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kmfg_config_parse(text: *const c_char, out: *mut *mut KmfgConfig) -> KmfgStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| (KmfgStatus::InvalidUtf8, e.to_string()))?;
        let cfg = parse_config(s).map_err(fail)?;
        *out = Box::into_raw(Box::new(KmfgConfig(cfg)));
        Ok(KmfgStatus::Ok)
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from [`kmfg_config_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kmfg_config_free(cfg: *mut KmfgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Copies the grid dimensions of `cfg` into `out`.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kmfg_config_grid(cfg: *const KmfgConfig, out: *mut KmfgGrid) -> KmfgStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let g = cfg.0.grid;
        *out = KmfgGrid {
            d: g.d,
            nx: g.nx,
            nv: g.nv,
            nt: g.nt,
            horizon: g.horizon,
            v_max: g.v_max,
        };
        Ok(KmfgStatus::Ok)
    })
}

/// Runs the primal-dual solver. On `Ok` or `NotConverged`, `*out` holds a
/// new solution handle; otherwise it is null.
///
/// # Safety
/// `cfg` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kmfg_solve(cfg: *const KmfgConfig, out: *mut *mut KmfgSolution) -> KmfgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let m0 = build_initial_density(&cfg.grid, &cfg.model.m0, MAX_OUTSIDE_MASS).map_err(fail)?;
        let sol = pdhg_solve(&cfg.model, &cfg.grid, &m0, &cfg.solver).map_err(fail)?;
        let converged = sol.record.converged;
        *out = Box::into_raw(Box::new(KmfgSolution(sol)));
        if converged {
            Ok(KmfgStatus::Ok)
        } else {
            set_error("iteration budget exhausted before the tolerances were met");
            Ok(KmfgStatus::NotConverged)
        }
    })
}

/// Releases a solution. Null is ignored.
///
/// # Safety
/// `sol` must come from [`kmfg_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kmfg_solution_free(sol: *mut KmfgSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Last convergence row of a solution.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kmfg_solution_summary(sol: *const KmfgSolution, out: *mut KmfgSummary) -> KmfgStatus {
    guard(|| {
        let sol = &sol.as_ref().ok_or_else(|| null("sol"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let row = sol
            .record
            .last()
            .ok_or_else(|| (KmfgStatus::Numerical, "solution has no convergence record".to_string()))?;
        *out = KmfgSummary {
            iterations: row.iter,
            converged: sol.record.converged,
            primal: row.primal,
            dual: row.dual,
            gap: row.gap,
            feasibility: row.feas,
            energy_residual: row.energy_residual,
        };
        Ok(KmfgStatus::Ok)
    })
}

/// Copies a field, slice-major then position then velocity, into `buf`.
/// `*written` receives the field length even when `buf` is too small, so a
/// call with `len = 0` queries the size.
///
/// # Safety
/// `sol` and `written` must be valid; `buf` must hold `len` doubles or be
/// null with `len = 0`.
#[no_mangle]
pub unsafe extern "C" fn kmfg_solution_field(
    sol: *const KmfgSolution,
    which: KmfgField,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> KmfgStatus {
    guard(|| {
        let sol = &sol.as_ref().ok_or_else(|| null("sol"))?.0;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let d = sol.flow.m.grid().d;
        let data: &[f64] = match which {
            KmfgField::Density => sol.flow.m.values(),
            KmfgField::Value => sol.value.u.values(),
            KmfgField::Flux1 => sol.flow.w.component(0).values(),
            KmfgField::Flux2 if d == 2 => sol.flow.w.component(1).values(),
            KmfgField::Flux2 => {
                return Err((KmfgStatus::InvalidArgument, "second flux component needs d = 2".into()));
            }
            KmfgField::TerminalDensity => &sol.flow.m_terminal,
        };
        *written = data.len();
        if len < data.len() {
            return Err((
                KmfgStatus::BufferTooSmall,
                format!("field has {} values, buffer holds {len}", data.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(KmfgStatus::Ok)
    })
}

/// Optimal primal value from the brute-force oracle (tiny grids only).
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kmfg_oracle_objective(cfg: *const KmfgConfig, out: *mut f64) -> KmfgStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m0 = build_initial_density(&cfg.grid, &cfg.model.m0, MAX_OUTSIDE_MASS).map_err(fail)?;
        let sol = oracle_solve(&cfg.model, &cfg.grid, &m0, &OracleConfig::default()).map_err(fail)?;
        *out = sol.objective;
        Ok(KmfgStatus::Ok)
    })
}
