//! C interface to `cpfopt`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`CpfStatus`];
//! on failure [`cpf_last_error_message`] describes the cause. Arrays are
//! row-major `double` buffers whose sizes are stated per function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cpfopt::ensemble::{Ensemble, GaussianMoments};
use cpfopt::gain::affine::{affine_gain, DEFAULT_EPS_PD};
use cpfopt::manifest::{Resolved, RunManifest};
use cpfopt::objective::quadratic;
use cpfopt::oracle::qg::qg_exact;
use cpfopt::sim::{self, TrajectoryLog};
use cpfopt::Error;
use nalgebra::{DMatrix, DVector};

/// Status codes; numerically aligned with the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    OracleUnavailable = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// A parsed and validated run manifest.
pub struct CpfManifest {
    inner: Resolved,
}

/// The log of one simulation.
pub struct CpfTrajectory {
    log: TrajectoryLog,
    /// Row-major `len × dim`.
    means: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: CpfStatus, msg: impl Into<String>) -> CpfStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> CpfStatus {
    let status = match e {
        Error::InvalidArgument { .. } | Error::NotSymmetricPD => CpfStatus::InvalidArgument,
        Error::OracleUnavailable(_) => CpfStatus::OracleUnavailable,
        _ => CpfStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> CpfStatus) -> CpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == CpfStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(CpfStatus::Panic, "internal panic"),
    }
}

/// Message for the most recent failure on this thread; empty after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cpf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML manifest and validates every section.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpf_manifest_from_toml(toml: *const c_char, out: *mut *mut CpfManifest) -> CpfStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(CpfStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(CpfStatus::InvalidUtf8, "manifest is not valid UTF-8");
        };
        match RunManifest::from_toml(text).and_then(RunManifest::resolve) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CpfManifest { inner }));
                CpfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `manifest` must come from `cpf_manifest_from_toml` or be null.
#[no_mangle]
pub unsafe extern "C" fn cpf_manifest_free(manifest: *mut CpfManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Replaces the master seed.
///
/// # Safety
/// `manifest` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cpf_manifest_set_seed(manifest: *mut CpfManifest, seed: u64) -> CpfStatus {
    guard(|| match manifest.as_mut() {
        Some(m) => {
            m.inner.manifest.config.seed = seed;
            CpfStatus::Ok
        }
        None => fail(CpfStatus::NullPointer, "null manifest"),
    })
}

/// Runs the configured simulation.
///
/// # Safety
/// `manifest` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpf_run(manifest: *const CpfManifest, out: *mut *mut CpfTrajectory) -> CpfStatus {
    guard(|| {
        let (Some(m), false) = (manifest.as_ref(), out.is_null()) else {
            return fail(CpfStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        let r = &m.inner;
        match sim::run(&r.manifest.config, &r.objective, &r.init) {
            Ok(log) => {
                let means = log.mean.iter().flat_map(|v| v.iter().copied()).collect();
                *out = Box::into_raw(Box::new(CpfTrajectory { log, means }));
                CpfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `traj` must come from `cpf_run` or be null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_free(traj: *mut CpfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of logged times (steps + 1 unless stopped early); 0 for null.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_len(traj: *const CpfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.log.len())
}

/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_dim(traj: *const CpfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.log.dim)
}

/// `len` times. Borrowed; valid while `traj` lives.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_times(traj: *const CpfTrajectory) -> *const f64 {
    traj.as_ref().map_or(ptr::null(), |t| t.log.times.as_ptr())
}

/// `len` values of the empirical mean of h.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_hhat(traj: *const CpfTrajectory) -> *const f64 {
    traj.as_ref().map_or(ptr::null(), |t| t.log.hhat.as_ptr())
}

/// `len × dim` ensemble means.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_means(traj: *const CpfTrajectory) -> *const f64 {
    traj.as_ref().map_or(ptr::null(), |t| t.means.as_ptr())
}

/// `len` covariance traces.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_cov_trace(traj: *const CpfTrajectory) -> *const f64 {
    traj.as_ref().map_or(ptr::null(), |t| t.log.cov_trace.as_ptr())
}

/// Final `N × dim` particle positions; `*count` receives `N`.
///
/// # Safety
/// `traj` must be a live handle or null; `count` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn cpf_trajectory_final_positions(traj: *const CpfTrajectory, count: *mut usize) -> *const f64 {
    let Some(t) = traj.as_ref() else {
        return ptr::null();
    };
    if let Some(c) = count.as_mut() {
        *c = t.log.final_positions.len() / t.log.dim.max(1);
    }
    t.log.final_positions.as_ptr()
}

unsafe fn vector<'a>(p: *const f64, n: usize) -> Option<&'a [f64]> {
    (!p.is_null()).then(|| slice::from_raw_parts(p, n))
}

unsafe fn vector_mut<'a>(p: *mut f64, n: usize) -> Option<&'a mut [f64]> {
    (!p.is_null()).then(|| slice::from_raw_parts_mut(p, n))
}

/// Exact posterior moments at time `t` for `h(x) = ½(x − x̄)ᵀH(x − x̄)` and
/// prior `N(m0, s0)`. `m0`, `xbar`, `m_out` hold `d` values; `s0`, `hessian`,
/// `s_out` hold `d × d`.
///
/// # Safety
/// Every pointer must address the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn cpf_qg_exact(
    d: usize,
    m0: *const f64,
    s0: *const f64,
    hessian: *const f64,
    xbar: *const f64,
    beta: f64,
    t: f64,
    m_out: *mut f64,
    s_out: *mut f64,
) -> CpfStatus {
    guard(|| {
        let dd = d * d;
        let (Some(m0), Some(s0), Some(h), Some(xbar), Some(m_out), Some(s_out)) = (
            vector(m0, d),
            vector(s0, dd),
            vector(hessian, dd),
            vector(xbar, d),
            vector_mut(m_out, d),
            vector_mut(s_out, dd),
        ) else {
            return fail(CpfStatus::NullPointer, "null argument");
        };
        if d == 0 {
            return fail(CpfStatus::InvalidArgument, "dimension must be positive");
        }
        let result = (|| {
            let obj = quadratic(DMatrix::from_row_slice(d, d, h), DVector::from_row_slice(xbar), 0.0)?;
            let q = obj.quadratic().expect("quadratic objective");
            let prior = GaussianMoments::new(DVector::from_row_slice(m0), DMatrix::from_row_slice(d, d, s0))?;
            qg_exact(t, &prior, q, beta)
        })();
        match result {
            Ok(g) => {
                m_out.copy_from_slice(g.mean.as_slice());
                s_out.copy_from_slice(g.cov.transpose().as_slice());
                CpfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Affine control for `n` particles: `positions` is `n × d`, `h_values` has
/// `n` entries. Writes `n × d` controls, the `d × d` gain and the `d` offset;
/// `gain_out` and `offset_out` may be null.
///
/// # Safety
/// Every non-null pointer must address the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn cpf_affine_gain(
    n: usize,
    d: usize,
    positions: *const f64,
    h_values: *const f64,
    beta: f64,
    controls_out: *mut f64,
    gain_out: *mut f64,
    offset_out: *mut f64,
) -> CpfStatus {
    guard(|| {
        let (Some(pos), Some(h), Some(u_out)) = (
            vector(positions, n * d),
            vector(h_values, n),
            vector_mut(controls_out, n * d),
        ) else {
            return fail(CpfStatus::NullPointer, "null argument");
        };
        let result = Ensemble::from_parts(pos.to_vec(), d, h.to_vec()).and_then(|e| affine_gain(&e, beta, DEFAULT_EPS_PD));
        match result {
            Ok((u, g)) => {
                u_out.copy_from_slice(u.as_slice());
                if let Some(k) = vector_mut(gain_out, d * d) {
                    k.copy_from_slice(g.gain.transpose().as_slice());
                }
                if let Some(b) = vector_mut(offset_out, d) {
                    b.copy_from_slice(g.offset.as_slice());
                }
                CpfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
