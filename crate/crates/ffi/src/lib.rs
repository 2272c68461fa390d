//! C interface to the optimizer.
//!
//! Every function returns an [`MwStatus`]; on failure a description is
//! available from [`mw_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use miso_wpt::circuit::{build_loop_system, load_impedance_file, GeometrySpec, ImpedanceMatrix, Preset, DEFAULT_FREQUENCY_HZ};
use miso_wpt::pipeline::{PipelineOptions, PipelineResult};
use miso_wpt::qcqp::ConstraintMode;
use miso_wpt::report::{solve_with_policy, LoadPolicy, SolveRecord};
use miso_wpt::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The matrix is asymmetric, not passive, or otherwise unusable.
    InvalidSystem = 3,
    /// The power constraints admit no operating point.
    Infeasible = 4,
    SolverFailure = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// An impedance matrix at one frequency.
pub struct MwSystem {
    z: ImpedanceMatrix,
}

/// The optimized operating point of a system.
pub struct MwResult {
    record: SolveRecord,
    result: PipelineResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: MwStatus, msg: impl Into<String>) -> MwStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> MwStatus {
    let status = match &e {
        Error::Infeasible(_) => MwStatus::Infeasible,
        Error::Solver(_) | Error::Oracle(_) => MwStatus::SolverFailure,
        Error::Io(_) => MwStatus::Io,
        Error::InvalidArgument(_) => MwStatus::InvalidArgument,
        _ => MwStatus::InvalidSystem,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MwStatus) -> MwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MwStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, MwStatus> {
    if p.is_null() {
        return Err(fail(MwStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MwStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

fn put<T>(out: *mut *mut T, value: T) -> MwStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    MwStatus::Ok
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a preset loop geometry ("SISO", "MISO-2p", "MISO-3p", "MISO-2c",
/// "MISO-3c") with the receiver `d_over_lambda` wavelengths away at
/// `theta_deg` degrees.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mw_system_from_preset(
    preset: *const c_char,
    d_over_lambda: f64,
    theta_deg: f64,
    out: *mut *mut MwSystem,
) -> MwStatus {
    guard(|| {
        if out.is_null() {
            return fail(MwStatus::NullPointer, "out is null");
        }
        let name = match str_arg(preset, "preset") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let preset: Preset = match name.parse() {
            Ok(p) => p,
            Err(e) => return fail(MwStatus::InvalidArgument, e.to_string()),
        };
        let g = GeometrySpec::preset(preset, DEFAULT_FREQUENCY_HZ, d_over_lambda, theta_deg.to_radians());
        match build_loop_system(&g, DEFAULT_FREQUENCY_HZ) {
            Ok(z) => put(out, MwSystem { z }),
            Err(e) => from_error(e),
        }
    })
}

/// Wraps an `n × n` complex matrix given as row-major real and imaginary
/// parts; the last port is the receiver.
///
/// # Safety
/// `re` and `im` must each point to `n * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mw_system_from_matrix(
    n: usize,
    re: *const f64,
    im: *const f64,
    frequency_hz: f64,
    out: *mut *mut MwSystem,
) -> MwStatus {
    guard(|| {
        if re.is_null() || im.is_null() || out.is_null() {
            return fail(MwStatus::NullPointer, "matrix or output pointer is null");
        }
        if n == 0 {
            return fail(MwStatus::InvalidArgument, "matrix dimension is zero");
        }
        let re = std::slice::from_raw_parts(re, n * n);
        let im = std::slice::from_raw_parts(im, n * n);
        let entries = miso_wpt::linalg::CMatrix::from_fn(n, n, |i, j| Complex64::new(re[i * n + j], im[i * n + j]));
        match ImpedanceMatrix::new(entries, frequency_hz) {
            Ok(z) => put(out, MwSystem { z }),
            Err(e) => from_error(e),
        }
    })
}

/// Loads an impedance matrix JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mw_system_load(path: *const c_char, out: *mut *mut MwSystem) -> MwStatus {
    guard(|| {
        if out.is_null() {
            return fail(MwStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match load_impedance_file(path) {
            Ok(z) => put(out, MwSystem { z }),
            Err(e) => from_error(e),
        }
    })
}

/// Number of ports (transmitters plus receiver), or 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mw_system_n_ports(system: *const MwSystem) -> usize {
    system.as_ref().map_or(0, |s| s.z.n_ports())
}

/// # Safety
/// `system` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mw_system_free(system: *mut MwSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Finds the most efficient operating point. `load_ohms > 0` fixes the load
/// resistance, `0` uses the closed-form optimum and a negative value runs the
/// outer load search. `constraints` is "none", "nonneg" or "caps=w1,w2,…";
/// null means "nonneg".
///
/// # Safety
/// `system` must be a live handle, `constraints` null or NUL-terminated, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mw_solve(
    system: *const MwSystem,
    load_ohms: f64,
    constraints: *const c_char,
    out: *mut *mut MwResult,
) -> MwStatus {
    guard(|| {
        let Some(sys) = system.as_ref() else {
            return fail(MwStatus::NullPointer, "system is null");
        };
        if out.is_null() {
            return fail(MwStatus::NullPointer, "out is null");
        }
        let mode = if constraints.is_null() {
            ConstraintMode::NonNegative
        } else {
            let text = match str_arg(constraints, "constraints") {
                Ok(s) => s,
                Err(s) => return s,
            };
            match text.parse() {
                Ok(m) => m,
                Err(e) => return from_error(e),
            }
        };
        let policy = if load_ohms.is_nan() {
            return fail(MwStatus::InvalidArgument, "load resistance is NaN");
        } else if load_ohms > 0.0 {
            LoadPolicy::Fixed(load_ohms)
        } else if load_ohms == 0.0 {
            LoadPolicy::Auto
        } else {
            LoadPolicy::Optimize
        };
        let options = PipelineOptions {
            constraints: mode,
            ..PipelineOptions::default()
        };
        match solve_with_policy(&sys.z, policy, &options) {
            Ok(result) => put(
                out,
                MwResult {
                    record: SolveRecord::new(&sys.z, policy, &result),
                    result,
                },
            ),
            Err(e) => from_error(e),
        }
    })
}

/// Scalar summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MwSummary {
    /// Power transfer efficiency of the returned operating point.
    pub efficiency: f64,
    /// Unconstrained closed-form efficiency at the same load.
    pub efficiency_unconstrained: f64,
    pub load_ohms: f64,
    pub optimal_load_ohms: f64,
    /// Receiver series reactance (ohms).
    pub receiver_reactance: f64,
    /// Relaxation tightness error; 0 when the closed form was feasible.
    pub tightness_error: f64,
    pub iterations: usize,
    /// True when the closed form already satisfied the constraints.
    pub skipped: bool,
    pub tight: bool,
}

/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mw_result_summary(result: *const MwResult, out: *mut MwSummary) -> MwStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(MwStatus::NullPointer, "result or out is null");
        };
        let s = &r.result.sdr;
        *out = MwSummary {
            efficiency: s.eta,
            efficiency_unconstrained: r.result.closed_form.eta_res,
            load_ohms: r.result.r_l,
            optimal_load_ohms: r.result.closed_form.r_l_opt,
            receiver_reactance: s.x_r,
            tightness_error: s.epsilon,
            iterations: s.iterations,
            skipped: s.skipped,
            tight: s.tight,
        };
        MwStatus::Ok
    })
}

/// Copies the per-transmitter input powers (W) into `buf`. `*written`
/// receives the number of transmitters even when `len` is too small.
///
/// # Safety
/// `buf` must hold `len` doubles; `result` and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mw_result_transmit_powers(
    result: *const MwResult,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> MwStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), written.is_null()) else {
            return fail(MwStatus::NullPointer, "result or written is null");
        };
        let p = &r.result.sdr.transmit_powers;
        *written = p.len();
        if len < p.len() || buf.is_null() {
            return fail(MwStatus::BufferTooSmall, format!("need room for {} values", p.len()));
        }
        std::slice::from_raw_parts_mut(buf, p.len()).copy_from_slice(p);
        MwStatus::Ok
    })
}

/// Copies the port currents (A, phasor amplitudes) into `re`/`im`.
///
/// # Safety
/// `re` and `im` must each hold `len` doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mw_result_currents(
    result: *const MwResult,
    re: *mut f64,
    im: *mut f64,
    len: usize,
    written: *mut usize,
) -> MwStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), written.is_null()) else {
            return fail(MwStatus::NullPointer, "result or written is null");
        };
        let c = &r.result.sdr.currents;
        *written = c.len();
        if len < c.len() || re.is_null() || im.is_null() {
            return fail(MwStatus::BufferTooSmall, format!("need room for {} values", c.len()));
        }
        for (k, v) in c.iter().enumerate() {
            *re.add(k) = v.re;
            *im.add(k) = v.im;
        }
        MwStatus::Ok
    })
}

/// The full result record as a JSON string; release with [`mw_string_free`].
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mw_result_json(result: *const MwResult, out: *mut *mut c_char) -> MwStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(MwStatus::NullPointer, "result or out is null");
        };
        match serde_json::to_string(&r.record) {
            Ok(s) => {
                *out = CString::new(s).expect("JSON has no nul bytes").into_raw();
                MwStatus::Ok
            }
            Err(e) => fail(MwStatus::SolverFailure, e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mw_result_free(result: *mut MwResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
