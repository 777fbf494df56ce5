//! C ABI over the chainflow library.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `cf_*_free`. Every fallible call returns a [`CfStatus`]
//! and records a message retrievable with [`cf_last_error_message`] on the
//! calling thread. Array accessors follow one pattern: pass `buf = NULL` to
//! learn the length through `out_len`, then call again with a buffer of at
//! least that many elements.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chainflow::analysis::{ue_cost, CostBreakdown};
use chainflow::config::RunConfig;
use chainflow::optimize::{optimize, DescentTrace, StopReason};
use chainflow::upwind::ue_simulate;
use chainflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// The configuration text or an override could not be parsed.
    Config = 3,
    /// The chain, control or grid is not admissible.
    Validation = 4,
    /// A solver failed while running.
    Numerical = 5,
    Io = 6,
    /// The buffer passed is shorter than the data; `out_len` holds the need.
    BufferTooSmall = 7,
    /// A panic was caught at the boundary.
    Panic = 8,
    /// An index argument is out of range.
    OutOfRange = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStopReason {
    Converged = 0,
    MaxIterations = 1,
    Pinned = 2,
}

/// Parsed configuration plus the overrides applied so far.
pub struct CfConfig {
    text: String,
    overrides: Vec<String>,
    parsed: RunConfig,
}

/// One upwind simulation of a configuration.
pub struct CfSimulation {
    cost: CostBreakdown,
    /// `(t, q)` per processor; empty for the first one.
    queues: Vec<Vec<(f64, f64)>>,
    outflow: Vec<(f64, f64)>,
}

/// A finished steepest-descent run.
pub struct CfDescent {
    trace: DescentTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: CfStatus, msg: impl Into<String>) -> CfStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> CfStatus {
    match e {
        Error::Config(_) => CfStatus::Config,
        Error::Io(_) => CfStatus::Io,
        Error::EventCapExceeded(_) | Error::InconsistentEvent(_) | Error::MissingHistory { .. } => {
            CfStatus::Numerical
        }
        _ => CfStatus::Validation,
    }
}

fn from_error(e: Error) -> CfStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f` with panics turned into [`CfStatus::Panic`].
fn guard(f: impl FnOnce() -> CfStatus) -> CfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CfStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, CfStatus> {
    if p.is_null() {
        return Err(fail(CfStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CfStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, cap: usize, out_len: *mut usize) -> CfStatus {
    if out_len.is_null() {
        return fail(CfStatus::NullPointer, "out_len is null");
    }
    *out_len = values.len();
    if buf.is_null() {
        return CfStatus::Ok;
    }
    if cap < values.len() {
        return fail(
            CfStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        );
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    CfStatus::Ok
}

macro_rules! handle {
    ($p:expr) => {
        match $p.as_ref() {
            Some(h) => h,
            None => return fail(CfStatus::NullPointer, "null handle"),
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, without the
/// terminator; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn cf_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.as_bytes().len()))
}

/// Copies the last error message, NUL-terminated, into `buf` of `cap` bytes.
///
/// # Safety
/// `buf` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn cf_last_error_message(buf: *mut c_char, cap: usize) -> CfStatus {
    if buf.is_null() {
        return CfStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&b""[..], |m| m.as_bytes());
        if cap < bytes.len() + 1 {
            return CfStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        CfStatus::Ok
    })
}

/// Parses a TOML run configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_config_from_str(
    text: *const c_char,
    out: *mut *mut CfConfig,
) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return fail(CfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::parse(text, &[]) {
            Ok(parsed) => {
                *out = Box::into_raw(Box::new(CfConfig {
                    text: text.to_string(),
                    overrides: Vec::new(),
                    parsed,
                }));
                CfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Applies one `section.key=value` override. On failure the configuration
/// is left unchanged.
///
/// # Safety
/// `config` must come from [`cf_config_from_str`]; `assignment` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cf_config_set(
    config: *mut CfConfig,
    assignment: *const c_char,
) -> CfStatus {
    guard(|| {
        let cfg = match config.as_mut() {
            Some(c) => c,
            None => return fail(CfStatus::NullPointer, "null handle"),
        };
        let assignment = match read_str(assignment) {
            Ok(a) => a.to_string(),
            Err(s) => return s,
        };
        let mut overrides = cfg.overrides.clone();
        overrides.push(assignment);
        match RunConfig::parse(&cfg.text, &overrides) {
            Ok(parsed) => {
                cfg.parsed = parsed;
                cfg.overrides = overrides;
                CfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `config` must come from [`cf_config_from_str`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_config_free(config: *mut CfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Validates the configuration and runs one upwind simulation.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_simulate(
    config: *const CfConfig,
    out: *mut *mut CfSimulation,
) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return fail(CfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = handle!(config);
        let run = || -> chainflow::Result<CfSimulation> {
            let s = cfg.parsed.scenario(None)?;
            let traj = ue_simulate(&s.chain, &s.schedule.control()?, &s.grid)?;
            let cost = ue_cost(&traj, &s.cost)?;
            let grid = &traj.grid;
            let queues = (0..s.chain.len())
                .map(|j| {
                    if j == 0 {
                        return Vec::new();
                    }
                    traj.processors[j].queue[..=grid.steps[j]]
                        .iter()
                        .enumerate()
                        .map(|(n, q)| (grid.time(j, n), *q))
                        .collect()
                })
                .collect();
            let last = s.chain.len() - 1;
            let outflow = traj
                .outflow_trace()
                .iter()
                .enumerate()
                .map(|(n, f)| (grid.time(last, n), *f))
                .collect();
            Ok(CfSimulation {
                cost,
                queues,
                outflow,
            })
        };
        match run() {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(sim));
                CfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `sim` must be a live handle; `j1` and `j2` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cf_simulation_cost(
    sim: *const CfSimulation,
    j1: *mut f64,
    j2: *mut f64,
) -> CfStatus {
    guard(|| {
        let sim = handle!(sim);
        if j1.is_null() || j2.is_null() {
            return fail(CfStatus::NullPointer, "null output pointer");
        }
        *j1 = sim.cost.j1;
        *j2 = sim.cost.j2;
        CfStatus::Ok
    })
}

/// Number of processors in the simulated chain; 0 for a null handle.
///
/// # Safety
/// `sim` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_simulation_processors(sim: *const CfSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.queues.len())
}

unsafe fn series(
    points: &[(f64, f64)],
    times: bool,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> CfStatus {
    let values: Vec<f64> = points
        .iter()
        .map(|p| if times { p.0 } else { p.1 })
        .collect();
    copy_out(&values, buf, cap, out_len)
}

fn queue_of(sim: &CfSimulation, processor: usize) -> Result<&[(f64, f64)], CfStatus> {
    if processor == 0 || processor >= sim.queues.len() {
        return Err(fail(
            CfStatus::OutOfRange,
            format!(
                "queues exist for processors 1..{} (0-based)",
                sim.queues.len()
            ),
        ));
    }
    Ok(&sim.queues[processor])
}

/// Queue content in front of `processor` (0-based, at least 1) on its own
/// time lattice.
///
/// # Safety
/// `sim` must be a live handle; `buf` valid for `cap` values or null;
/// `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_simulation_queue(
    sim: *const CfSimulation,
    processor: usize,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> CfStatus {
    guard(|| match queue_of(handle!(sim), processor) {
        Ok(q) => series(q, false, buf, cap, out_len),
        Err(s) => s,
    })
}

/// Sample times matching [`cf_simulation_queue`].
///
/// # Safety
/// As for [`cf_simulation_queue`].
#[no_mangle]
pub unsafe extern "C" fn cf_simulation_queue_times(
    sim: *const CfSimulation,
    processor: usize,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> CfStatus {
    guard(|| match queue_of(handle!(sim), processor) {
        Ok(q) => series(q, true, buf, cap, out_len),
        Err(s) => s,
    })
}

/// Outflow of the last processor per step.
///
/// # Safety
/// `sim` must be a live handle; `buf` valid for `cap` values or null;
/// `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_simulation_outflow(
    sim: *const CfSimulation,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> CfStatus {
    guard(|| series(&handle!(sim).outflow, false, buf, cap, out_len))
}

/// # Safety
/// `sim` must come from [`cf_simulate`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_simulation_free(sim: *mut CfSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs the configured steepest descent.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_optimize(
    config: *const CfConfig,
    out: *mut *mut CfDescent,
) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return fail(CfStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = handle!(config);
        let run = || -> chainflow::Result<DescentTrace> {
            let s = cfg.parsed.scenario(None)?;
            optimize(&s.chain, &s.schedule, &s.grid, &s.cost, &s.descent)
        };
        match run() {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(CfDescent { trace }));
                CfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of recorded states, the starting point included.
///
/// # Safety
/// `d` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_descent_len(d: *const CfDescent) -> usize {
    d.as_ref().map_or(0, |d| d.trace.iterations.len())
}

/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_descent_stop(d: *const CfDescent, out: *mut CfStopReason) -> CfStatus {
    guard(|| {
        let d = handle!(d);
        if out.is_null() {
            return fail(CfStatus::NullPointer, "out is null");
        }
        *out = match d.trace.stop {
            StopReason::Converged => CfStopReason::Converged,
            StopReason::MaxIterations => CfStopReason::MaxIterations,
            StopReason::Pinned => CfStopReason::Pinned,
        };
        CfStatus::Ok
    })
}

/// Switching times of recorded state `iteration`.
///
/// # Safety
/// `d` must be a live handle; `buf` valid for `cap` values or null;
/// `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_descent_taus(
    d: *const CfDescent,
    iteration: usize,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> CfStatus {
    guard(|| {
        let d = handle!(d);
        match d.trace.iterations.get(iteration) {
            Some(r) => copy_out(&r.taus, buf, cap, out_len),
            None => fail(CfStatus::OutOfRange, format!("no iteration {iteration}")),
        }
    })
}

/// Cost terms of recorded state `iteration`.
///
/// # Safety
/// `d` must be a live handle; `j1` and `j2` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cf_descent_cost(
    d: *const CfDescent,
    iteration: usize,
    j1: *mut f64,
    j2: *mut f64,
) -> CfStatus {
    guard(|| {
        let d = handle!(d);
        if j1.is_null() || j2.is_null() {
            return fail(CfStatus::NullPointer, "null output pointer");
        }
        match d.trace.iterations.get(iteration) {
            Some(r) => {
                *j1 = r.cost.j1;
                *j2 = r.cost.j2;
                CfStatus::Ok
            }
            None => fail(CfStatus::OutOfRange, format!("no iteration {iteration}")),
        }
    })
}

/// # Safety
/// `d` must come from [`cf_optimize`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_descent_free(d: *mut CfDescent) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}
