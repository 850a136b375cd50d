//! C interface to the simulator and scoring code.
//!
//! Every fallible call returns a [`CfStatus`]; on failure the message is
//! available from [`cf_last_error_message`] on the same thread. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `_free`. Strings returned through `char **` are freed with
//! [`cf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cellfit::bench::task_protocol;
use cellfit::feedback::{build_feedback, LossConfig};
use cellfit::metrics;
use cellfit::params::{ParamError, PhysicalParameterSet};
use cellfit::sim::{self, run_protocol, Protocol, SimError, SimulationTrace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    ErrNull = 1,
    /// A string argument was not valid UTF-8.
    ErrUtf8 = 2,
    ErrParse = 3,
    /// A value or parameter set violates its constraints.
    ErrValidation = 4,
    ErrSimulation = 5,
    ErrIo = 6,
    /// Unknown parameter name.
    ErrNotFound = 7,
    /// Internal error; the library state is unchanged.
    ErrPanic = 8,
}

/// Trace column selector for [`cf_trace_column`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfColumn {
    /// Seconds.
    Time = 0,
    /// Volts.
    Voltage = 1,
    /// Amperes, positive on discharge.
    Current = 2,
    /// Ampere-hours discharged.
    Capacity = 3,
}

pub struct CfParams(PhysicalParameterSet);
pub struct CfProtocol(Protocol);
pub struct CfTrace(SimulationTrace);

struct Failure(CfStatus, String);

impl From<ParamError> for Failure {
    fn from(e: ParamError) -> Self {
        let status = match e {
            ParamError::Unknown(_) | ParamError::Missing(_) => CfStatus::ErrNotFound,
            ParamError::Io { .. } => CfStatus::ErrIo,
            ParamError::Parse(_) => CfStatus::ErrParse,
            _ => CfStatus::ErrValidation,
        };
        Failure(status, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Params(p) => p.into(),
            SimError::Protocol(p) => Failure(CfStatus::ErrValidation, p.to_string()),
            e => Failure(CfStatus::ErrSimulation, e.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CfStatus::ErrPanic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CfStatus::ErrNull, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(CfStatus::ErrUtf8, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The bundled parameter set.
#[no_mangle]
pub extern "C" fn cf_params_default() -> *mut CfParams {
    Box::into_raw(Box::new(CfParams(PhysicalParameterSet::default_set())))
}

/// # Safety
/// `json` must be a nul-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_params_from_json(json: *const c_char, out: *mut *mut CfParams) -> CfStatus {
    guard(|| {
        let p = PhysicalParameterSet::from_json(text(json, "json")?)?;
        p.validate()?;
        put(out, Box::into_raw(Box::new(CfParams(p))), "out")
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_params_load(path: *const c_char, out: *mut *mut CfParams) -> CfStatus {
    guard(|| {
        let p = PhysicalParameterSet::load(Path::new(text(path, "path")?))?;
        p.validate()?;
        put(out, Box::into_raw(Box::new(CfParams(p))), "out")
    })
}

/// # Safety
/// `params` must be live; `name` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_params_get(params: *const CfParams, name: *const c_char, out: *mut f64) -> CfStatus {
    guard(|| {
        let v = borrow(params, "params")?.0.get(text(name, "name")?)?;
        put(out, v, "out")
    })
}

/// Sets a value and checks the whole set; on failure nothing changes.
///
/// # Safety
/// `params` must be live; `name` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cf_params_set(params: *mut CfParams, name: *const c_char, value: f64) -> CfStatus {
    guard(|| {
        let p = borrow_mut(params, "params")?;
        let mut next = p.0.clone();
        next.set(text(name, "name")?, value)?;
        next.validate()?;
        p.0 = next;
        Ok(())
    })
}

/// # Safety
/// `params` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_params_to_json(params: *const CfParams, out: *mut *mut c_char) -> CfStatus {
    guard(|| {
        let s = borrow(params, "params")?.0.to_json();
        put(out, owned_string(s), "out")
    })
}

/// # Safety
/// `params` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_params_free(params: *mut CfParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Capacity [Ah] the electrodes can hold over their usable stoichiometry.
///
/// # Safety
/// `params` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_theoretical_capacity(params: *const CfParams, out: *mut f64) -> CfStatus {
    guard(|| {
        let c = sim::theoretical_capacity(&borrow(params, "params")?.0)?;
        put(out, c, "out")
    })
}

/// CC-CV charge, rest and CC discharge at `c_rate`, between the cell's
/// voltage limits.
///
/// # Safety
/// `params` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_protocol_cccv(params: *const CfParams, c_rate: f64, out: *mut *mut CfProtocol) -> CfStatus {
    guard(|| {
        if !(c_rate.is_finite() && c_rate > 0.0) {
            return Err(Failure(CfStatus::ErrValidation, format!("c_rate must be positive, got {c_rate}")));
        }
        let p = task_protocol(&borrow(params, "params")?.0, c_rate)?;
        put(out, Box::into_raw(Box::new(CfProtocol(p))), "out")
    })
}

/// # Safety
/// `json` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_protocol_from_json(json: *const c_char, out: *mut *mut CfProtocol) -> CfStatus {
    guard(|| {
        let p = Protocol::from_json(text(json, "json")?).map_err(|e| Failure(CfStatus::ErrParse, e.to_string()))?;
        put(out, Box::into_raw(Box::new(CfProtocol(p))), "out")
    })
}

/// # Safety
/// `protocol` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_protocol_free(protocol: *mut CfProtocol) {
    if !protocol.is_null() {
        drop(Box::from_raw(protocol));
    }
}

/// Runs `protocol` from the parameter set's initial state. A run that stops
/// early still yields a trace; check [`cf_trace_event`].
///
/// # Safety
/// `params` and `protocol` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_simulate(params: *const CfParams, protocol: *const CfProtocol, out: *mut *mut CfTrace) -> CfStatus {
    guard(|| {
        let t = run_protocol(&borrow(params, "params")?.0, &borrow(protocol, "protocol")?.0, None, None)?;
        put(out, Box::into_raw(Box::new(CfTrace(t))), "out")
    })
}

/// Number of samples; 0 for a null trace.
///
/// # Safety
/// `trace` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_len(trace: *const CfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// Why the run ended, e.g. `completed` or `voltage_cutoff`.
///
/// # Safety
/// `trace` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_event(trace: *const CfTrace, out: *mut *mut c_char) -> CfStatus {
    guard(|| {
        let s = borrow(trace, "trace")?.0.event_label();
        put(out, owned_string(s), "out")
    })
}

/// Borrows one column. `*data` stays valid while the trace is alive.
///
/// # Safety
/// `trace` must be live; `data` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_column(
    trace: *const CfTrace,
    column: CfColumn,
    data: *mut *const f64,
    len: *mut usize,
) -> CfStatus {
    guard(|| {
        let t = &borrow(trace, "trace")?.0;
        let v = match column {
            CfColumn::Time => &t.time,
            CfColumn::Voltage => &t.voltage,
            CfColumn::Current => &t.current,
            CfColumn::Capacity => &t.capacity,
        };
        if len.is_null() {
            return Err(null("len"));
        }
        put(data, v.as_ptr(), "data")?;
        len.write(v.len());
        Ok(())
    })
}

/// # Safety
/// `trace` must be live; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_write_csv(trace: *const CfTrace, path: *const c_char) -> CfStatus {
    guard(|| {
        let t = &borrow(trace, "trace")?.0;
        let path = text(path, "path")?;
        t.save_csv(Path::new(path)).map_err(|e| Failure(CfStatus::ErrIo, e.to_string()))
    })
}

/// Reads a trace written by [`cf_trace_write_csv`] or the command line.
///
/// # Safety
/// `path` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_load_csv(path: *const c_char, out: *mut *mut CfTrace) -> CfStatus {
    guard(|| {
        let path = text(path, "path")?;
        let t = SimulationTrace::load_csv(Path::new(path)).map_err(|e| Failure(CfStatus::ErrIo, e.to_string()))?;
        put(out, Box::into_raw(Box::new(CfTrace(t))), "out")
    })
}

/// # Safety
/// `trace` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_trace_free(trace: *mut CfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Scores `sim` against `target` under the default loss and returns the
/// feedback package as JSON.
///
/// # Safety
/// All handles live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_feedback_json(
    sim: *const CfTrace,
    target: *const CfTrace,
    protocol: *const CfProtocol,
    out: *mut *mut c_char,
) -> CfStatus {
    guard(|| {
        let fb = build_feedback(
            &borrow(sim, "sim")?.0,
            &borrow(target, "target")?.0,
            &borrow(protocol, "protocol")?.0,
            &LossConfig::default(),
            1,
            None,
        )
        .map_err(|e| Failure(CfStatus::ErrValidation, e.to_string()))?;
        put(out, owned_string(fb.to_json()), "out")
    })
}

/// Mean absolute percentage error of `sim` against `obs`, in percent.
/// Samples near zero are masked; if every sample is masked the result is
/// NaN.
///
/// # Safety
/// `sim` and `obs` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_mape(sim: *const f64, obs: *const f64, n: usize, out: *mut f64) -> CfStatus {
    guard(|| {
        if sim.is_null() || obs.is_null() {
            return Err(null("series"));
        }
        let (s, o) = (std::slice::from_raw_parts(sim, n), std::slice::from_raw_parts(obs, n));
        let v = metrics::mape(s, o).map_err(|e| Failure(CfStatus::ErrValidation, e.to_string()))?;
        put(out, v.unwrap_or(f64::NAN), "out")
    })
}
