//! C interface to the allocation engine, the loop analyzer and the simulator.
//!
//! Every function returns a [`WpStatus`]. On failure a message is kept per
//! thread and can be read with [`wp_last_error`]. Strings handed out by the
//! library must be released with [`wp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use waypart::apportion::{write_log_csv, Admission, AllocError, AllocationDecision, Allocator};
use waypart::formats::{
    attributes_to_toml, nest_file_attributes, parse_config, parse_nest_file, read_text, FormatError,
};
use waypart::loop_model::{FootprintValue, ReuseClass};
use waypart::metrics::{summarize, summary_to_toml};
use waypart::sensitivity::{PhaseTiming, ProbeAttributes};
use waypart::sim::{load_mix, run_mix, Policy, SimError};
use waypart::SystemConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Schema = 5,
    Config = 6,
    AdmissionRejected = 7,
    NotPlaced = 8,
    AlreadyPlaced = 9,
    Allocation = 10,
    Simulation = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpReuse {
    Stream = 0,
    Reuse = 1,
}

/// Probe payload for one phase.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WpPhase {
    /// Optional, may be null.
    pub phase_id: *const c_char,
    pub footprint_bytes: u64,
    pub reuse: WpReuse,
    pub predicted_ns: f64,
    pub alpha: f64,
    pub max_ways: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WpDecision {
    pub pid: u32,
    pub socket: u32,
    pub clos: u32,
    pub bitmask: u64,
    pub req_ways: u32,
    pub allocated_ways: u32,
    pub satisfied: bool,
    pub changed: bool,
}

/// Opaque allocator handle.
pub struct WpAllocator {
    inner: Allocator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(WpStatus, String);

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        let status = match e {
            FormatError::Io { .. } => WpStatus::Io,
            _ => WpStatus::Schema,
        };
        Failure(status, e.to_string())
    }
}

impl From<AllocError> for Failure {
    fn from(e: AllocError) -> Self {
        let status = match e {
            AllocError::AdmissionRejected(_) => WpStatus::AdmissionRejected,
            AllocError::NotPlaced(_) => WpStatus::NotPlaced,
            AllocError::AlreadyPlaced(_) => WpStatus::AlreadyPlaced,
            _ => WpStatus::Allocation,
        };
        Failure(status, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::Config(_) => WpStatus::Config,
            _ => WpStatus::Simulation,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            WpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(WpStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(WpStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn config_arg(p: *const c_char) -> Result<SystemConfig, Failure> {
    let config = match opt_str_arg(p, "config_toml")? {
        Some(text) => parse_config(text, "config", &SystemConfig::default())?,
        None => SystemConfig::default(),
    };
    config.validate().map_err(|e| Failure(WpStatus::Config, e.to_string()))?;
    Ok(config)
}

unsafe fn out_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    let c = CString::new(text).map_err(|_| Failure(WpStatus::InvalidArgument, "output holds a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn phase_arg(p: *const WpPhase, pid: u32, config: &SystemConfig) -> Result<ProbeAttributes, Failure> {
    let p = p.as_ref().ok_or_else(|| null("phase"))?;
    let phase_id = opt_str_arg(p.phase_id, "phase.phase_id")?.map_or_else(|| format!("pid{pid}"), str::to_string);
    if !p.predicted_ns.is_finite() || p.predicted_ns < 0.0 || !p.alpha.is_finite() || p.alpha < 0.0 {
        return Err(Failure(
            WpStatus::InvalidArgument,
            "phase timing and alpha must be finite and non-negative".into(),
        ));
    }
    if p.max_ways == 0 || p.max_ways > config.ways_per_socket {
        return Err(Failure(WpStatus::InvalidArgument, format!("phase max_ways {} out of range", p.max_ways)));
    }
    Ok(ProbeAttributes {
        phase_id,
        footprint: FootprintValue::from_array_bytes([p.footprint_bytes as u128], config.line_size, true),
        reuse: match p.reuse {
            WpReuse::Stream => ReuseClass::Stream,
            WpReuse::Reuse => ReuseClass::Reuse,
        },
        timing: PhaseTiming::Fixed { ns: p.predicted_ns },
        alpha: p.alpha,
        max_ways: p.max_ways,
    })
}

unsafe fn write_decision(out: *mut WpDecision, d: &AllocationDecision) {
    if let Some(out) = out.as_mut() {
        *out = WpDecision {
            pid: d.pid,
            socket: d.socket,
            clos: d.clos,
            bitmask: d.bitmask.bits(),
            req_ways: d.req_ways,
            allocated_ways: d.allocated_ways,
            satisfied: d.satisfied,
            changed: d.changed,
        };
    }
}

unsafe fn handle<'a>(a: *mut WpAllocator) -> Result<&'a mut Allocator, Failure> {
    a.as_mut().map(|a| &mut a.inner).ok_or_else(|| null("allocator"))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn wp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an allocator. `config_toml` may be null for defaults; otherwise it
/// is a versioned config document.
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_new(config_toml: *const c_char, out: *mut *mut WpAllocator) -> WpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = config_arg(config_toml)?;
        let inner = Allocator::new(config).map_err(|e| Failure(WpStatus::Config, e.to_string()))?;
        *out = Box::into_raw(Box::new(WpAllocator { inner }));
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a handle from [`wp_allocator_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_free(a: *mut WpAllocator) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Initial placement of a process. `out` may be null.
///
/// # Safety
/// `a` must be a live handle and `phase` must point to a valid [`WpPhase`].
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_admit(
    a: *mut WpAllocator,
    now_ns: f64,
    pid: u32,
    alpha: f64,
    max_ways: u32,
    phase: *const WpPhase,
    out: *mut WpDecision,
) -> WpStatus {
    guard(|| {
        let alloc = handle(a)?;
        let phase = phase_arg(phase, pid, alloc.config())?;
        if !alpha.is_finite() || alpha < 0.0 || max_ways == 0 || max_ways > alloc.config().ways_per_socket {
            return Err(Failure(WpStatus::InvalidArgument, "alpha or max_ways out of range".into()));
        }
        let d = alloc.ipca(now_ns, Admission { pid, alpha, max_ways, phase })?;
        write_decision(out, &d);
        Ok(())
    })
}

/// Re-apportions a placed process entering a new phase. `out` may be null.
///
/// # Safety
/// `a` must be a live handle and `phase` must point to a valid [`WpPhase`].
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_phase_change(
    a: *mut WpAllocator,
    now_ns: f64,
    pid: u32,
    phase: *const WpPhase,
    out: *mut WpDecision,
) -> WpStatus {
    guard(|| {
        let alloc = handle(a)?;
        let phase = phase_arg(phase, pid, alloc.config())?;
        let d = alloc.pcca(now_ns, pid, phase)?;
        write_decision(out, &d);
        Ok(())
    })
}

/// # Safety
/// `a` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_release(a: *mut WpAllocator, now_ns: f64, pid: u32) -> WpStatus {
    guard(|| {
        handle(a)?.release(now_ns, pid)?;
        Ok(())
    })
}

/// Current way mask and socket of a placed process.
///
/// # Safety
/// `a` must be a live handle; `bits` and `socket` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_bitmask(
    a: *mut WpAllocator,
    pid: u32,
    bits: *mut u64,
    socket: *mut u32,
) -> WpStatus {
    guard(|| {
        let alloc = handle(a)?;
        if bits.is_null() || socket.is_null() {
            return Err(null("out"));
        }
        let p = alloc.process(pid).ok_or(AllocError::NotPlaced(pid))?;
        *socket = p.socket;
        *bits = alloc.mask_of(pid).ok_or(AllocError::NotPlaced(pid))?.bits();
        Ok(())
    })
}

/// Allocation log as versioned CSV. Free the result with [`wp_string_free`].
///
/// # Safety
/// `a` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wp_allocator_log_csv(a: *mut WpAllocator, out: *mut *mut c_char) -> WpStatus {
    guard(|| {
        let alloc = handle(a)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut buf = Vec::new();
        write_log_csv(&mut buf, alloc.log())?;
        out_string(out, String::from_utf8_lossy(&buf).into_owned())
    })
}

/// Simulates a mix file under `policy` ("comcas", "unpartitioned",
/// "maxways", "reactive") and returns the run summary as TOML. The interval
/// applies to the reactive policy; pass 0 for the default.
///
/// # Safety
/// `path` and `policy` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wp_simulate_mix_file(
    path: *const c_char,
    policy: *const c_char,
    interval_ms: f64,
    out: *mut *mut c_char,
) -> WpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let policy_name = str_arg(policy, "policy")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let interval_ns = if interval_ms > 0.0 { interval_ms * 1e6 } else { Policy::DEFAULT_INTERVAL_NS };
        let policy = Policy::parse(policy_name, interval_ns)
            .ok_or_else(|| Failure(WpStatus::InvalidArgument, format!("unknown policy `{policy_name}`")))?;
        let spec = load_mix(Path::new(path), &SystemConfig::default())?;
        let report = run_mix(&spec, policy, &spec.config)?;
        let baseline = run_mix(&spec, Policy::Unpartitioned, &spec.config)?;
        let summary = summarize(&report, &baseline).map_err(|e| Failure(WpStatus::Simulation, e.to_string()))?;
        out_string(out, summary_to_toml(&summary))
    })
}

/// Analyzes a loop-nest file and returns its probe attributes as TOML.
/// `config_toml` may be null.
///
/// # Safety
/// `path` must be NUL-terminated, `config_toml` null or NUL-terminated, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wp_analyze_nest_file(
    path: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut c_char,
) -> WpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = config_arg(config_toml)?;
        let text = read_text(Path::new(path))?;
        let file = parse_nest_file(&text, path)?;
        let attrs = nest_file_attributes(&file, path, &config)?;
        out_string(out, attributes_to_toml(&attrs))
    })
}
