//! C ABI over `nlcf-core`.
//!
//! Kernels, shapes and flow traces are opaque handles created from JSON
//! specs and released with their `_free` function. Every fallible call
//! returns an [`NlcfStatus`]; on failure the message is available from
//! [`nlcf_last_error`] until the next failing call on the same thread.

use nlcf_core::cli;
use nlcf_core::curvature::{curvature_pv, PvOptions};
use nlcf_core::flow::{evolve_set, FlowParams, SetTrace};
use nlcf_core::geometry::{PlanarSet, ShapeSpec, Window};
use nlcf_core::kernel::{self, make_kernel, Kernel, KernelSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Parameter = 4,
    Numerical = 5,
    OutOfRange = 6,
    /// The scenario ran and missed its acceptance thresholds.
    Failed = 7,
}

/// Interaction kernel.
pub struct NlcfKernel {
    inner: Kernel,
}

/// Planar set.
pub struct NlcfShape {
    inner: PlanarSet,
}

/// Recorded evolution of a set.
pub struct NlcfTrace {
    inner: SetTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(code: NlcfStatus, msg: impl ToString) -> NlcfStatus {
    let c = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
    code
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, NlcfStatus> {
    if p.is_null() {
        return Err(fail(NlcfStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(NlcfStatus::InvalidUtf8, e))
}

macro_rules! nonnull {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(NlcfStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failure on this thread; empty if none.
///
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn nlcf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a kernel from a JSON kernel spec, e.g. `{"type":"fractional","s":0.5}`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer
/// to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nlcf_kernel_from_json(json: *const c_char, out: *mut *mut NlcfKernel) -> NlcfStatus {
    nonnull!(out);
    let text = match read_str(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let spec: KernelSpec = match serde_json::from_str(text) {
        Ok(s) => s,
        Err(e) => return fail(NlcfStatus::Parse, e),
    };
    match make_kernel(&spec) {
        Ok(k) => {
            *out = Box::into_raw(Box::new(NlcfKernel { inner: k }));
            NlcfStatus::Ok
        }
        Err(e) => fail(NlcfStatus::Parameter, e),
    }
}

/// # Safety
/// `k` must be null or a handle from [`nlcf_kernel_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlcf_kernel_free(k: *mut NlcfKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Curvature `c(R)` of the ball of radius `r`.
///
/// # Safety
/// `k` must be a live kernel handle and `out` a valid `double` pointer.
#[no_mangle]
pub unsafe extern "C" fn nlcf_ball_curvature(k: *const NlcfKernel, r: f64, out: *mut f64) -> NlcfStatus {
    nonnull!(k, out);
    if !(r > 0.0) {
        return fail(NlcfStatus::Parameter, "radius must be positive");
    }
    *out = kernel::ball_curvature(&(*k).inner, r);
    NlcfStatus::Ok
}

/// Tail mass `Ψ(r)`.
///
/// # Safety
/// `k` must be a live kernel handle and `out` a valid `double` pointer.
#[no_mangle]
pub unsafe extern "C" fn nlcf_psi(k: *const NlcfKernel, r: f64, out: *mut f64) -> NlcfStatus {
    nonnull!(k, out);
    if !(r > 0.0) {
        return fail(NlcfStatus::Parameter, "radius must be positive");
    }
    *out = kernel::psi(&(*k).inner, r);
    NlcfStatus::Ok
}

/// Build a shape from a JSON shape spec, e.g. `{"shape":"ball","radius":1}`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer
/// to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nlcf_shape_from_json(json: *const c_char, out: *mut *mut NlcfShape) -> NlcfStatus {
    nonnull!(out);
    let text = match read_str(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let spec: ShapeSpec = match serde_json::from_str(text) {
        Ok(s) => s,
        Err(e) => return fail(NlcfStatus::Parse, e),
    };
    match spec.build() {
        Ok(s) => {
            *out = Box::into_raw(Box::new(NlcfShape { inner: s }));
            NlcfStatus::Ok
        }
        Err(e) => fail(NlcfStatus::Parameter, e),
    }
}

/// # Safety
/// `s` must be null or a handle from [`nlcf_shape_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlcf_shape_free(s: *mut NlcfShape) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Signed distance, positive inside.
///
/// # Safety
/// `s` must be a live shape handle and `out` a valid `double` pointer.
#[no_mangle]
pub unsafe extern "C" fn nlcf_signed_distance(s: *const NlcfShape, x: f64, y: f64, out: *mut f64) -> NlcfStatus {
    nonnull!(s, out);
    *out = (*s).inner.signed_distance([x, y]);
    NlcfStatus::Ok
}

/// Principal-value curvature at a boundary point with its error bar.
///
/// # Safety
/// `s` and `k` must be live handles; `value` and `bar` valid `double` pointers.
#[no_mangle]
pub unsafe extern "C" fn nlcf_curvature(
    s: *const NlcfShape,
    k: *const NlcfKernel,
    x: f64,
    y: f64,
    value: *mut f64,
    bar: *mut f64,
) -> NlcfStatus {
    nonnull!(s, k, value, bar);
    match curvature_pv(&(*s).inner, [x, y], &(*k).inner, &PvOptions::default()) {
        Ok(c) => {
            *value = c.value;
            *bar = c.bar();
            NlcfStatus::Ok
        }
        Err(e) => fail(NlcfStatus::Numerical, e),
    }
}

/// Level-set evolution of `s` on `[-half_width, half_width]²` with `n`
/// cells per side, recording `frames` frames after the initial one.
///
/// # Safety
/// `s` and `k` must be live handles and `out` a valid pointer to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nlcf_evolve(
    s: *const NlcfShape,
    k: *const NlcfKernel,
    t_end: f64,
    half_width: f64,
    n: usize,
    frames: usize,
    out: *mut *mut NlcfTrace,
) -> NlcfStatus {
    nonnull!(s, k, out);
    if !(t_end > 0.0 && half_width > 0.0 && n >= 32 && frames >= 1) {
        return fail(NlcfStatus::Parameter, "need T > 0, half_width > 0, n >= 32, frames >= 1");
    }
    let p = FlowParams { window: Window::square(half_width), n, frames, ..Default::default() };
    match evolve_set(&(*s).inner, &(*k).inner, t_end, p) {
        Ok(tr) => {
            *out = Box::into_raw(Box::new(NlcfTrace { inner: tr }));
            NlcfStatus::Ok
        }
        Err(e) => fail(NlcfStatus::Numerical, e),
    }
}

/// # Safety
/// `t` must be null or a handle from [`nlcf_evolve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlcf_trace_free(t: *mut NlcfTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of recorded frames, the initial one included.
///
/// # Safety
/// `t` must be a live trace handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nlcf_trace_len(t: *const NlcfTrace, out: *mut usize) -> NlcfStatus {
    nonnull!(t, out);
    *out = (*t).inner.times.len();
    NlcfStatus::Ok
}

/// Time and area of frame `i`.
///
/// # Safety
/// `t` must be a live trace handle; `time` and `area` valid `double` pointers.
#[no_mangle]
pub unsafe extern "C" fn nlcf_trace_frame(t: *const NlcfTrace, i: usize, time: *mut f64, area: *mut f64) -> NlcfStatus {
    nonnull!(t, time, area);
    let tr = &(*t).inner;
    if i >= tr.times.len() {
        return fail(NlcfStatus::OutOfRange, format!("frame {i} of {}", tr.times.len()));
    }
    *time = tr.times[i];
    *area = tr.areas[i];
    NlcfStatus::Ok
}

/// Extrapolated extinction time; `OutOfRange` if the set did not vanish.
///
/// # Safety
/// `t` must be a live trace handle and `out` a valid `double` pointer.
#[no_mangle]
pub unsafe extern "C" fn nlcf_trace_extinction_time(t: *const NlcfTrace, out: *mut f64) -> NlcfStatus {
    nonnull!(t, out);
    match (*t).inner.extinction_time {
        Some(v) => {
            *out = v;
            NlcfStatus::Ok
        }
        None => fail(NlcfStatus::OutOfRange, "set did not vanish"),
    }
}

/// Run a scenario config (the `nlcf run` JSON) and return its summary as
/// a JSON string to be released with [`nlcf_string_free`]. The summary is
/// returned with status `Failed` when the scenario missed its thresholds.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `summary` a valid
/// pointer to writable storage for one string pointer.
#[no_mangle]
pub unsafe extern "C" fn nlcf_run_scenario(json: *const c_char, summary: *mut *mut c_char) -> NlcfStatus {
    nonnull!(summary);
    *summary = ptr::null_mut();
    let text = match read_str(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let cfg = match cli::parse_config(text) {
        Ok(c) => c,
        Err(e) => return fail(NlcfStatus::Parse, e),
    };
    match cli::run(&cfg, cli::Overrides::default()) {
        Ok(o) => {
            let s = CString::new(o.summary.to_string()).unwrap_or_default();
            *summary = s.into_raw();
            if o.pass {
                NlcfStatus::Ok
            } else {
                NlcfStatus::Failed
            }
        }
        Err(e) if e.exit_code() == 2 => fail(NlcfStatus::Parameter, e),
        Err(e) => fail(NlcfStatus::Numerical, e),
    }
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlcf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
