//! C interface to `starfd-core`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_run` function and released by the matching `*_free`. Functions
//! return a [`StarfdStatus`]; on failure [`starfd_last_error`] describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use starfd_core::experiments::{self, PowerAxis, Table};
use starfd_core::protocols::{Optimized, Scheme};
use starfd_core::{validate_config, Error, SystemConfig};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarfdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    UnknownScheme = 4,
    Domain = 5,
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// System configuration under construction.
pub struct StarfdConfig(SystemConfig);

/// Outcome of one optimized cell.
pub struct StarfdResult(Optimized);

/// An experiment table.
pub struct StarfdTable(Table);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> StarfdStatus {
    match e {
        Error::Config { .. } | Error::Parse { .. } => StarfdStatus::Config,
        Error::UnknownScheme(_) => StarfdStatus::UnknownScheme,
        Error::Domain(_) | Error::Shape(_) => StarfdStatus::Domain,
        Error::Kernel(_) => StarfdStatus::Numerical,
        Error::Io(_) => StarfdStatus::Io,
    }
}

struct Fail(StarfdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> StarfdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            StarfdStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            StarfdStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(StarfdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(StarfdStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn object<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(StarfdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn output<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(StarfdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(StarfdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn schemes(list: &str) -> Result<Vec<Scheme>, Fail> {
    Ok(list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_, Error>>()?)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn starfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn starfd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Allocates a configuration holding the defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn starfd_config_new(out: *mut *mut StarfdConfig) -> StarfdStatus {
    guard(|| {
        let slot = output(out, "out")?;
        *slot = Box::into_raw(Box::new(StarfdConfig(SystemConfig::default())));
        Ok(())
    })
}

/// Reads a `key = value` file over the defaults.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starfd_config_from_file(path: *const c_char, out: *mut *mut StarfdConfig) -> StarfdStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let cfg = SystemConfig::from_file(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(StarfdConfig(cfg)));
        Ok(())
    })
}

/// Sets one configuration key using the file syntax, e.g. `("m", "16")`.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn starfd_config_set(
    cfg: *mut StarfdConfig,
    key: *const c_char,
    value: *const c_char,
) -> StarfdStatus {
    guard(|| {
        let c = output(cfg, "cfg")?;
        c.0.set_key(text(key, "key")?, text(value, "value")?)?;
        Ok(())
    })
}

/// Checks every invariant of the configuration.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn starfd_config_validate(cfg: *const StarfdConfig) -> StarfdStatus {
    guard(|| {
        validate_config(object(cfg, "cfg")?.0.clone())?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn starfd_config_free(cfg: *mut StarfdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Places the users, draws the channels for `seed_index` and optimizes
/// `scheme` exactly as one cell of an experiment.
///
/// # Safety
/// `cfg` must come from this library; `scheme` must be NUL-terminated;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starfd_run_cell(
    cfg: *const StarfdConfig,
    scheme: *const c_char,
    seed_index: usize,
    scatter_users: bool,
    out: *mut *mut StarfdResult,
) -> StarfdStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let c = validate_config(object(cfg, "cfg")?.0.clone())?;
        let s: Scheme = text(scheme, "scheme")?.parse()?;
        let o = experiments::run_cell(&c, s, seed_index, scatter_users)?;
        *slot = Box::into_raw(Box::new(StarfdResult(o)));
        Ok(())
    })
}

/// Weighted sum rate, downlink sum and uplink sum in bit/s/Hz.
///
/// # Safety
/// `res` must come from this library; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn starfd_result_rates(
    res: *const StarfdResult,
    wsr: *mut f64,
    dl_sum: *mut f64,
    ul_sum: *mut f64,
) -> StarfdStatus {
    guard(|| {
        let r = &object(res, "res")?.0.report;
        for (p, v) in [(wsr, r.wsr), (dl_sum, r.dl_sum), (ul_sum, r.ul_sum)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Outer iterations run and whether any solver stage hit its cap.
///
/// # Safety
/// `res` must come from this library; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn starfd_result_status(
    res: *const StarfdResult,
    outer_iterations: *mut usize,
    capped: *mut bool,
) -> StarfdStatus {
    guard(|| {
        let o = &object(res, "res")?.0;
        if let Some(p) = outer_iterations.as_mut() {
            *p = o.outer_iterations;
        }
        if let Some(p) = capped.as_mut() {
            *p = o.caps.any();
        }
        Ok(())
    })
}

/// Copies the outer-iteration WSR trace into `buf`.
///
/// `*len` holds the capacity on entry and the trace length on return; with a
/// short buffer nothing is copied and [`StarfdStatus::BufferTooSmall`] is
/// returned.
///
/// # Safety
/// `res` must come from this library; `buf` must hold `*len` doubles.
#[no_mangle]
pub unsafe extern "C" fn starfd_result_trace(res: *const StarfdResult, buf: *mut f64, len: *mut usize) -> StarfdStatus {
    guard(|| {
        let trace = object(res, "res")?.0.trace_values();
        let cap = output(len, "len")?;
        let room = *cap;
        *cap = trace.len();
        if room < trace.len() {
            return Err(Fail(StarfdStatus::BufferTooSmall, format!("trace needs {} entries", trace.len())));
        }
        if !trace.is_empty() {
            if buf.is_null() {
                return Err(Fail(StarfdStatus::NullPointer, "buf is null".into()));
            }
            ptr::copy_nonoverlapping(trace.as_ptr(), buf, trace.len());
        }
        Ok(())
    })
}

/// # Safety
/// `res` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn starfd_result_free(res: *mut StarfdResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

unsafe fn table_out(
    cfg: *const StarfdConfig,
    scheme_list: *const c_char,
    out: *mut *mut StarfdTable,
    run: impl FnOnce(&starfd_core::ValidatedConfig, &[Scheme]) -> starfd_core::Result<Table>,
) -> StarfdStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let c = validate_config(object(cfg, "cfg")?.0.clone())?;
        let s = schemes(text(scheme_list, "schemes")?)?;
        *slot = Box::into_raw(Box::new(StarfdTable(run(&c, &s)?)));
        Ok(())
    })
}

/// Convergence traces; `schemes` is a comma-separated list such as `"es,ms"`.
///
/// # Safety
/// `cfg` must come from this library; `schemes` must be NUL-terminated;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starfd_run_convergence(
    cfg: *const StarfdConfig,
    schemes: *const c_char,
    seeds: usize,
    out: *mut *mut StarfdTable,
) -> StarfdStatus {
    table_out(cfg, schemes, out, |c, s| experiments::run_convergence(c, s, seeds))
}

/// WSR against the number of surface elements.
///
/// # Safety
/// As [`starfd_run_convergence`]; `m_values` must hold `count` entries.
#[no_mangle]
pub unsafe extern "C" fn starfd_sweep_elements(
    cfg: *const StarfdConfig,
    schemes: *const c_char,
    m_values: *const usize,
    count: usize,
    seeds: usize,
    out: *mut *mut StarfdTable,
) -> StarfdStatus {
    let values = match slice(m_values, count, "m_values") {
        Ok(v) => v,
        Err(f) => return guard(|| Err(f)),
    };
    table_out(cfg, schemes, out, |c, s| experiments::sweep_elements(c, values, s, seeds))
}

/// WSR against the surface position `(x, 0)`.
///
/// # Safety
/// As [`starfd_run_convergence`]; `x_values` must hold `count` entries.
#[no_mangle]
pub unsafe extern "C" fn starfd_sweep_location(
    cfg: *const StarfdConfig,
    schemes: *const c_char,
    x_values: *const f64,
    count: usize,
    seeds: usize,
    out: *mut *mut StarfdTable,
) -> StarfdStatus {
    let values = match slice(x_values, count, "x_values") {
        Ok(v) => v,
        Err(f) => return guard(|| Err(f)),
    };
    table_out(cfg, schemes, out, |c, s| experiments::sweep_location(c, values, s, seeds))
}

/// WSR against a power budget in dBm; `uplink` selects the user budget
/// instead of the BS budget.
///
/// # Safety
/// As [`starfd_run_convergence`]; `dbm_values` must hold `count` entries.
#[no_mangle]
pub unsafe extern "C" fn starfd_sweep_power(
    cfg: *const StarfdConfig,
    schemes: *const c_char,
    uplink: bool,
    dbm_values: *const f64,
    count: usize,
    seeds: usize,
    out: *mut *mut StarfdTable,
) -> StarfdStatus {
    let values = match slice(dbm_values, count, "dbm_values") {
        Ok(v) => v,
        Err(f) => return guard(|| Err(f)),
    };
    let axis = if uplink { PowerAxis::Ul } else { PowerAxis::Bs };
    table_out(cfg, schemes, out, |c, s| experiments::sweep_power(c, axis, values, s, seeds))
}

/// Row, capped-row and error-row counts of a table.
///
/// # Safety
/// `table` must come from this library; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn starfd_table_counts(
    table: *const StarfdTable,
    rows: *mut usize,
    capped: *mut usize,
    errors: *mut usize,
) -> StarfdStatus {
    guard(|| {
        let t = &object(table, "table")?.0;
        for (p, v) in [(rows, t.rows.len()), (capped, t.capped), (errors, t.errors)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// The table as CSV text; release it with [`starfd_string_free`].
///
/// # Safety
/// `table` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn starfd_table_csv(table: *const StarfdTable, out: *mut *mut c_char) -> StarfdStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let csv = object(table, "table")?.0.to_csv();
        *slot = CString::new(csv).map_err(|_| Fail(StarfdStatus::Numerical, "CSV contains NUL".into()))?.into_raw();
        Ok(())
    })
}

/// Writes the table as CSV to `path`.
///
/// # Safety
/// `table` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn starfd_table_write(table: *const StarfdTable, path: *const c_char) -> StarfdStatus {
    guard(|| {
        let t = object(table, "table")?;
        t.0.write(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `table` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn starfd_table_free(table: *mut StarfdTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// # Safety
/// `s` must come from [`starfd_table_csv`] or be null.
#[no_mangle]
pub unsafe extern "C" fn starfd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_lists() {
        assert_eq!(schemes("es, ms,,ts").ok().unwrap(), [Scheme::Es, Scheme::Ms, Scheme::Ts]);
        assert!(schemes("").ok().unwrap().is_empty());
        assert!(matches!(schemes("es,nope"), Err(Fail(StarfdStatus::UnknownScheme, _))));
    }

    #[test]
    fn panics_become_a_status() {
        assert_eq!(guard(|| panic!("boom")), StarfdStatus::Panic);
        let msg = unsafe { CStr::from_ptr(starfd_last_error()) }.to_str().unwrap().to_owned();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), StarfdStatus::Ok);
    }
}
