//! C interface to the periscat solver.
//!
//! Configurations and solutions are opaque heap handles. Every function
//! returns a [`PsStatus`]; on failure the message is available from
//! [`ps_last_error_message`] on the same thread until the next call.

use periscat::contour::wood_breakpoints;
use periscat::harness::{CaseSetup, ExperimentConfig};
use periscat::solver::{scattered_field, BlochSolution};
use periscat::special_functions::hankel0_first_kind;
use periscat::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Geometry = 4,
    Domain = 5,
    Solver = 6,
    Shape = 7,
    Io = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PsComplex {
    pub re: f64,
    pub im: f64,
}

/// Parsed experiment configuration.
pub struct PsConfig {
    inner: ExperimentConfig,
}

/// Solved Bloch system for one configuration.
pub struct PsSolution {
    inner: BlochSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::Config { .. } => PsStatus::Config,
        Error::Geometry(_) | Error::Mesh(_) => PsStatus::Geometry,
        Error::Domain(_) | Error::Regime(_) | Error::Precondition(_) => PsStatus::Domain,
        Error::Singular { .. } | Error::NonConvergence { .. } => PsStatus::Solver,
        Error::Shape(_) => PsStatus::Shape,
        Error::Io(_) => PsStatus::Io,
    }
}

struct Fail(PsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error message and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PsStatus::Panic
        }
    }
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a JSON configuration.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_config_from_json(json: *const c_char, out: *mut *mut PsConfig) -> PsStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(PsStatus::InvalidUtf8, e.to_string()))?;
        let inner = ExperimentConfig::from_json(text)?;
        *out = Box::into_raw(Box::new(PsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`ps_config_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ps_config_free(cfg: *mut PsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Assembles and solves the configuration at its own N.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_solve(cfg: *const PsConfig, out: *mut *mut PsSolution) -> PsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let setup = CaseSetup::new(&cfg.inner)?;
        let inner = setup.solve(&cfg.inner, cfg.inner.n)?;
        *out = Box::into_raw(Box::new(PsSolution { inner }));
        Ok(())
    })
}

/// # Safety
/// `sol` must come from [`ps_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ps_solution_free(sol: *mut PsSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of roof nodes.
///
/// # Safety
/// `sol` must be a live solution handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_solution_roof_len(sol: *const PsSolution, len: *mut usize) -> PsStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("sol"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        *len = sol.inner.mesh().top_nodes().len();
        Ok(())
    })
}

/// Scattered field at the roof nodes. `x1` may be null; otherwise it
/// receives the node abscissae. Both buffers hold `len` entries, which must
/// equal [`ps_solution_roof_len`].
///
/// # Safety
/// Buffers must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ps_solution_roof(sol: *const PsSolution, x1: *mut f64, values: *mut PsComplex, len: usize) -> PsStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("sol"))?;
        let trace = sol.inner.roof_scattered()?;
        if len != trace.len() {
            return Err(Error::Shape(format!("buffer of length {len}, roof has {} nodes", trace.len())).into());
        }
        let vals = out_slice(values, len, "values")?;
        for (v, t) in vals.iter_mut().zip(&trace) {
            *v = PsComplex { re: t.re, im: t.im };
        }
        if !x1.is_null() {
            let xs = out_slice(x1, len, "x1")?;
            let mesh = sol.inner.mesh();
            for (x, &n) in xs.iter_mut().zip(&mesh.top_nodes()) {
                *x = mesh.nodes[n][0];
            }
        }
        Ok(())
    })
}

/// Scattered field at `n` points `(points[2i], points[2i+1])` of the
/// reference cell shifted by `shift` periods.
///
/// # Safety
/// `points` must hold `2n` values and `values` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn ps_scattered_field(
    sol: *const PsSolution,
    points: *const f64,
    n: usize,
    shift: i64,
    values: *mut PsComplex,
) -> PsStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("sol"))?;
        if n == 0 {
            return Ok(());
        }
        if points.is_null() {
            return Err(null("points"));
        }
        let flat = std::slice::from_raw_parts(points, 2 * n);
        let pts: Vec<[f64; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let u = scattered_field(&sol.inner, &pts, shift)?;
        for (v, t) in out_slice(values, n, "values")?.iter_mut().zip(&u) {
            *v = PsComplex { re: t.re, im: t.im };
        }
        Ok(())
    })
}

/// `H₀⁽¹⁾(x)` for `x > 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_hankel0(x: f64, out: *mut PsComplex) -> PsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let h = hankel0_first_kind(x)?;
        *out = PsComplex { re: h.re, im: h.im };
        Ok(())
    })
}

/// Wood-anomaly breakpoints of the shifted dual cell. Writes up to `cap`
/// points and the full count to `len`; `kappa` may be null.
///
/// # Safety
/// `points` must have room for `cap` values; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_wood_breakpoints(
    k: f64,
    period: f64,
    points: *mut f64,
    cap: usize,
    len: *mut usize,
    kappa: *mut f64,
) -> PsStatus {
    guard(|| {
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let b = wood_breakpoints(k, period)?;
        *len = b.points.len();
        let m = cap.min(b.points.len());
        out_slice(points, m, "points")?.copy_from_slice(&b.points[..m]);
        if let Some(kp) = kappa.as_mut() {
            *kp = b.kappa;
        }
        Ok(())
    })
}
