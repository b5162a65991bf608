//! C ABI over the remodel engine.
//!
//! Every function returns an `i32` status (`REMODEL_OK` on success). On
//! failure the message is available from [`remodel_last_error`] until the
//! next call on the same thread. Strings handed out by the library are
//! JSON and must be released with [`remodel_string_free`]; engines with
//! [`remodel_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_complex::Complex64;
use remodel::cli::{self, CacheStatus};
use remodel::curve::ModuliPoint;
use remodel::open::{open_invariant, open_points};
use remodel::recursion::{Engine, RecursionConfig};
use remodel::Error;

pub const REMODEL_OK: i32 = 0;
/// A required pointer argument was null or a string was not UTF-8.
pub const REMODEL_ERR_ARGUMENT: i32 = 1;
/// Invalid configuration or request.
pub const REMODEL_ERR_CONFIG: i32 = 2;
/// Degenerate input: singular fiber, pole, collision.
pub const REMODEL_ERR_DEGENERATE: i32 = 3;
/// Numerical failure: truncation, convergence, ε-degree.
pub const REMODEL_ERR_NUMERIC: i32 = 4;
/// A panic was caught at the boundary.
pub const REMODEL_ERR_PANIC: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Opaque engine handle: one modular parameter and its memoized forms.
pub struct RemodelEngine {
    engine: Engine,
}

enum Failure {
    Argument(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => REMODEL_OK,
        Ok(Err(Failure::Argument(m))) => {
            set_error(&m);
            REMODEL_ERR_ARGUMENT
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            match e.exit_code() {
                2 => REMODEL_ERR_CONFIG,
                3 => REMODEL_ERR_DEGENERATE,
                _ => REMODEL_ERR_NUMERIC,
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            REMODEL_ERR_PANIC
        }
    }
}

fn engine_ref<'a>(e: *const RemodelEngine) -> Result<&'a RemodelEngine, Failure> {
    // SAFETY: non-null handles come from remodel_engine_new and stay valid
    // until remodel_engine_free.
    unsafe { e.as_ref() }.ok_or_else(|| Failure::Argument("engine handle is null".into()))
}

fn write_out<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Argument("output pointer is null".into()));
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { out.write(v) };
    Ok(())
}

fn write_json<T: serde::Serialize>(out: *mut *mut c_char, v: &T) -> Result<(), Failure> {
    let text = serde_json::to_string(v).map_err(|e| Failure::Core(Error::Io(e.to_string())))?;
    let c = CString::new(text).map_err(|e| Failure::Argument(e.to_string()))?;
    write_out(out, c.into_raw())
}

fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Argument("array pointer is null".into()));
    }
    // SAFETY: checked non-null; the caller guarantees `len` readable items.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn remodel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn remodel_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an engine at τ = tau_re + i·tau_im with default settings.
/// `trunc_extra` raises (or lowers) the series order of every ω_{g,n}.
#[no_mangle]
pub extern "C" fn remodel_engine_new(
    tau_re: f64,
    tau_im: f64,
    trunc_extra: i32,
    out: *mut *mut RemodelEngine,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Argument("output pointer is null".into()));
        }
        let m = ModuliPoint::from_tau(Complex64::new(tau_re, tau_im))?;
        let cfg = RecursionConfig {
            trunc_extra,
            ..RecursionConfig::default()
        };
        let engine = Engine::new(m, cfg)?;
        write_out(out, Box::into_raw(Box::new(RemodelEngine { engine })))
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `e` must come from [`remodel_engine_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn remodel_engine_free(e: *mut RemodelEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Moduli data (q, κ, g₂, g₃, both j) as JSON.
#[no_mangle]
pub extern "C" fn remodel_curve_json(e: *const RemodelEngine, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let m = engine_ref(e)?.engine.moduli();
        let v = serde_json::json!({
            "tau": m.tau(),
            "q": m.q,
            "kappa": m.kappa,
            "g2": m.g2(),
            "g3": m.g3(),
            "j_weierstrass": m.j,
            "j_rational": m.j_rational,
            "j_relative_mismatch": m.j_mismatch(),
        });
        write_json(out, &v)
    })
}

/// The nine ramification points as a JSON array.
#[no_mangle]
pub extern "C" fn remodel_ramification_json(e: *const RemodelEngine, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let rows: Vec<_> = engine_ref(e)?
            .engine
            .ramification()?
            .iter()
            .map(|p| p.summary())
            .collect();
        write_json(out, &rows)
    })
}

/// ω_{g,n} as JSON in the anchor basis.
#[no_mangle]
pub extern "C" fn remodel_omega_json(e: *const RemodelEngine, g: u32, n: u32, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let f = engine_ref(e)?.engine.omega(g, n)?;
        write_json(out, f.as_ref())
    })
}

/// ω_{g,n}(u₁,…,u_n) at ε = eps_re + i·eps_im; `us_re`/`us_im` hold n entries.
#[no_mangle]
pub extern "C" fn remodel_omega_eval(
    e: *const RemodelEngine,
    g: u32,
    n: u32,
    us_re: *const f64,
    us_im: *const f64,
    eps_re: f64,
    eps_im: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> i32 {
    guard(|| {
        let eng = &engine_ref(e)?.engine;
        let (re, im) = (slice(us_re, n as usize)?, slice(us_im, n as usize)?);
        let us: Vec<Complex64> = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        let f = eng.omega(g, n)?;
        let v = eng.evaluate(&f, &us, Complex64::new(eps_re, eps_im))?;
        write_out(out_re, v.re)?;
        write_out(out_im, v.im)
    })
}

/// F_g as an ε-polynomial in JSON, together with F̂_g (ε = π/Im τ) and the
/// holomorphic limit.
#[no_mangle]
pub extern "C" fn remodel_free_energy_json(e: *const RemodelEngine, g: u32, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let eng = &engine_ref(e)?.engine;
        if g < 2 {
            return Err(Error::Config(format!("free energies need g ≥ 2, got {g}")).into());
        }
        let f = eng.free_energy(g)?;
        let eps = eng.moduli().eps();
        let v = serde_json::json!({
            "g": g,
            "coeffs": f.coeffs(),
            "eps": eps,
            "f_hat": f.eval(Complex64::new(eps, 0.0)),
            "f_holomorphic": f.eval(Complex64::new(0.0, 0.0)),
        });
        write_json(out, &v)
    })
}

/// One open invariant N^{d}_{k} with open mirror-map constant A.
/// `degrees` and `twists` hold n entries each.
#[no_mangle]
pub extern "C" fn remodel_open_invariant(
    e: *const RemodelEngine,
    g: u32,
    n: u32,
    degrees: *const u32,
    twists: *const u32,
    a_re: f64,
    a_im: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> i32 {
    guard(|| {
        let eng = &engine_ref(e)?.engine;
        let d: Vec<usize> = slice(degrees, n as usize)?.iter().map(|&x| x as usize).collect();
        let k: Vec<usize> = slice(twists, n as usize)?.iter().map(|&x| x as usize).collect();
        if d.is_empty() {
            return Err(Error::Config("at least one degree is required".into()).into());
        }
        let order = d.iter().copied().max().unwrap_or(1) + 2;
        let points = open_points(eng.moduli(), order)?;
        let v = open_invariant(eng, &points, g, &d, &k, Complex64::new(a_re, a_im))?;
        write_out(out_re, v.value.re)?;
        write_out(out_im, v.value.im)
    })
}

/// Runs the command-line driver on `argv[0..argc]` (without the program
/// name) and returns its standard output. `status` receives the exit code
/// the CLI would use; the diagnostic of a nonzero status is available from
/// [`remodel_last_error`].
///
/// # Safety
/// `argv` must point to `argc` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn remodel_cli_run(
    argc: usize,
    argv: *const *const c_char,
    out: *mut *mut c_char,
    status: *mut i32,
) -> i32 {
    guard(|| {
        let ptrs = slice(argv, argc)?;
        let mut args = vec!["remodel".to_string()];
        for &p in ptrs {
            if p.is_null() {
                return Err(Failure::Argument("argument pointer is null".into()));
            }
            let s = CStr::from_ptr(p)
                .to_str()
                .map_err(|e| Failure::Argument(format!("argument is not UTF-8: {e}")))?;
            args.push(s.to_string());
        }
        let mut stdout = Vec::new();
        let mut stderr = Vec::new();
        let (code, _cache): (i32, CacheStatus) = cli::execute(args, &mut stdout, &mut stderr);
        if code != 0 && !stderr.is_empty() {
            set_error(String::from_utf8_lossy(&stderr).trim());
        }
        let text = CString::new(stdout).map_err(|e| Failure::Argument(e.to_string()))?;
        write_out(status, code)?;
        write_out(out, text.into_raw())
    })
}
