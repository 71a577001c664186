//! C interface to the metastat solver.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Every function returns a [`MetastatStatus`];
//! on failure `metastat_last_error` describes the problem. Panics are caught
//! at the boundary and reported as `METASTAT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use metastat::renewal;
use metastat::{CharacteristicLattice, Error, PhasePoint, RunConfig, SpectralSolution};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetastatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Numerical = 5,
    Subcritical = 6,
    Io = 7,
    /// Buffer passed to a copy function is too short.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Model built from a TOML configuration: parameters and lattice.
pub struct MetastatModel {
    config: RunConfig,
    lattice: CharacteristicLattice,
}

/// Completed simulation: time grid, birth rate and total mass.
pub struct MetastatRun {
    times: Vec<f64>,
    birth_rate: Vec<f64>,
    mass: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MetastatStatus {
    match e {
        Error::Config(_) => MetastatStatus::Config,
        Error::Domain(_) | Error::Shape(_) | Error::Singularity { .. } => MetastatStatus::Domain,
        Error::Subcritical { .. } => MetastatStatus::Subcritical,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => MetastatStatus::Io,
        _ => MetastatStatus::Numerical,
    }
}

struct Fail(MetastatStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MetastatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MetastatStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside metastat".into());
            MetastatStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MetastatStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(m: *const MetastatModel) -> Result<&'a MetastatModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn write_out(out: *mut f64, v: f64) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = v;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn metastat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a TOML configuration and builds the lattice. Relative paths in the
/// configuration resolve against the working directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn metastat_model_from_toml(toml: *const c_char, out: *mut *mut MetastatModel) -> MetastatStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| Fail(MetastatStatus::InvalidUtf8, e.to_string()))?;
        let config = RunConfig::from_toml_str(text)?;
        let lattice = config.build_lattice()?;
        *out = Box::into_raw(Box::new(MetastatModel { config, lattice }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `metastat_model_from_toml` and not be used after.
#[no_mangle]
pub unsafe extern "C" fn metastat_model_free(model: *mut MetastatModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Equilibrium coordinate `b = (c/d)^{3/2}`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn metastat_model_b(model: *const MetastatModel, out: *mut f64) -> MetastatStatus {
    guard(|| write_out(out, model_ref(model)?.lattice.params().b()))
}

/// Characteristic truncation `τ_max` of the lattice.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn metastat_model_tau_max(model: *const MetastatModel, out: *mut f64) -> MetastatStatus {
    guard(|| write_out(out, model_ref(model)?.lattice.tau_max()))
}

/// Malthus parameter λ0. `METASTAT_STATUS_SUBCRITICAL` when none exists.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn metastat_model_lambda0(model: *const MetastatModel, out: *mut f64) -> MetastatStatus {
    guard(|| {
        let m = model_ref(model)?;
        let tol = &m.config.tolerances;
        let sol = SpectralSolution::solve(&m.lattice, tol.root, tol.quad)?;
        write_out(out, sol.lambda0)
    })
}

/// Growth field `G(x, θ)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn metastat_velocity(
    model: *const MetastatModel,
    x: f64,
    theta: f64,
    gx: *mut f64,
    gtheta: *mut f64,
) -> MetastatStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (a, b) = metastat::growth::velocity(&PhasePoint::new(x, theta), m.lattice.params())?;
        write_out(gx, a)?;
        write_out(gtheta, b)
    })
}

/// Runs the configured simulation over the configured horizon.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn metastat_simulate(model: *const MetastatModel, out: *mut *mut MetastatRun) -> MetastatStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let lat = &m.lattice;
        let steps = m.config.time_steps(lat);
        let rho0 = m.config.initial_data(lat)?;
        let source = m.config.source_samples(lat, steps)?;
        let field = renewal::simulate(lat, &rho0, &source)?;
        let run = MetastatRun {
            times: (0..=steps).map(|n| field.time(n)).collect(),
            birth_rate: field.birth_rate().to_vec(),
            mass: (0..=steps).map(|n| field.mass(lat, n)).collect(),
        };
        *out = Box::into_raw(Box::new(run));
        Ok(())
    })
}

/// Number of time points of a run (0 for a null handle).
///
/// # Safety
/// `run` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn metastat_run_len(run: *const MetastatRun) -> usize {
    run.as_ref().map_or(0, |r| r.times.len())
}

unsafe fn copy_series(
    run: *const MetastatRun,
    pick: impl Fn(&MetastatRun) -> &[f64],
    buf: *mut f64,
    len: usize,
) -> MetastatStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let src = pick(r);
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < src.len() {
            return Err(Fail(
                MetastatStatus::BufferTooSmall,
                format!("buffer holds {len} values, run has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Copies the time grid into `buf` (at least `metastat_run_len` values).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn metastat_run_times(run: *const MetastatRun, buf: *mut f64, len: usize) -> MetastatStatus {
    copy_series(run, |r| &r.times, buf, len)
}

/// Copies the birth rate `B(t_n)`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn metastat_run_birth_rate(run: *const MetastatRun, buf: *mut f64, len: usize) -> MetastatStatus {
    copy_series(run, |r| &r.birth_rate, buf, len)
}

/// Copies the total mass `∫ρ(t_n)`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn metastat_run_mass(run: *const MetastatRun, buf: *mut f64, len: usize) -> MetastatStatus {
    copy_series(run, |r| &r.mass, buf, len)
}

/// # Safety
/// `run` must come from `metastat_simulate` and not be used after.
#[no_mangle]
pub unsafe extern "C" fn metastat_run_free(run: *mut MetastatRun) {
    if !run.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(run))));
    }
}
