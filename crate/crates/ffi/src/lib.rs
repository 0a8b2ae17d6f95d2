//! C ABI over `nodal_sheet`.
//!
//! Every function returns an [`NsStatus`]; on failure the message is kept per
//! thread and read with [`ns_last_error_message`]. Objects are opaque handles
//! released with the matching `*_free` function. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nodal_sheet::config::{self, ConfigMap};
use nodal_sheet::covariance::{make_model, CovarianceModel};
use nodal_sheet::experiments::{self, StatsReport};
use nodal_sheet::sampler::{self, FieldSample, GridSpec};
use nodal_sheet::sheet::{self, CurveParam, SheetSample};
use nodal_sheet::{io, kac_rice, nodal, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid configuration or argument.
    InvalidArgument = 2,
    /// Numerical failure.
    Numerical = 3,
    /// An experiment ran but failed a statistical check.
    AcceptanceFailed = 4,
    BufferTooSmall = 5,
    Io = 6,
    Panic = 7,
}

/// Covariance model handle.
pub struct NsModel(CovarianceModel);

/// Field sample handle.
pub struct NsField(FieldSample);

/// Brownian sheet sample handle.
pub struct NsSheet(SheetSample);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NsStatus {
    match e {
        Error::Io(_) => NsStatus::Io,
        _ if e.exit_code() == 2 => NsStatus::InvalidArgument,
        _ => NsStatus::Numerical,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Buffer { need: usize, got: usize },
    Acceptance,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard<F: FnOnce() -> Outcome>(f: F) -> NsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            NsStatus::NullPointer
        }
        Ok(Err(Failure::Buffer { need, got })) => {
            set_error(format!("buffer holds {got} values, need {need}"));
            NsStatus::BufferTooSmall
        }
        Ok(Err(Failure::Acceptance)) => {
            set_error("statistical acceptance failed".into());
            NsStatus::AcceptanceFailed
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidParameter(format!("{what} is not UTF-8"))))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Outcome {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies `values` into `buf` of capacity `len`; `written` receives the
/// required length either way.
unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize, written: *mut usize) -> Outcome {
    if !written.is_null() {
        written.write(values.len());
    }
    if buf.is_null() {
        return Err(Failure::Null("buf"));
    }
    if len < values.len() {
        return Err(Failure::Buffer { need: values.len(), got: len });
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn ns_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_model_new(name: *const c_char, dim: usize, out: *mut *mut NsModel) -> NsStatus {
    guard(|| {
        let model = make_model(text(name, "name")?, dim)?;
        put(out, Box::into_raw(Box::new(NsModel(model))), "out")
    })
}

/// # Safety
/// `model` must come from [`ns_model_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ns_model_free(model: *mut NsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Covariance `r(lag)` for a lag of length `dim`.
///
/// # Safety
/// `lag` must point to `dim` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_model_covariance(model: *const NsModel, lag: *const f64, dim: usize, out: *mut f64) -> NsStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        if lag.is_null() {
            return Err(Failure::Null("lag"));
        }
        if dim != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: dim }.into());
        }
        let lag = std::slice::from_raw_parts(lag, dim);
        put(out, model.covariance(lag), "out")
    })
}

/// Kac–Rice `gamma2` and `rho1`.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_gamma2(model: *const NsModel, gamma2: *mut f64, rho1: *mut f64) -> NsStatus {
    guard(|| {
        let g = kac_rice::gamma2(&borrow(model, "model")?.0)?;
        put(gamma2, g.gamma2, "gamma2")?;
        put(rho1, g.rho1, "rho1")
    })
}

/// Samples the field on `[0, side]^d` with spacing `h`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_field_sample(model: *const NsModel, side: f64, h: f64, seed: u64, out: *mut *mut NsField) -> NsStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let grid = GridSpec::new(model.dim(), side, h)?;
        let sample = if model.deterministic_field().is_some() {
            sampler::sample_deterministic(model, &grid)?
        } else {
            sampler::sample_field(&sampler::plan_embedding(model, &grid)?, seed)
        };
        put(out, Box::into_raw(Box::new(NsField(sample))), "out")
    })
}

/// # Safety
/// `field` must come from [`ns_field_sample`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ns_field_free(field: *mut NsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Grid points per axis.
///
/// # Safety
/// `points` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_field_points(field: *const NsField, points: *mut usize) -> NsStatus {
    guard(|| put(points, borrow(field, "field")?.0.grid.points, "points"))
}

/// Field values, first axis outermost.
///
/// # Safety
/// `buf` must hold `len` values; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ns_field_values(field: *const NsField, buf: *mut f64, len: usize, written: *mut usize) -> NsStatus {
    guard(|| copy_out(&borrow(field, "field")?.0.values, buf, len, written))
}

/// Total nodal measure of the sample.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_nodal_total(field: *const NsField, out: *mut f64) -> NsStatus {
    guard(|| {
        let inc = nodal::nodal_cells(&borrow(field, "field")?.0, 1)?;
        put(out, inc.total(), "out")
    })
}

/// `xi_R` on the `(m + 1)^d` lattice.
///
/// # Safety
/// `buf` must hold `len` values; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ns_xi_lattice(field: *const NsField, m: usize, buf: *mut f64, len: usize, written: *mut usize) -> NsStatus {
    guard(|| {
        let sample = &borrow(field, "field")?.0;
        let model = make_model(&sample.model, sample.grid.dim)?;
        let g = kac_rice::gamma2(&model)?;
        let xi = nodal::center_and_rescale(&nodal::nodal_cells(sample, m)?, g.rho1, g.gamma2)?;
        copy_out(&xi.lattice.values, buf, len, written)
    })
}

fn curve_param(x: f64) -> Result<CurveParam, Failure> {
    if x.is_infinite() && x > 0.0 {
        Ok(CurveParam::Infinite)
    } else if x > 0.0 {
        Ok(CurveParam::Finite(x))
    } else {
        Err(Error::InvalidParameter(format!("curve parameter must be positive, got {x}")).into())
    }
}

/// `H(a, b, lambda)`; pass `INFINITY` for an infinite parameter.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_yeh_h(a: f64, b: f64, lambda: f64, out: *mut f64) -> NsStatus {
    guard(|| put(out, sheet::yeh_h(curve_param(a)?, curve_param(b)?, lambda)?, "out"))
}

/// Brownian sheet on the `(n + 1)^d` lattice.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_sheet_sample(n: usize, dim: usize, seed: u64, out: *mut *mut NsSheet) -> NsStatus {
    guard(|| put(out, Box::into_raw(Box::new(NsSheet(sheet::sample_sheet(n, dim, seed)?))), "out"))
}

/// # Safety
/// `sheet` must come from [`ns_sheet_sample`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ns_sheet_free(sheet: *mut NsSheet) {
    if !sheet.is_null() {
        drop(Box::from_raw(sheet));
    }
}

/// # Safety
/// `buf` must hold `len` values; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ns_sheet_values(sheet: *const NsSheet, buf: *mut f64, len: usize, written: *mut usize) -> NsStatus {
    guard(|| copy_out(borrow(sheet, "sheet")?.0.values(), buf, len, written))
}

/// Runs `experiment` (`clt`, `sup`, `moment-scan` or `gamma2`) with a
/// `key=value` configuration and writes its report into `out_dir`.
/// Returns [`NsStatus::AcceptanceFailed`] when any check fails.
///
/// # Safety
/// String arguments must be NUL-terminated; `config` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn ns_run_experiment(experiment: *const c_char, config: *const c_char, out_dir: *const c_char) -> NsStatus {
    guard(|| {
        let which = text(experiment, "experiment")?;
        let map = if config.is_null() { ConfigMap::new() } else { ConfigMap::parse(text(config, "config")?)? };
        let dir = text(out_dir, "out_dir")?;
        let cfg = config::resolve(&map)?;
        let run: fn(&experiments::ExperimentConfig) -> nodal_sheet::Result<StatsReport> = match which {
            "clt" => experiments::run_clt_experiment,
            "sup" => experiments::run_sup_experiment,
            "moment-scan" => experiments::run_moment_scan,
            "gamma2" => experiments::run_gamma2_crosscheck,
            other => return Err(Error::Config(format!("unknown experiment `{other}`")).into()),
        };
        let report = run(&cfg)?;
        io::write_report(&report, Path::new(dir))?;
        if report.passed {
            Ok(())
        } else {
            Err(Failure::Acceptance)
        }
    })
}
