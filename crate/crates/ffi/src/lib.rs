//! C ABI bindings.
//!
//! Objects are opaque handles created by `fsde_*_new` and released by the
//! matching `fsde_*_free`. Every fallible call returns an [`FsdeStatus`];
//! the message of the last failure on the calling thread is available from
//! [`fsde_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use forecast_sde::calibrate::{self, CalibrationConfig, Method};
use forecast_sde::data::{ForecastCurve, PreparedSet};
use forecast_sde::likelihood::{beta_transition_logpdf, matched_beta_shapes};
use forecast_sde::model::{self, ModelKind, ModelParams};
use forecast_sde::moments::{integrate_v_moments, IntegratorConfig};
use forecast_sde::simulate::{simulate_paths, InitialCondition, SimConfig};
use forecast_sde::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Data = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

impl From<&Error> for FsdeStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain { .. } | Error::Singular { .. } => FsdeStatus::Domain,
            Error::InvalidParameter { .. } | Error::Config(_) => FsdeStatus::InvalidArgument,
            Error::Data(_) | Error::Parse { .. } | Error::Json(_) => FsdeStatus::Data,
            Error::Numerical(_) => FsdeStatus::Numerical,
            Error::Io { .. } => FsdeStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FsdeStatus>) -> FsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsdeStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            FsdeStatus::Panic
        }
    }
}

fn fail(e: Error) -> FsdeStatus {
    let status = FsdeStatus::from(&e);
    set_error(e.to_string());
    status
}

fn null(what: &str) -> FsdeStatus {
    set_error(format!("{what} is null"));
    FsdeStatus::NullPointer
}

fn invalid(msg: impl Into<String>) -> FsdeStatus {
    set_error(msg.into());
    FsdeStatus::InvalidArgument
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, FsdeStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], FsdeStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), FsdeStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, FsdeStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Model parameters.
pub struct FsdeParams(ModelParams);

/// Piecewise-linear forecast curve on a time axis in days.
pub struct FsdeCurve(ForecastCurve);

/// Prepared calibration data.
pub struct FsdeDataset(PreparedSet);

/// Summary of a calibration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsdeFit {
    pub theta0: f64,
    pub alpha: f64,
    /// NaN unless the method also fits the lag.
    pub delta: f64,
    pub product: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    pub converged: bool,
}

fn kind_of(model: u32) -> Result<ModelKind, FsdeStatus> {
    u8::try_from(model)
        .map_err(|_| invalid(format!("model must be 1 or 2, got {model}")))
        .and_then(|m| ModelKind::from_number(m).map_err(fail))
}

/// Create parameters for model 1 (plain) or 2 (derivative tracking).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsde_params_new(
    theta0: f64,
    alpha: f64,
    model: u32,
    out: *mut *mut FsdeParams,
) -> FsdeStatus {
    guard(|| {
        let params = ModelParams::new(theta0, alpha, kind_of(model)?).map_err(fail)?;
        write(out, Box::into_raw(Box::new(FsdeParams(params))), "out")
    })
}

/// # Safety
/// `params` must come from [`fsde_params_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fsde_params_free(params: *mut FsdeParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_lamperti_forward(
    params: *const FsdeParams,
    v: f64,
    p: f64,
    out: *mut f64,
) -> FsdeStatus {
    guard(|| {
        let params = as_ref(params, "params")?;
        let z = model::lamperti_forward(v, p, &params.0).map_err(fail)?;
        write(out, z, "out")
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_lamperti_inverse(
    params: *const FsdeParams,
    z: f64,
    p: f64,
    out: *mut f64,
) -> FsdeStatus {
    guard(|| {
        let params = as_ref(params, "params")?;
        let v = model::lamperti_inverse(z, p, &params.0).map_err(fail)?;
        write(out, v, "out")
    })
}

/// Lamperti-space drift at `z` for forecast value `p` and slope `p_dot`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_drift_z(
    params: *const FsdeParams,
    z: f64,
    p: f64,
    p_dot: f64,
    out: *mut f64,
) -> FsdeStatus {
    guard(|| {
        let params = as_ref(params, "params")?;
        let a = model::drift_z(z, p, p_dot, &params.0).map_err(fail)?;
        write(out, a, "out")
    })
}

/// Build a forecast curve from `n` knots; values are truncated to `[epsilon, 1 - epsilon]`.
///
/// # Safety
/// `times` and `values` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_curve_new(
    times: *const f64,
    values: *const f64,
    n: usize,
    epsilon: f64,
    out: *mut *mut FsdeCurve,
) -> FsdeStatus {
    guard(|| {
        let t = slice(times, n, "times")?.to_vec();
        let v = slice(values, n, "values")?.to_vec();
        let curve = ForecastCurve::new(t, v, epsilon).map_err(fail)?;
        write(out, Box::into_raw(Box::new(FsdeCurve(curve))), "out")
    })
}

/// # Safety
/// `curve` must come from [`fsde_curve_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fsde_curve_free(curve: *mut FsdeCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// First two raw moments of the forecast error at `t1`, starting from `v0` at `t0`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_error_moments(
    params: *const FsdeParams,
    curve: *const FsdeCurve,
    v0: f64,
    t0: f64,
    t1: f64,
    out_m1: *mut f64,
    out_m2: *mut f64,
) -> FsdeStatus {
    guard(|| {
        let params = as_ref(params, "params")?;
        let curve = as_ref(curve, "curve")?;
        let m = integrate_v_moments(
            v0,
            t0,
            t1,
            &curve.0,
            &params.0,
            &IntegratorConfig::default(),
        )
        .map_err(fail)?;
        write(out_m1, m.m1, "out_m1")?;
        write(out_m2, m.m2, "out_m2")
    })
}

/// Log density at `v` of the Beta law matching `mean` and `variance` on
/// `[-(1 - epsilon), 1 - epsilon]`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_beta_logpdf(
    v: f64,
    mean: f64,
    variance: f64,
    epsilon: f64,
    out: *mut f64,
) -> FsdeStatus {
    guard(|| {
        let (shapes, _) = matched_beta_shapes(mean, variance, epsilon).map_err(fail)?;
        let lp = beta_transition_logpdf(v, &shapes).map_err(fail)?;
        write(out, lp, "out")
    })
}

/// Load every uncurtailed segment of a segments JSON file written by `forecast-sde ingest`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsde_dataset_load(
    path: *const c_char,
    epsilon: f64,
    out: *mut *mut FsdeDataset,
) -> FsdeStatus {
    guard(|| {
        let path = string(path, "path")?;
        let segments = forecast_sde::ingest::read_segments(Path::new(path)).map_err(fail)?;
        let kept: Vec<_> = segments.into_iter().filter(|s| !s.curtailed).collect();
        let set = PreparedSet::from_segments(&kept, epsilon).map_err(fail)?;
        write(out, Box::into_raw(Box::new(FsdeDataset(set))), "out")
    })
}

/// # Safety
/// `data` must come from [`fsde_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fsde_dataset_free(data: *mut FsdeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Calibrate `model` on `data`. `method` is one of `v_beta`, `v_gauss`,
/// `z_fixed_point` or `complete`.
///
/// # Safety
/// Pointers must be valid; `method` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fsde_calibrate(
    data: *const FsdeDataset,
    model: u32,
    method: *const c_char,
    out: *mut FsdeFit,
) -> FsdeStatus {
    guard(|| {
        let data = as_ref(data, "data")?;
        let method = Method::parse(string(method, "method")?).map_err(fail)?;
        let r = calibrate::fit(
            &data.0,
            kind_of(model)?,
            method,
            &CalibrationConfig::default(),
        )
        .map_err(fail)?;
        let fit = FsdeFit {
            theta0: r.theta0,
            alpha: r.alpha,
            delta: r.delta.unwrap_or(f64::NAN),
            product: r.product,
            loglik: r.loglik,
            aic: r.aic,
            bic: r.bic,
            n: r.n,
            converged: r.converged,
        };
        write(out, fit, "out")
    })
}

/// Simulate `n_paths` paths of the normalized state on `grid`, all starting
/// at forecast error `v0`. `out` receives `n_paths * n_grid` values, path-major.
///
/// # Safety
/// `grid` must hold `n_grid` doubles and `out` room for `n_paths * n_grid`.
#[no_mangle]
pub unsafe extern "C" fn fsde_simulate(
    params: *const FsdeParams,
    curve: *const FsdeCurve,
    grid: *const f64,
    n_grid: usize,
    n_paths: usize,
    seed: u64,
    v0: f64,
    out: *mut f64,
) -> FsdeStatus {
    guard(|| {
        let params = as_ref(params, "params")?;
        let curve = as_ref(curve, "curve")?;
        let grid = slice(grid, n_grid, "grid")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SimConfig {
            n_paths,
            seed,
            ..Default::default()
        };
        let bundle = simulate_paths(&params.0, &curve.0, grid, &cfg, InitialCondition::Error(v0))
            .map_err(fail)?;
        if bundle.paths.len() != n_paths {
            return Err(fail(Error::Numerical(format!(
                "{} of {n_paths} paths failed",
                n_paths - bundle.paths.len()
            ))));
        }
        let dst = std::slice::from_raw_parts_mut(out, n_paths * n_grid);
        for (chunk, path) in dst.chunks_mut(n_grid.max(1)).zip(&bundle.paths) {
            chunk.copy_from_slice(path);
        }
        Ok(())
    })
}
