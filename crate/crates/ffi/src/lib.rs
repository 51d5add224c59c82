//! C ABI over `forge_core`.
//!
//! Datasets and models cross the boundary as opaque handles owned by the
//! caller and released with the matching `_free` function. Every fallible
//! call returns a [`ForgeStatus`]; on failure the message is available from
//! [`forge_last_error`] on the same thread until the next failing call.
//! Strings returned by the library are released with [`forge_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use forge_core::predictor::PredictorModel;
use forge_core::problems::{generate_dataset, Dataset, GeneratorConfig};
use forge_core::trainer::{train, Method, TrainerConfig};
use forge_core::ForgeError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Shape = 4,
    Solver = 5,
    Numerical = 6,
    Io = 7,
    Serialization = 8,
    Panic = 9,
}

/// A generated or loaded dataset.
pub struct ForgeDataset(Dataset);

/// A trained predictor.
pub struct ForgeModel(PredictorModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(ForgeStatus, String);

impl From<ForgeError> for Fail {
    fn from(e: ForgeError) -> Self {
        let status = match &e {
            ForgeError::Config(_) => ForgeStatus::Config,
            ForgeError::Shape { .. } => ForgeStatus::Shape,
            ForgeError::Solver(_) => ForgeStatus::Solver,
            ForgeError::NonFinite(_)
            | ForgeError::EmptyBank
            | ForgeError::Unfitted
            | ForgeError::Numerical(_) => ForgeStatus::Numerical,
            ForgeError::Io(_) => ForgeStatus::Io,
            ForgeError::Json(_) | ForgeError::Csv(_) => ForgeStatus::Serialization,
        };
        Fail(status, e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(ForgeStatus::Serialization, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ForgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ForgeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside forge".into());
            ForgeStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ForgeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ForgeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(Fail(
            ForgeStatus::Shape,
            format!("output buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn forge_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version string (static, do not free).
#[no_mangle]
pub extern "C" fn forge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn forge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generate a dataset from a JSON generator configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn forge_dataset_generate(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut ForgeDataset,
) -> ForgeStatus {
    guard(|| {
        let cfg: GeneratorConfig = serde_json::from_str(text(config_json, "config_json")?)?;
        let ds = generate_dataset(&cfg, seed)?;
        write_out(out, Box::into_raw(Box::new(ForgeDataset(ds))), "out")
    })
}

/// Load a dataset written by `forge gen` or [`forge_dataset_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn forge_dataset_load(
    path: *const c_char,
    out: *mut *mut ForgeDataset,
) -> ForgeStatus {
    guard(|| {
        let ds = Dataset::load(text(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(ForgeDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must be a live dataset handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn forge_dataset_save(
    ds: *const ForgeDataset,
    path: *const c_char,
) -> ForgeStatus {
    guard(|| {
        handle(ds, "dataset")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn forge_dataset_free(ds: *mut ForgeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of instances and feature/parameter widths.
///
/// # Safety
/// `ds` must be a live dataset handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_dataset_dims(
    ds: *const ForgeDataset,
    n_instances: *mut usize,
    dim_x: *mut usize,
    dim_y: *mut usize,
) -> ForgeStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        write_out(n_instances, ds.instances.len(), "n_instances")?;
        write_out(dim_x, ds.dim_x(), "dim_x")?;
        write_out(dim_y, ds.dim_y(), "dim_y")
    })
}

/// Copy instance `index` into `x` (capacity `x_cap`) and `y` (capacity `y_cap`).
///
/// # Safety
/// `ds` must be a live dataset handle; buffers must hold their stated capacity.
#[no_mangle]
pub unsafe extern "C" fn forge_dataset_instance(
    ds: *const ForgeDataset,
    index: usize,
    x: *mut f64,
    x_cap: usize,
    y: *mut f64,
    y_cap: usize,
) -> ForgeStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let inst = ds.instances.get(index).ok_or_else(|| {
            Fail(
                ForgeStatus::Shape,
                format!("instance {index} out of range ({})", ds.instances.len()),
            )
        })?;
        copy_out(&inst.x, x, x_cap)?;
        copy_out(&inst.y, y, y_cap)
    })
}

/// Solve the decision problem under `y_hat`. The decision is written to `z`
/// (capacity `z_cap`), its length to `z_len` and its objective to `objective`.
/// When `z_cap` is too small, `z_len` still receives the required length.
///
/// # Safety
/// `ds` must be a live dataset handle; `y_hat` must hold `len` values and `z`
/// `z_cap` values; `z_len` and `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_solve(
    ds: *const ForgeDataset,
    y_hat: *const f64,
    len: usize,
    z: *mut f64,
    z_cap: usize,
    z_len: *mut usize,
    objective: *mut f64,
) -> ForgeStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let d = ds.problem.solve(slice(y_hat, len, "y_hat")?)?;
        write_out(z_len, d.z.len(), "z_len")?;
        copy_out(&d.z, z, z_cap)?;
        write_out(objective, d.objective, "objective")
    })
}

/// Regret of predicting `y_hat` when the realization is `y`; both hold `len` values.
///
/// # Safety
/// `ds` must be a live dataset handle; `y` and `y_hat` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn forge_regret(
    ds: *const ForgeDataset,
    y: *const f64,
    y_hat: *const f64,
    len: usize,
    out: *mut f64,
) -> ForgeStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let r = ds
            .problem
            .regret(slice(y, len, "y")?, slice(y_hat, len, "y_hat")?)?;
        write_out(out, r, "out")
    })
}

/// Train a predictor with `method` (`"gsl"`, `"sfge"` or `"pfl"`).
/// `config_json` may be null for defaults; otherwise it is a JSON object of
/// trainer settings. On success `model` receives a new handle and, when
/// `metrics_json` is non-null, it receives the run metrics as a JSON string.
///
/// # Safety
/// `ds` must be a live dataset handle; strings NUL-terminated; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn forge_train(
    ds: *const ForgeDataset,
    method: *const c_char,
    config_json: *const c_char,
    seed: u64,
    model: *mut *mut ForgeModel,
    metrics_json: *mut *mut c_char,
) -> ForgeStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let method: Method = text(method, "method")?.parse()?;
        let cfg: TrainerConfig = if config_json.is_null() {
            TrainerConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config_json")?)?
        };
        if model.is_null() {
            return Err(null("model"));
        }
        let outcome = train(ds, &cfg.for_method(method), seed)?;
        if !metrics_json.is_null() {
            metrics_json.write(to_c_string(serde_json::to_string(&outcome.metrics)?));
        }
        model.write(Box::into_raw(Box::new(ForgeModel(outcome.model))));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn forge_model_load(
    path: *const c_char,
    out: *mut *mut ForgeModel,
) -> ForgeStatus {
    guard(|| {
        let m = PredictorModel::load(text(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(ForgeModel(m))), "out")
    })
}

/// # Safety
/// `model` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn forge_model_save(
    model: *const ForgeModel,
    path: *const c_char,
) -> ForgeStatus {
    guard(|| {
        handle(model, "model")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn forge_model_free(model: *mut ForgeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predict parameters for features `x` (`x_len` values) into `y` (capacity `y_cap`).
///
/// # Safety
/// `model` must be a live model handle; buffers must hold their stated sizes.
#[no_mangle]
pub unsafe extern "C" fn forge_model_predict(
    model: *const ForgeModel,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_cap: usize,
) -> ForgeStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let out = m.forward(slice(x, x_len, "x")?)?;
        copy_out(&out, y, y_cap)
    })
}
