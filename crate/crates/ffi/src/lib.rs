//! C ABI over the simulator: finite-blocklength primitives, run
//! configurations, datasets and the end-to-end pipeline.
//!
//! Every fallible call returns a [`CfmoeStatus`]; on failure the message is
//! kept per thread and can be read with [`cfmoe_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cfmoe::harness::{run_pipeline, Dataset, RunConfig};
use cfmoe::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfmoeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    StageOrder = 5,
    Numerical = 6,
    Panic = 7,
}

/// Opaque run configuration.
pub struct CfmoeConfig(RunConfig);

/// Opaque generated or loaded dataset.
pub struct CfmoeDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CfmoeStatus {
    match e {
        Error::Domain(_)
        | Error::Config(_)
        | Error::Shape(_)
        | Error::InsufficientHistory { .. }
        | Error::EmptyDataset => CfmoeStatus::InvalidArgument,
        Error::DegenerateLink(_) | Error::Divergence { .. } => CfmoeStatus::Numerical,
        Error::VersionMismatch { .. } | Error::Format { .. } => CfmoeStatus::Format,
        Error::StageOrder(_) => CfmoeStatus::StageOrder,
        Error::Io { .. } => CfmoeStatus::Io,
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard<F>(f: F) -> CfmoeStatus
where
    F: FnOnce() -> Result<(), CfmoeStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfmoeStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CfmoeStatus::Panic
        }
    }
}

fn check<T>(r: cfmoe::Result<T>) -> Result<T, CfmoeStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> CfmoeStatus {
    set_error(format!("{what} is null"));
    CfmoeStatus::NullArgument
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, CfmoeStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        CfmoeStatus::InvalidArgument
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CfmoeStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, CfmoeStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len − 1` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Finite-blocklength rate (bits per channel use) at SINR `gamma`,
/// blocklength `tau_s` and error probability `eps`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_achievable_rate(
    gamma: f64,
    tau_s: f64,
    eps: f64,
    out: *mut f64,
) -> CfmoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = check(cfmoe::fbl::achievable_rate(gamma, tau_s, eps))?;
        Ok(())
    })
}

/// Decoding error probability at SINR `gamma`, blocklength `tau_s` and
/// rate `rate`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_error_prob(
    gamma: f64,
    tau_s: f64,
    rate: f64,
    out: *mut f64,
) -> CfmoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = check(cfmoe::fbl::error_prob(gamma, tau_s, rate))?;
        Ok(())
    })
}

/// Jakes correlation at speed `v` (m/s), carrier `carrier_hz`, sampling
/// interval `interval` (s) and `lag` samples.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_temporal_corr(
    v: f64,
    carrier_hz: f64,
    interval: f64,
    lag: f64,
    out: *mut f64,
) -> CfmoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = check(cfmoe::channel::temporal_corr(v, carrier_hz, interval, lag))?;
        Ok(())
    })
}

/// Default desk-scale configuration.
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with
/// [`cfmoe_config_free`].
#[no_mangle]
pub unsafe extern "C" fn cfmoe_config_default(out: *mut *mut CfmoeConfig) -> CfmoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CfmoeConfig(RunConfig::default())));
        Ok(())
    })
}

/// Parse and validate a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_config_from_toml(
    toml: *const c_char,
    out: *mut *mut CfmoeConfig,
) -> CfmoeStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let out = out_arg(out, "out")?;
        let cfg = check(RunConfig::from_toml(text))?;
        check(cfg.validate())?;
        *out = Box::into_raw(Box::new(CfmoeConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_config_set_seed(cfg: *mut CfmoeConfig, seed: u64) -> CfmoeStatus {
    guard(|| {
        out_arg(cfg, "cfg")?.0.scenario.seed = seed;
        Ok(())
    })
}

/// Number of dataset samples the configuration asks for.
///
/// # Safety
/// `cfg` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_config_samples(
    cfg: *const CfmoeConfig,
    out: *mut usize,
) -> CfmoeStatus {
    guard(|| {
        let c = ref_arg(cfg, "cfg")?;
        *out_arg(out, "out")? = c.0.dataset.samples;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_config_free(cfg: *mut CfmoeConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generate the dataset described by `cfg`.
///
/// # Safety
/// `cfg` must be a valid handle and `out` a valid pointer; the handle is
/// released with [`cfmoe_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn cfmoe_dataset_generate(
    cfg: *const CfmoeConfig,
    out: *mut *mut CfmoeDataset,
) -> CfmoeStatus {
    guard(|| {
        let c = ref_arg(cfg, "cfg")?;
        let out = out_arg(out, "out")?;
        let ds = check(Dataset::generate(&c.0))?;
        *out = Box::into_raw(Box::new(CfmoeDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_dataset_load(
    path: *const c_char,
    out: *mut *mut CfmoeDataset,
) -> CfmoeStatus {
    guard(|| {
        let p = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let ds = check(Dataset::load(&p))?;
        *out = Box::into_raw(Box::new(CfmoeDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_dataset_save(
    ds: *const CfmoeDataset,
    path: *const c_char,
) -> CfmoeStatus {
    guard(|| {
        let d = ref_arg(ds, "ds")?;
        let p = PathBuf::from(str_arg(path, "path")?);
        check(d.0.save(&p))
    })
}

/// Sample counts of the training and test splits.
///
/// # Safety
/// `ds` must be a valid handle; `train` and `test` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_dataset_split(
    ds: *const CfmoeDataset,
    train: *mut usize,
    test: *mut usize,
) -> CfmoeStatus {
    guard(|| {
        let d = ref_arg(ds, "ds")?;
        *out_arg(train, "train")? = d.0.train_range().len();
        *out_arg(test, "test")? = d.0.test_range().len();
        Ok(())
    })
}

/// SE and EE normalizers calibrated on the training split.
///
/// # Safety
/// `ds` must be a valid handle; `eta_max` and `omega_max` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_dataset_normalizers(
    ds: *const CfmoeDataset,
    eta_max: *mut f64,
    omega_max: *mut f64,
) -> CfmoeStatus {
    guard(|| {
        let n = ref_arg(ds, "ds")?.0.header.normalizers;
        *out_arg(eta_max, "eta_max")? = n.eta_max;
        *out_arg(omega_max, "omega_max")? = n.omega_max;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_dataset_free(ds: *mut CfmoeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Generate, train and evaluate per `cfg`, writing every artifact under
/// `out_dir` (created if missing).
///
/// # Safety
/// `cfg` must be a valid handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cfmoe_run_pipeline(
    cfg: *const CfmoeConfig,
    out_dir: *const c_char,
) -> CfmoeStatus {
    guard(|| {
        let c = ref_arg(cfg, "cfg")?;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        check(std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        }))?;
        check(run_pipeline(&c.0, &dir)).map(|_| ())
    })
}
