//! C interface to `pse_core`.
//!
//! Every fallible function returns a [`PseStatus`]. On failure the message is
//! kept per thread and can be copied out with [`pse_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pse_core::config::RunConfig;
use pse_core::io::{self, EngagementLog};
use pse_core::model::{self, ErlangSpec, MarkovParams, TruncationPolicy};
use pse_core::samplers::{self, FitResult, SamplerKind};
use pse_core::{Error, ErrorCategory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Schema = 4,
    Io = 5,
    EmptyInput = 6,
    Domain = 7,
    Truncation = 8,
    Numerical = 9,
    Divergence = 10,
    OutOfRange = 11,
    Panic = 12,
}

impl From<ErrorCategory> for PseStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Config => PseStatus::Config,
            ErrorCategory::Schema => PseStatus::Schema,
            ErrorCategory::Io => PseStatus::Io,
            ErrorCategory::EmptyInput => PseStatus::EmptyInput,
            ErrorCategory::Domain => PseStatus::Domain,
            ErrorCategory::Truncation => PseStatus::Truncation,
            ErrorCategory::Numerical => PseStatus::Numerical,
            ErrorCategory::Divergence => PseStatus::Divergence,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseSampler {
    /// Use the sampler named in the configuration.
    FromConfig = 0,
    Mcmc = 1,
    Sgld = 2,
}

/// Posterior summary for one user.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PseUserSummary {
    pub pse_mean: f64,
    pub pse_lower: f64,
    pub pse_upper: f64,
    pub mean_iet: f64,
    pub mean_focal_iet: f64,
}

/// An ingested event log with features.
pub struct PseDataset {
    log: EngagementLog,
}

/// A completed posterior fit.
pub struct PseFit {
    fit: FitResult,
    excluded: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PseStatus, msg: impl Into<String>) -> PseStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> PseStatus {
    let status = e.category().into();
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> PseStatus) -> PseStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PseStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, PseStatus> {
    if p.is_null() {
        return Err(fail(PseStatus::NullPointer, format!("{name} is null")));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(PseStatus::InvalidArgument, format!("{name} is not valid UTF-8"))),
    }
}

/// Copies a NUL-terminated string into `buf`, truncating if needed, and
/// returns the buffer size required for the whole string.
unsafe fn copy_out(s: &[u8], buf: *mut c_char, len: usize) -> usize {
    if !buf.is_null() && len > 0 {
        let n = s.len().min(len - 1);
        std::ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    s.len() + 1
}

/// Copies the calling thread's last error message into `buf` and returns the
/// size needed to hold it, or 0 when there is no error. `buf` may be null to
/// query the size.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pse_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => copy_out(msg.as_bytes(), buf, len),
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Long-run share of engagements that land on the focal site.
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_share_of_engagement(phi: f64, lam: f64, out: *mut f64) -> PseStatus {
    guard(|| {
        if out.is_null() {
            return fail(PseStatus::NullPointer, "out is null");
        }
        match MarkovParams::new(phi, lam) {
            Ok(p) => {
                *out = model::pse_from_markov(p);
                PseStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Mean time between consecutive focal-site engagements.
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_mean_focal_iet(shape: u32, rate: f64, phi: f64, lam: f64, out: *mut f64) -> PseStatus {
    guard(|| {
        if out.is_null() {
            return fail(PseStatus::NullPointer, "out is null");
        }
        match ErlangSpec::new(shape, rate).and_then(|s| Ok((s, MarkovParams::new(phi, lam)?))) {
            Ok((s, p)) => {
                *out = model::mean_focal_iet(s, p);
                PseStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Log density of a focal-site inter-engagement time `t`, using the default
/// truncation policy.
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_focal_iet_log_density(
    t: f64,
    shape: u32,
    rate: f64,
    phi: f64,
    lam: f64,
    out: *mut f64,
) -> PseStatus {
    guard(|| {
        if out.is_null() {
            return fail(PseStatus::NullPointer, "out is null");
        }
        let spec = ErlangSpec { shape, rate };
        let params = MarkovParams { phi, lam };
        match model::focal_iet_log_density(t, spec, params, &TruncationPolicy::default()) {
            Ok(v) => {
                *out = v;
                PseStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Reads `events` and `features` CSV files. `window` is the observation
/// window in days; 0 selects the default.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be null
/// or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_dataset_load(
    events: *const c_char,
    features: *const c_char,
    window: u32,
    out: *mut *mut PseDataset,
) -> PseStatus {
    guard(|| {
        if out.is_null() {
            return fail(PseStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let (events, features) = match (path_arg(events, "events"), path_arg(features, "features")) {
            (Ok(e), Ok(f)) => (e, f),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let window = if window == 0 { io::DEFAULT_WINDOW } else { window };
        match io::ingest(&events, &features, window) {
            Ok(ing) => {
                *out = Box::into_raw(Box::new(PseDataset { log: ing.log }));
                PseStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of users in the dataset, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle from [`pse_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn pse_dataset_user_count(ds: *const PseDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.log.users.len())
}

/// # Safety
/// `ds` must be null or a handle from [`pse_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pse_dataset_free(ds: *mut PseDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits the model to a dataset. `config` is an optional TOML run
/// configuration path (null for defaults). A non-zero `seed` overrides every
/// configured seed.
///
/// # Safety
/// `ds` must be a live dataset handle, `config` null or a NUL-terminated
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_fit(
    ds: *const PseDataset,
    config: *const c_char,
    sampler: PseSampler,
    seed: u64,
    out: *mut *mut PseFit,
) -> PseStatus {
    guard(|| {
        if out.is_null() {
            return fail(PseStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let Some(ds) = ds.as_ref() else {
            return fail(PseStatus::NullPointer, "dataset is null");
        };
        let cfg = if config.is_null() {
            Ok(RunConfig::default())
        } else {
            match path_arg(config, "config") {
                Ok(p) => RunConfig::load(&p),
                Err(s) => return s,
            }
        };
        let mut cfg = match cfg {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        if seed != 0 {
            cfg.set_seed(seed);
        }
        match sampler {
            PseSampler::FromConfig => {}
            PseSampler::Mcmc => cfg.sampler = SamplerKind::Mcmc,
            PseSampler::Sgld => cfg.sampler = SamplerKind::Sgld,
        }
        let run = || -> pse_core::Result<PseFit> {
            let built = io::build_inputs(&ds.log, cfg.min_iets)?;
            let model = cfg.model();
            let fit = match cfg.sampler {
                SamplerKind::Mcmc => samplers::mcmc_fit(&built.inputs, &cfg.prior, &model, &cfg.mcmc)?,
                SamplerKind::Sgld => samplers::sgld_fit(&built.inputs, &cfg.prior, &model, &cfg.sgld)?,
            };
            Ok(PseFit { fit, excluded: built.excluded.len() })
        };
        match run() {
            Ok(f) => {
                *out = Box::into_raw(Box::new(f));
                PseStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of users that entered estimation, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle from [`pse_fit`].
#[no_mangle]
pub unsafe extern "C" fn pse_fit_user_count(fit: *const PseFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.summary.users.len())
}

/// Number of dataset users left out of estimation, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle from [`pse_fit`].
#[no_mangle]
pub unsafe extern "C" fn pse_fit_excluded_count(fit: *const PseFit) -> usize {
    fit.as_ref().map_or(0, |f| f.excluded)
}

/// Posterior summary of user `index` in estimation order.
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_fit_user(fit: *const PseFit, index: usize, out: *mut PseUserSummary) -> PseStatus {
    guard(|| {
        let (Some(fit), false) = (fit.as_ref(), out.is_null()) else {
            return fail(PseStatus::NullPointer, "fit or out is null");
        };
        let Some(u) = fit.fit.summary.users.get(index) else {
            return fail(PseStatus::OutOfRange, format!("user index {index} out of range"));
        };
        *out = PseUserSummary {
            pse_mean: u.pse_mean,
            pse_lower: u.pse_lower,
            pse_upper: u.pse_upper,
            mean_iet: u.mean_iet,
            mean_focal_iet: u.mean_focal_iet,
        };
        PseStatus::Ok
    })
}

/// Copies the id of user `index` into `buf`. `needed`, if non-null, receives
/// the buffer size required including the terminating NUL.
///
/// # Safety
/// `fit` must be a live handle, `buf` null or `len` writable bytes, and
/// `needed` null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_fit_user_id(
    fit: *const PseFit,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PseStatus {
    guard(|| {
        let Some(fit) = fit.as_ref() else {
            return fail(PseStatus::NullPointer, "fit is null");
        };
        let Some(u) = fit.fit.summary.users.get(index) else {
            return fail(PseStatus::OutOfRange, format!("user index {index} out of range"));
        };
        let n = copy_out(u.user_id.as_bytes(), buf, len);
        if !needed.is_null() {
            *needed = n;
        }
        PseStatus::Ok
    })
}

/// Mean negative log-likelihood over post-burn-in iterations.
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pse_fit_neg_log_lik(fit: *const PseFit, out: *mut f64) -> PseStatus {
    guard(|| {
        let (Some(fit), false) = (fit.as_ref(), out.is_null()) else {
            return fail(PseStatus::NullPointer, "fit or out is null");
        };
        *out = fit.fit.post_burn_in_neg_log_lik();
        PseStatus::Ok
    })
}

/// Writes the fit files into directory `dir`, creating it if needed.
///
/// # Safety
/// `fit` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pse_fit_write(fit: *const PseFit, dir: *const c_char, theta_trace: bool) -> PseStatus {
    guard(|| {
        let Some(fit) = fit.as_ref() else {
            return fail(PseStatus::NullPointer, "fit is null");
        };
        let dir = match path_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match samplers::write_fit(&dir, &fit.fit, theta_trace) {
            Ok(_) => PseStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `fit` must be null or a handle from [`pse_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pse_fit_free(fit: *mut PseFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
