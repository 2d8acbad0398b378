//! C interface to `ris-cnnar`.
//!
//! Every fallible function returns an [`RisStatus`]; zero means success. On
//! failure a message is kept per thread and can be copied out with
//! [`ris_last_error`]. Objects are opaque handles created by a `*_new` or
//! `*_load` function and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use num_complex::Complex64;
use ris_cnnar::ar::ArModel;
use ris_cnnar::beamforming::pilot_overhead;
use ris_cnnar::bessel::bessel_j0;
use ris_cnnar::channel::{acf, CVector};
use ris_cnnar::classifier::{classify, preprocess, Checkpoint};
use ris_cnnar::experiment::{self, ExperimentId, ExperimentSpec};
use ris_cnnar::scenario::{ConfigFile, Scenario};
use ris_cnnar::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    Dimension = 7,
    MissingFile = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<&Error> for RisStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Toml(_) | Error::Dataset(_) => RisStatus::Config,
            Error::Domain(_) | Error::Aliasing { .. } | Error::IndexOutOfRange { .. } => {
                RisStatus::InvalidArgument
            }
            Error::Dimension(_)
            | Error::InsufficientHistory { .. }
            | Error::Identifiability { .. } => RisStatus::Dimension,
            Error::Factorization { .. }
            | Error::RankDeficient { .. }
            | Error::Unstable { .. }
            | Error::Degenerate(_) => RisStatus::Numerical,
            Error::Format(_) | Error::Json(_) => RisStatus::Format,
            Error::MissingFile(_) => RisStatus::MissingFile,
            Error::Io(_) => RisStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: RisStatus, msg: impl Into<String>) -> RisStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), RisStatus>) -> RisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RisStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(RisStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: ris_cnnar::Result<T>) -> Result<T, RisStatus> {
    r.map_err(|e| fail(RisStatus::from(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<Option<PathBuf>, RisStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(|s| Some(PathBuf::from(s)))
        .map_err(|_| fail(RisStatus::InvalidArgument, "path is not valid UTF-8"))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), RisStatus> {
    if p.is_null() {
        Err(fail(RisStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Copies the calling thread's last error message (NUL-terminated) into
/// `buf`. Returns `BufferTooSmall` when `len` cannot hold it.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ris_last_error(buf: *mut c_char, len: usize) -> RisStatus {
    if buf.is_null() {
        return RisStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if msg.len() + 1 > len {
            return RisStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, msg.len());
        *buf.add(msg.len()) = 0;
        RisStatus::Ok
    })
}

/// Bessel function of the first kind, order zero; NaN for non-finite input.
#[no_mangle]
pub extern "C" fn ris_bessel_j0(x: f64) -> f64 {
    bessel_j0(x).unwrap_or(f64::NAN)
}

/// Jakes autocorrelation `J0(2 pi f_n |lag|)`.
#[no_mangle]
pub extern "C" fn ris_jakes_acf(f_n: f64, lag: i64) -> f64 {
    acf(f_n, lag)
}

/// Opaque validated scenario.
pub struct RisScenario(Scenario);

/// Loads a TOML configuration; a null `path` gives the built-in defaults.
///
/// # Safety
/// `path` is null or a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ris_scenario_load(
    path: *const c_char,
    out: *mut *mut RisScenario,
) -> RisStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = match path_arg(path)? {
            Some(p) => lift(ConfigFile::load(&p))?,
            None => ConfigFile::default(),
        };
        let s = lift(cfg.into_scenario())?;
        *out = Box::into_raw(Box::new(RisScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `s` is null or a handle from [`ris_scenario_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ris_scenario_free(s: *mut RisScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Pilot symbol counts of element-wise and grouped estimation.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ris_pilot_overhead(
    s: *const RisScenario,
    conventional: *mut u64,
    proposed: *mut u64,
) -> RisStatus {
    guard(|| {
        non_null(s, "scenario")?;
        non_null(conventional, "conventional")?;
        non_null(proposed, "proposed")?;
        let r = pilot_overhead(&(*s).0.system);
        *conventional = r.conventional;
        *proposed = r.proposed;
        Ok(())
    })
}

/// Solves the order-`order` AR model of the loaded Jakes ACF. Writes
/// `order` coefficients (innovation sign convention) and the innovation
/// variance.
///
/// # Safety
/// `coeffs` points to `order` writable doubles; `variance` is valid.
#[no_mangle]
pub unsafe extern "C" fn ris_ar_for_doppler(
    f_n: f64,
    loading: f64,
    order: usize,
    coeffs: *mut f64,
    variance: *mut f64,
) -> RisStatus {
    guard(|| {
        non_null(coeffs, "coeffs")?;
        non_null(variance, "variance")?;
        let m = lift(ArModel::for_doppler(f_n, loading, order))?;
        std::ptr::copy_nonoverlapping(m.coeffs.as_ptr(), coeffs, m.coeffs.len());
        *variance = m.innovation_variance;
        Ok(())
    })
}

/// Opaque trained classifier with its AR bank.
pub struct RisCheckpoint(Checkpoint);

/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ris_checkpoint_load(
    path: *const c_char,
    out: *mut *mut RisCheckpoint,
) -> RisStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = path_arg(path)?.ok_or_else(|| fail(RisStatus::NullPointer, "path is null"))?;
        let c = lift(Checkpoint::load(&p))?;
        *out = Box::into_raw(Box::new(RisCheckpoint(c)));
        Ok(())
    })
}

/// # Safety
/// `c` is null or a handle from [`ris_checkpoint_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ris_checkpoint_free(c: *mut RisCheckpoint) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of Doppler classes, or 0 for a null handle.
///
/// # Safety
/// `c` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ris_checkpoint_classes(c: *const RisCheckpoint) -> usize {
    if c.is_null() {
        0
    } else {
        (*c).0.bank.len()
    }
}

/// Classifies `v` snapshots of an `n`-antenna channel given as separate real
/// and imaginary arrays, snapshot-major (`re[l * n + i]`).
///
/// # Safety
/// `re` and `im` point to `n * v` doubles; `class` is valid.
#[no_mangle]
pub unsafe extern "C" fn ris_checkpoint_classify(
    c: *const RisCheckpoint,
    re: *const f64,
    im: *const f64,
    n: usize,
    v: usize,
    class: *mut usize,
) -> RisStatus {
    guard(|| {
        non_null(c, "checkpoint")?;
        non_null(re, "re")?;
        non_null(im, "im")?;
        non_null(class, "class")?;
        if n == 0 || v == 0 {
            return Err(fail(RisStatus::InvalidArgument, "window must be non-empty"));
        }
        let re = std::slice::from_raw_parts(re, n * v);
        let im = std::slice::from_raw_parts(im, n * v);
        let snaps: Vec<CVector> = (0..v)
            .map(|l| CVector::from_fn(n, |i, _| Complex64::new(re[l * n + i], im[l * n + i])))
            .collect();
        let w = lift(preprocess(&snaps, 0))?;
        *class = lift(classify(&(*c).0.net, &w))?;
        Ok(())
    })
}

/// Runs one experiment (`nmse-vs-horizon`, `nmse-vs-doppler`,
/// `se-vs-distance` or `overhead`) and writes its CSV into `out_dir`.
/// `config` and `checkpoint` may be null.
///
/// # Safety
/// String arguments are null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ris_run_experiment(
    experiment: *const c_char,
    config: *const c_char,
    checkpoint: *const c_char,
    trials: usize,
    seed: u64,
    out_dir: *const c_char,
) -> RisStatus {
    guard(|| {
        non_null(experiment, "experiment")?;
        let id = CStr::from_ptr(experiment)
            .to_str()
            .map_err(|_| fail(RisStatus::InvalidArgument, "experiment is not valid UTF-8"))?;
        let id: ExperimentId = id
            .parse()
            .map_err(|e: Error| fail(RisStatus::InvalidArgument, e.to_string()))?;
        let out_dir =
            path_arg(out_dir)?.ok_or_else(|| fail(RisStatus::NullPointer, "out_dir is null"))?;
        let spec = ExperimentSpec {
            experiment: id,
            config: path_arg(config)?,
            trials,
            out_dir,
            seed,
            checkpoint: path_arg(checkpoint)?,
        };
        lift(experiment::run(&spec)).map(|_| ())
    })
}
