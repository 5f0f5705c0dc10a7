//! C ABI for the cooling engine.
//!
//! All entry points return a status code; results come back through out
//! pointers. Protocol runs are held behind an opaque handle that must be
//! released with `spincool_run_free`. A human-readable message for the
//! most recent failure on the calling thread is available through
//! `spincool_last_error`.

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{AssertUnwindSafe, catch_unwind};

use spincool::dynamics::{ModelParams, SpinBasis};
use spincool::lindblad::{LindbladRates, run_protocol_open};
use spincool::postselect::{target_corr2, target_corr3};
use spincool::protocol::{IterationRecord, Strategy, run_protocol};
use spincool::Error;

/// Status codes returned by every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpincoolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    NumericFailure = 3,
    OutOfRange = 4,
    Panic = 5,
}

/// Model parameters; times and rates are in units of the mechanical
/// frequency.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpincoolParams {
    pub lambda: f64,
    pub t: f64,
    pub nbar: f64,
    pub n_spins: usize,
    pub dim: usize,
    /// 0 = product basis, 1 = collective (Dicke) basis.
    pub basis: i32,
}

/// Decay rates for the open-system run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpincoolRates {
    pub gamma: f64,
    pub spin_relaxation: f64,
    pub dephasing: f64,
    pub nbar_bath: f64,
}

/// One iteration of the cooling protocol.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpincoolRecord {
    pub index: usize,
    pub mean_phonon: f64,
    pub ratio: f64,
    pub dx: f64,
    pub dy: f64,
    pub step_probability: f64,
    pub cumulative_probability: f64,
}

/// Postselection strategies selectable over the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpincoolStrategy {
    Independent = 0,
    Corr2 = 1,
    Corr3 = 2,
    Collective = 3,
}

/// Opaque handle to a finished protocol run.
pub struct SpincoolRun {
    records: Vec<IterationRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> SpincoolStatus {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::BasisMismatch(_)
        | Error::UnsupportedBasis(_) | Error::DimensionMismatch(_) => {
            SpincoolStatus::InvalidConfig
        }
        _ => SpincoolStatus::NumericFailure,
    }
}

fn guarded(f: impl FnOnce() -> SpincoolStatus) -> SpincoolStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            SpincoolStatus::Panic
        }
    }
}

fn to_params(p: &SpincoolParams) -> Result<ModelParams, SpincoolStatus> {
    let basis = match p.basis {
        0 => SpinBasis::Product,
        1 => SpinBasis::Collective,
        other => {
            set_error(format!("basis {other} is not 0 (product) or 1 (collective)"));
            return Err(SpincoolStatus::InvalidConfig);
        }
    };
    let params = ModelParams {
        lambda: p.lambda,
        t: p.t,
        nbar: p.nbar,
        n_spins: p.n_spins,
        dim: p.dim,
        basis,
    };
    params.validate().map_err(|e| {
        set_error(e.to_string());
        SpincoolStatus::InvalidConfig
    })?;
    Ok(params)
}

fn to_strategy(s: SpincoolStrategy) -> Strategy {
    match s {
        SpincoolStrategy::Independent => Strategy::Independent,
        SpincoolStrategy::Corr2 => Strategy::Correlated(target_corr2()),
        SpincoolStrategy::Corr3 => Strategy::Correlated(target_corr3()),
        SpincoolStrategy::Collective => Strategy::Collective,
    }
}

fn finish_run(
    result: Result<Vec<IterationRecord>, Error>,
    out: *mut *mut SpincoolRun,
) -> SpincoolStatus {
    match result {
        Ok(records) => {
            let handle = Box::new(SpincoolRun { records });
            unsafe { *out = Box::into_raw(handle) };
            SpincoolStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Run the closed-system cooling protocol.
///
/// On success `*out_run` owns the records; free it with
/// `spincool_run_free`.
///
/// # Safety
/// `params` and `out_run` must be valid, properly aligned pointers.
#[no_mangle]
pub unsafe extern "C" fn spincool_run_protocol(
    params: *const SpincoolParams,
    strategy: SpincoolStrategy,
    iterations: usize,
    out_run: *mut *mut SpincoolRun,
) -> SpincoolStatus {
    guarded(|| {
        if params.is_null() || out_run.is_null() {
            set_error("null pointer argument");
            return SpincoolStatus::NullPointer;
        }
        let p = match to_params(unsafe { &*params }) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let strat = to_strategy(strategy);
        finish_run(run_protocol(&p, &strat, iterations), out_run)
    })
}

/// Run the open-system protocol (independent strategy, product basis).
///
/// # Safety
/// `params`, `rates` and `out_run` must be valid, properly aligned
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn spincool_run_protocol_open(
    params: *const SpincoolParams,
    rates: *const SpincoolRates,
    iterations: usize,
    dt: f64,
    out_run: *mut *mut SpincoolRun,
) -> SpincoolStatus {
    guarded(|| {
        if params.is_null() || rates.is_null() || out_run.is_null() {
            set_error("null pointer argument");
            return SpincoolStatus::NullPointer;
        }
        let p = match to_params(unsafe { &*params }) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let r = unsafe { &*rates };
        let lr = LindbladRates {
            gamma: r.gamma,
            spin_relaxation: r.spin_relaxation,
            dephasing: r.dephasing,
            nbar_bath: r.nbar_bath,
        };
        if let Err(e) = lr.validate() {
            set_error(e.to_string());
            return SpincoolStatus::InvalidConfig;
        }
        finish_run(
            run_protocol_open(&p, &Strategy::Independent, &lr, iterations, dt),
            out_run,
        )
    })
}

/// Number of records held by a run handle; 0 for null.
///
/// # Safety
/// `run` must be null or a pointer from a `spincool_run_*` call.
#[no_mangle]
pub unsafe extern "C" fn spincool_run_len(run: *const SpincoolRun) -> usize {
    if run.is_null() {
        return 0;
    }
    unsafe { &*run }.records.len()
}

/// Copy record `index` (0-based) into `*out_record`.
///
/// # Safety
/// `run` must come from a `spincool_run_*` call and `out_record` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spincool_run_record(
    run: *const SpincoolRun,
    index: usize,
    out_record: *mut SpincoolRecord,
) -> SpincoolStatus {
    guarded(|| {
        if run.is_null() || out_record.is_null() {
            set_error("null pointer argument");
            return SpincoolStatus::NullPointer;
        }
        let records = &unsafe { &*run }.records;
        let Some(r) = records.get(index) else {
            set_error(format!("record index {index} out of range 0..{}", records.len()));
            return SpincoolStatus::OutOfRange;
        };
        unsafe {
            *out_record = SpincoolRecord {
                index: r.index,
                mean_phonon: r.mean_phonon,
                ratio: r.ratio,
                dx: r.dx,
                dy: r.dy,
                step_probability: r.step_probability,
                cumulative_probability: r.cumulative_probability,
            };
        }
        SpincoolStatus::Ok
    })
}

/// Release a run handle. Null is a no-op.
///
/// # Safety
/// `run` must be null or an owned pointer from a `spincool_run_*` call,
/// released at most once.
#[no_mangle]
pub unsafe extern "C" fn spincool_run_free(run: *mut SpincoolRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Dimensionless coupling from gradient (T/m), mass (kg) and angular
/// frequency (rad/s).
///
/// # Safety
/// `out_lambda` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spincool_estimate_coupling(
    gradient: f64,
    mass: f64,
    omega: f64,
    out_lambda: *mut f64,
) -> SpincoolStatus {
    guarded(|| {
        if out_lambda.is_null() {
            set_error("null pointer argument");
            return SpincoolStatus::NullPointer;
        }
        match spincool::cli::estimate_coupling(gradient, mass, omega) {
            Ok(l) => {
                unsafe { *out_lambda = l };
                SpincoolStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Copy the calling thread's last error message (NUL-terminated,
/// truncated to `len`) into `buf`; returns the untruncated length.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn spincool_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}
