//! C ABI for the channel-estimation lab.
//!
//! The surface is handle-based: a `ChanestLab` wraps one experiment
//! configuration; functions return [`ChanestStatus`] codes and report detail
//! through `chanest_last_error_message`. Strings returned through out-params
//! are owned by the caller and must be released with `chanest_string_free`.
//!
//! The matching header is generated into `include/chanest.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use chanest::analysis::{
    complexity_table, emit_outputs, run_experiment, ComplexityConstants, ExperimentConfig, Scale,
};
use chanest::channel::SystemConfig;
use chanest::estimators::{CnnArch, Estimator, FnnAttArch, NeuralEstimator};
use chanest::harness::{evaluate_mse, generate_splits};
use chanest::numerics::steering_vector;

/// Status codes of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChanestStatus {
    Ok = 0,
    /// Invalid configuration or arguments.
    ConfigError = 1,
    /// The operation itself failed.
    RuntimeError = 2,
    /// A required pointer was null.
    NullPointer = 3,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 4,
}

/// Opaque experiment handle.
pub struct ChanestLab {
    cfg: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &chanest::Error) -> ChanestStatus {
    match err {
        chanest::Error::Config(_) | chanest::Error::Toml(_) => ChanestStatus::ConfigError,
        _ => ChanestStatus::RuntimeError,
    }
}

fn guarded(f: impl FnOnce() -> ChanestStatus + std::panic::UnwindSafe) -> ChanestStatus {
    match catch_unwind(f) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            ChanestStatus::RuntimeError
        }
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, ChanestStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} is null"));
        return Err(ChanestStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        ChanestStatus::InvalidUtf8
    })
}

/// Library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn chanest_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn chanest_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned through an out-parameter.
///
/// # Safety
/// `s` must be a pointer previously returned by this library through a
/// `char**` out-parameter, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn chanest_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an experiment configuration from TOML text.
///
/// # Safety
/// `toml_text` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn chanest_lab_from_toml(
    toml_text: *const c_char,
    out: *mut *mut ChanestLab,
) -> ChanestStatus {
    if out.is_null() {
        set_error("out is null");
        return ChanestStatus::NullPointer;
    }
    let text = match utf8_arg(toml_text, "toml_text") {
        Ok(t) => t,
        Err(status) => return status,
    };
    guarded(AssertUnwindSafe(|| match ExperimentConfig::from_toml(text) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(ChanestLab { cfg }));
            ChanestStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }))
}

/// Loads an experiment configuration from a TOML file.
///
/// # Safety
/// As [`chanest_lab_from_toml`], with `path` a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn chanest_lab_from_file(
    path: *const c_char,
    out: *mut *mut ChanestLab,
) -> ChanestStatus {
    let path = match utf8_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            set_error(&format!("cannot read {path}: {e}"));
            return ChanestStatus::ConfigError;
        }
    };
    let c_text = match CString::new(text) {
        Ok(c) => c,
        Err(_) => {
            set_error("config contains NUL bytes");
            return ChanestStatus::ConfigError;
        }
    };
    chanest_lab_from_toml(c_text.as_ptr(), out)
}

/// Releases a lab handle.
///
/// # Safety
/// `lab` must come from a `chanest_lab_from_*` call and not be used after.
#[no_mangle]
pub unsafe extern "C" fn chanest_lab_free(lab: *mut ChanestLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Generates the train/val/test dataset file pairs under `out_dir`.
///
/// # Safety
/// `lab` must be a live handle; `out_dir` a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn chanest_lab_generate(
    lab: *const ChanestLab,
    out_dir: *const c_char,
) -> ChanestStatus {
    let Some(lab) = lab.as_ref() else {
        set_error("lab is null");
        return ChanestStatus::NullPointer;
    };
    let dir = match utf8_arg(out_dir, "out_dir") {
        Ok(d) => d,
        Err(status) => return status,
    };
    guarded(AssertUnwindSafe(|| {
        let cfg = &lab.cfg;
        let sys = cfg.resolved_system();
        let result = sys.validate().and_then(|_| {
            chanest::harness::build_dataset(
                &sys,
                cfg.experiment.mode,
                cfg.dataset.count,
                Path::new(dir),
                &cfg.experiment.name,
            )
        });
        match result {
            Ok(_) => ChanestStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Runs the experiment grid (resumable) and writes the result bundle and CSV
/// outputs under `out_dir`.
///
/// # Safety
/// `lab` must be a live handle; `out_dir` a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn chanest_lab_run(
    lab: *const ChanestLab,
    out_dir: *const c_char,
) -> ChanestStatus {
    let Some(lab) = lab.as_ref() else {
        set_error("lab is null");
        return ChanestStatus::NullPointer;
    };
    let dir = match utf8_arg(out_dir, "out_dir") {
        Ok(d) => d,
        Err(status) => return status,
    };
    guarded(AssertUnwindSafe(|| {
        let out = Path::new(dir);
        let result =
            run_experiment(&lab.cfg, out, &|_msg| {}).and_then(|bundle| emit_outputs(&bundle, out));
        match result {
            Ok(_) => ChanestStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Evaluates a trained checkpoint on the lab's test split and writes
/// `mse_<estimator>.csv` and `.json` under `out_dir`.
///
/// # Safety
/// `lab` must be a live handle; both paths valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn chanest_lab_eval_checkpoint(
    lab: *const ChanestLab,
    checkpoint_path: *const c_char,
    out_dir: *const c_char,
) -> ChanestStatus {
    let Some(lab) = lab.as_ref() else {
        set_error("lab is null");
        return ChanestStatus::NullPointer;
    };
    let ckpt = match utf8_arg(checkpoint_path, "checkpoint_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let dir = match utf8_arg(out_dir, "out_dir") {
        Ok(d) => d,
        Err(status) => return status,
    };
    guarded(AssertUnwindSafe(|| {
        let run = || -> chanest::Result<()> {
            let cfg = &lab.cfg;
            let sys = cfg.resolved_system();
            sys.validate()?;
            let est = NeuralEstimator::load(Path::new(ckpt))?;
            let (_train, _val, test_ds) =
                generate_splits(&sys, cfg.experiment.mode, cfg.dataset.count)?;
            let slots: Vec<usize> = (0..test_ds.snr_points().len()).collect();
            let report = evaluate_mse(&est as &dyn Estimator, &test_ds, &slots)?;
            std::fs::create_dir_all(dir)?;
            let json = serde_json::to_string_pretty(&report)?;
            std::fs::write(
                Path::new(dir).join(format!("mse_{}.json", report.estimator)),
                json,
            )?;
            let mut csv = String::from("estimator,snr_db,mse_linear,mse_db,stderr,n\n");
            for row in &report.rows {
                csv.push_str(&format!(
                    "{},{},{:.12e},{:.6},{:.6e},{}\n",
                    report.estimator, row.snr_db, row.mse_linear, row.mse_db, row.stderr, row.n
                ));
            }
            std::fs::write(
                Path::new(dir).join(format!("mse_{}.csv", report.estimator)),
                csv,
            )?;
            Ok(())
        };
        match run() {
            Ok(()) => ChanestStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Closed-form FLOPs/parameter table as a JSON string (caller frees with
/// `chanest_string_free`).
///
/// # Safety
/// `out_json` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn chanest_complexity_table_json(
    paper_scale: bool,
    include_acquisition: bool,
    drop_final_attention: bool,
    out_json: *mut *mut c_char,
) -> ChanestStatus {
    if out_json.is_null() {
        set_error("out_json is null");
        return ChanestStatus::NullPointer;
    }
    guarded(AssertUnwindSafe(|| {
        let mut constants = ComplexityConstants::paper();
        if !paper_scale {
            let desk = SystemConfig::desk();
            constants.n_antennas = desk.n_antennas;
            constants.n_rf_chains = desk.n_rf_chains;
            constants.cnn = CnnArch::desk();
            constants.fnn_att = FnnAttArch::desk();
        }
        constants.include_acquisition = include_acquisition;
        constants.drop_final_attention = drop_final_attention;
        let result = complexity_table(&constants)
            .and_then(|t| serde_json::to_string_pretty(&t).map_err(chanest::Error::from));
        match result {
            Ok(json) => {
                *out_json = CString::new(json).unwrap().into_raw();
                ChanestStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Fills `out` with the length-`2 * n_antennas` interleaved re/im steering
/// vector for a half-wavelength ULA.
///
/// # Safety
/// `out` must point to at least `2 * n_antennas` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn chanest_steering_vector(
    theta: f64,
    n_antennas: usize,
    out: *mut f64,
) -> ChanestStatus {
    if out.is_null() {
        set_error("out is null");
        return ChanestStatus::NullPointer;
    }
    if n_antennas == 0 {
        set_error("n_antennas must be >= 1");
        return ChanestStatus::ConfigError;
    }
    let v = steering_vector(theta, n_antennas);
    let dst = std::slice::from_raw_parts_mut(out, 2 * n_antennas);
    for (i, z) in v.iter().enumerate() {
        dst[2 * i] = z.re;
        dst[2 * i + 1] = z.im;
    }
    ChanestStatus::Ok
}

// Referenced so the scale enum stays exercised from this crate.
#[allow(dead_code)]
fn _scale_used(s: Scale) -> bool {
    s == Scale::Desk
}
