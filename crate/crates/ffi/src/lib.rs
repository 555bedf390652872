//! C ABI for seal-core.
//!
//! Objects cross the boundary as opaque handles created by `seal_*_new` /
//! `seal_*_from_*` functions and released by the matching `seal_*_free`.
//! Every fallible function returns a [`SealStatus`]; on failure the message
//! is kept per thread and can be read with [`seal_last_error`]. Strings
//! returned through out-pointers are owned by the caller and must be released
//! with [`seal_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use seal_core::cli::{self, Config, PipelineReport};
use seal_core::envs::{ingest_jsonl, parse_jsonl};
use seal_core::oracle::TabularMdp;
use seal_core::{Dataset, Discount, Error};

/// Status codes. `2`-`4` agree with the exit codes of the `seal` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SealStatus {
    Ok = 0,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

/// Parsed pipeline configuration.
pub struct SealConfig(Config);

/// Validated dataset of logged trajectories.
pub struct SealDataset(Dataset);

/// Result of a pipeline run.
pub struct SealReport(PipelineReport);

/// Which policy a report value refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SealPolicy {
    Seal = 0,
    Baseline = 1,
}

/// Which estimate a report value refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SealMethod {
    Fqe = 0,
    Mc = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SealStatus, msg: impl Into<String>) -> SealStatus {
    set_error(msg.into());
    status
}

fn from_core(e: Error) -> SealStatus {
    let status = match cli::exit_code(&e) {
        2 => SealStatus::ConfigError,
        4 => SealStatus::NumericError,
        _ => SealStatus::DataError,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`SealStatus::Panic`].
fn guard(f: impl FnOnce() -> SealStatus) -> SealStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SealStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, SealStatus> {
    if p.is_null() {
        return Err(fail(SealStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SealStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> SealStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            SealStatus::Ok
        }
        Err(_) => fail(SealStatus::DataError, "output contains a nul byte"),
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(SealStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn seal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn seal_version() -> *const c_char {
    static V: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version string"),
        };
    V.as_ptr()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn seal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a JSON config (same schema as the `--config` file).
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_config_from_json(
    json: *const c_char,
    out: *mut *mut SealConfig,
) -> SealStatus {
    guard(|| {
        non_null!(out);
        let text = try_ffi!(read_str(json));
        match Config::from_json(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(SealConfig(c)));
                SealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `cfg` must be a config handle not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn seal_config_set_seed(cfg: *mut SealConfig, seed: u64) -> SealStatus {
    guard(|| {
        non_null!(cfg);
        (*cfg).0.seed = seed;
        SealStatus::Ok
    })
}

/// # Safety
/// `cfg` must be a config handle not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn seal_config_free(cfg: *mut SealConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Rolls out the config's environment.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_generate(
    cfg: *const SealConfig,
    out: *mut *mut SealDataset,
) -> SealStatus {
    guard(|| {
        non_null!(cfg, out);
        let cfg = &(*cfg).0;
        let d = cfg
            .build_env()
            .and_then(|env| cli::generate_data(cfg, &env));
        match d {
            Ok(d) => {
                *out = Box::into_raw(Box::new(SealDataset(d)));
                SealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Reads a JSONL dataset file. `num_actions` of 0 means infer from the data.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_from_file(
    path: *const c_char,
    num_actions: usize,
    out: *mut *mut SealDataset,
) -> SealStatus {
    guard(|| {
        non_null!(out);
        let path = try_ffi!(read_str(path));
        let na = (num_actions > 0).then_some(num_actions);
        match ingest_jsonl(path, na) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(SealDataset(d)));
                SealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Parses JSONL dataset text held in memory.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_from_jsonl(
    text: *const c_char,
    num_actions: usize,
    out: *mut *mut SealDataset,
) -> SealStatus {
    guard(|| {
        non_null!(out);
        let text = try_ffi!(read_str(text));
        let na = (num_actions > 0).then_some(num_actions);
        match parse_jsonl(text.as_bytes(), na) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(SealDataset(d)));
                SealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Serializes a dataset as JSONL into a new string.
///
/// # Safety
/// `d` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_to_jsonl(
    d: *const SealDataset,
    out: *mut *mut c_char,
) -> SealStatus {
    guard(|| {
        non_null!(d, out);
        write_string(out, seal_core::envs::to_jsonl_string(&(*d).0))
    })
}

/// Number of trajectories, or 0 for a null handle.
///
/// # Safety
/// `d` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_num_trajectories(d: *const SealDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.num_trajectories())
}

/// Total logged steps, or 0 for a null handle.
///
/// # Safety
/// `d` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_num_steps(d: *const SealDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.num_steps())
}

/// # Safety
/// `d` must be a dataset handle not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn seal_dataset_free(d: *mut SealDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Runs every stage on `data` and evaluates the SEAL and greedy-Q policies.
/// Monte Carlo values need an `env` block in the config.
///
/// # Safety
/// `cfg` and `data` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_pipeline_run(
    cfg: *const SealConfig,
    data: *const SealDataset,
    out: *mut *mut SealReport,
) -> SealStatus {
    guard(|| {
        non_null!(cfg, data, out);
        let cfg = &(*cfg).0;
        let env = match cfg.env.as_ref().map(|_| cfg.build_env()).transpose() {
            Ok(e) => e,
            Err(e) => return from_core(e),
        };
        match cli::run_pipeline(cfg, &(*data).0, env.as_ref()) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(SealReport(run.report)));
                SealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Reads one value out of a report. Fails with `DataError` when that value
/// was not computed.
///
/// # Safety
/// `report` must be a live report handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_report_value(
    report: *const SealReport,
    policy: SealPolicy,
    method: SealMethod,
    value: *mut f64,
) -> SealStatus {
    guard(|| {
        non_null!(report, value);
        let r = &(*report).0;
        let v = match policy {
            SealPolicy::Seal => r.seal,
            SealPolicy::Baseline => r.baseline,
        };
        let x = match method {
            SealMethod::Fqe => v.fqe,
            SealMethod::Mc => v.mc,
        };
        match x {
            Some(x) => {
                *value = x;
                SealStatus::Ok
            }
            None => fail(
                SealStatus::DataError,
                format!("{method:?} value of {policy:?} was not computed"),
            ),
        }
    })
}

/// Pretty JSON of the whole report, byte-identical to `report.json`.
///
/// # Safety
/// `report` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_report_to_json(
    report: *const SealReport,
    out: *mut *mut c_char,
) -> SealStatus {
    guard(|| {
        non_null!(report, out);
        match serde_json::to_string_pretty(&(*report).0) {
            Ok(mut s) => {
                s.push('\n');
                write_string(out, s)
            }
            Err(e) => fail(SealStatus::DataError, e.to_string()),
        }
    })
}

/// # Safety
/// `report` must be a report handle not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn seal_report_free(report: *mut SealReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Exact Q*, contrast and ratio tables of a tabular MDP given as JSON
/// (`{"nS", "nA", "P", "r", "b"}`), written as JSON into a new string.
///
/// # Safety
/// `mdp_json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seal_oracle_tables(
    mdp_json: *const c_char,
    gamma: f64,
    a0: usize,
    out: *mut *mut c_char,
) -> SealStatus {
    guard(|| {
        non_null!(out);
        let text = try_ffi!(read_str(mdp_json));
        let tables = Discount::new(gamma)
            .and_then(|g| Ok((TabularMdp::from_json(text)?, g)))
            .and_then(|(m, g)| cli::oracle_tables(&m, g, a0))
            .and_then(|v| Ok(serde_json::to_string_pretty(&v)?));
        match tables {
            Ok(s) => write_string(out, s),
            Err(e) => from_core(e),
        }
    })
}
