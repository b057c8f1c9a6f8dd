//! C ABI for running energy-bandit experiments.
//!
//! Every fallible function returns an `int32_t` status, `EB_OK` on success
//! and a negative code otherwise, and writes results through out-pointers.
//! After a failure `eb_last_error()` describes what went wrong on the
//! calling thread. Handles are opaque and released with their `_free`
//! function; freeing NULL is a no-op.
//!
//! ```c
//! EbConfig *cfg = NULL;
//! if (eb_config_new("wheel", "thompson", &cfg) != EB_OK) {
//!     fprintf(stderr, "%s\n", eb_last_error());
//!     return 1;
//! }
//! eb_config_set_horizon(cfg, 1000);
//! EbExperiment *exp = NULL;
//! eb_experiment_run(cfg, &exp);
//! double regret;
//! eb_experiment_final_mean_regret(exp, &regret);
//! eb_experiment_free(exp);
//! eb_config_free(cfg);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use energy_bandit::harness::{run_experiment, write_experiment, AgentKind, EnvKind, Experiment, RunConfig, Settings};
use energy_bandit::theory;
use energy_bandit::Error;

pub const EB_OK: i32 = 0;
pub const EB_ERR_NULL: i32 = -1;
pub const EB_ERR_UTF8: i32 = -2;
pub const EB_ERR_CONFIG: i32 = -3;
pub const EB_ERR_DIMENSION: i32 = -4;
pub const EB_ERR_CONTRACT: i32 = -5;
pub const EB_ERR_DOMAIN: i32 = -6;
pub const EB_ERR_NUMERIC: i32 = -7;
pub const EB_ERR_HORIZON: i32 = -8;
pub const EB_ERR_PARSE: i32 = -9;
pub const EB_ERR_IO: i32 = -10;
/// Index or buffer length out of range.
pub const EB_ERR_RANGE: i32 = -11;
/// A Rust panic was caught at the boundary.
pub const EB_ERR_PANIC: i32 = -12;

/// Experiment settings. Create with `eb_config_new` or `eb_config_from_toml`.
pub struct EbConfig(RunConfig);

/// Completed runs of one experiment.
pub struct EbExperiment(Experiment);

/// Bound audit of one logit vector.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EbBoundReport {
    pub n: usize,
    pub mean_energy: f64,
    pub z_max: f64,
    pub z_min: f64,
    pub ratio: f64,
    pub bound: f64,
    pub z_max_bound: f64,
    pub satisfied_ratio: bool,
    pub satisfied_z_max: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Dimension { .. } => EB_ERR_DIMENSION,
            Error::Config { .. } => EB_ERR_CONFIG,
            Error::Contract(_) => EB_ERR_CONTRACT,
            Error::Domain { .. } => EB_ERR_DOMAIN,
            Error::Numeric(_) => EB_ERR_NUMERIC,
            Error::Horizon { .. } => EB_ERR_HORIZON,
            Error::Parse { .. } => EB_ERR_PARSE,
            Error::Io { .. } => EB_ERR_IO,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure(code, message.into())
}

/// Runs `f`, records any failure and converts panics into `EB_ERR_PANIC`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            EB_OK
        }
        Ok(Err(Failure(code, message))) => {
            set_last_error(&message);
            code
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            EB_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(EB_ERR_NULL, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EB_ERR_UTF8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(EB_ERR_NULL, format!("`{name}` is NULL")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(EB_ERR_NULL, format!("`{name}` is NULL")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(EB_ERR_NULL, "output pointer is NULL"));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn eb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Configuration with the task defaults for `env` and `agent`, given by
/// their command-line names, e.g. "rotating-wheel" and "energy-rnn".
///
/// # Safety
/// `env` and `agent` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_config_new(env: *const c_char, agent: *const c_char, out: *mut *mut EbConfig) -> i32 {
    guard(|| {
        let env: EnvKind = str_arg(env, "env")?.parse()?;
        let agent: AgentKind = str_arg(agent, "agent")?.parse()?;
        let cfg = RunConfig::new(env, agent);
        put(out, Box::into_raw(Box::new(EbConfig(cfg))))
    })
}

/// Configuration from the same `key = value` TOML the `bandit` tool reads.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_config_from_toml(text: *const c_char, out: *mut *mut EbConfig) -> i32 {
    guard(|| {
        let cfg = Settings::from_toml(str_arg(text, "text")?)?.resolve()?;
        put(out, Box::into_raw(Box::new(EbConfig(cfg))))
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eb_config_free(cfg: *mut EbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Applies `edit` and keeps it only if the result validates.
unsafe fn edit_config(cfg: *mut EbConfig, edit: impl FnOnce(&mut RunConfig)) -> i32 {
    guard(|| {
        let cfg = &mut mut_arg(cfg, "cfg")?.0;
        let mut next = cfg.clone();
        edit(&mut next);
        next.validate()?;
        *cfg = next;
        Ok(())
    })
}

/// Horizon T.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_horizon(cfg: *mut EbConfig, v: usize) -> i32 {
    edit_config(cfg, |c| c.horizon = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_runs(cfg: *mut EbConfig, v: usize) -> i32 {
    edit_config(cfg, |c| c.runs = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_seed(cfg: *mut EbConfig, v: u64) -> i32 {
    edit_config(cfg, |c| c.seed = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_workers(cfg: *mut EbConfig, v: usize) -> i32 {
    edit_config(cfg, |c| c.workers = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_alpha_ec(cfg: *mut EbConfig, v: f64) -> i32 {
    edit_config(cfg, |c| c.agent_config.alpha_ec = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_hidden(cfg: *mut EbConfig, v: usize) -> i32 {
    edit_config(cfg, |c| c.agent_config.hidden = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_layers(cfg: *mut EbConfig, v: usize) -> i32 {
    edit_config(cfg, |c| c.agent_config.layers = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_learning_rate(cfg: *mut EbConfig, v: f64) -> i32 {
    edit_config(cfg, |c| c.agent_config.learning_rate = v)
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_dropout(cfg: *mut EbConfig, v: f64) -> i32 {
    edit_config(cfg, |c| c.agent_config.p_dropout = v)
}

/// Audit the policy logits every 100 steps.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn eb_config_set_audit_bound(cfg: *mut EbConfig, v: bool) -> i32 {
    edit_config(cfg, |c| c.audit_bound = v)
}

/// Runs every seeded run of `cfg`. Runs that abort are skipped; see
/// `eb_experiment_aborted_count`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_run(cfg: *const EbConfig, out: *mut *mut EbExperiment) -> i32 {
    guard(|| {
        let cfg = &ref_arg(cfg, "cfg")?.0;
        if out.is_null() {
            return Err(fail(EB_ERR_NULL, "output pointer is NULL"));
        }
        let exp = run_experiment(cfg)?;
        put(out, Box::into_raw(Box::new(EbExperiment(exp))))
    })
}

/// # Safety
/// `exp` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_free(exp: *mut EbExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_run_count(exp: *const EbExperiment, out: *mut usize) -> i32 {
    guard(|| put(out, ref_arg(exp, "exp")?.0.runs.len()))
}

/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_aborted_count(exp: *const EbExperiment, out: *mut usize) -> i32 {
    guard(|| put(out, ref_arg(exp, "exp")?.0.aborted.len()))
}

/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_horizon(exp: *const EbExperiment, out: *mut usize) -> i32 {
    guard(|| put(out, ref_arg(exp, "exp")?.0.config.horizon))
}

/// Mean cumulative regret over completed runs at the final step.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_final_mean_regret(exp: *const EbExperiment, out: *mut f64) -> i32 {
    guard(|| {
        let series = ref_arg(exp, "exp")?.0.series()?;
        put(out, series.final_mean())
    })
}

/// Copies the per-step mean and standard error of cumulative regret into
/// `mean` and `stderr` (either may be NULL). Both hold `len` doubles and
/// `len` must equal the horizon.
///
/// # Safety
/// Non-NULL buffers must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_regret_series(
    exp: *const EbExperiment,
    mean: *mut f64,
    stderr: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let series = ref_arg(exp, "exp")?.0.series()?;
        if len != series.horizon() {
            return Err(fail(EB_ERR_RANGE, format!("buffer holds {len} values, horizon is {}", series.horizon())));
        }
        for (buf, src) in [(mean, &series.mean), (stderr, &series.stderr)] {
            if !buf.is_null() {
                std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Copies the arms pulled in completed run `run` (0-based among completed
/// runs) into `arms`, which holds `len` == horizon values.
///
/// # Safety
/// `arms` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_run_arms(exp: *const EbExperiment, run: usize, arms: *mut u32, len: usize) -> i32 {
    guard(|| {
        let exp = &ref_arg(exp, "exp")?.0;
        let trace = exp
            .runs
            .get(run)
            .ok_or_else(|| fail(EB_ERR_RANGE, format!("run {run} of {}", exp.runs.len())))?;
        if len != trace.len() {
            return Err(fail(EB_ERR_RANGE, format!("buffer holds {len} values, run has {}", trace.len())));
        }
        let dst = mut_arg(arms, "arms").map(|p| std::slice::from_raw_parts_mut(p, len))?;
        for (d, &a) in dst.iter_mut().zip(&trace.arms) {
            *d = a as u32;
        }
        Ok(())
    })
}

/// Writes runs.csv, aggregate.csv and config.toml into `dir`, creating it.
///
/// # Safety
/// `exp` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eb_experiment_write(exp: *const EbExperiment, dir: *const c_char) -> i32 {
    guard(|| {
        let exp = &ref_arg(exp, "exp")?.0;
        write_experiment(Path::new(str_arg(dir, "dir")?), exp)?;
        Ok(())
    })
}

/// Principal branch of the Lambert W function.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_lambert_w0(x: f64, out: *mut f64) -> i32 {
    guard(|| put(out, theory::lambert_w0(x)?))
}

/// Bound on max p / min p for `n` arms under conserved energy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_ratio_bound(n: usize, out: *mut f64) -> i32 {
    guard(|| put(out, theory::ratio_bound(n)?))
}

/// Bound on the largest logit for `n` arms under conserved energy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_z_max_bound(n: usize, out: *mut f64) -> i32 {
    guard(|| put(out, theory::z_max_bound(n)?))
}

/// Audits `n` logits against both bounds.
///
/// # Safety
/// `logits` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_audit_logits(logits: *const f64, n: usize, out: *mut EbBoundReport) -> i32 {
    guard(|| {
        let z = ref_arg(logits, "logits").map(|p| std::slice::from_raw_parts(p, n))?;
        let r = theory::audit_logits(z)?;
        put(
            out,
            EbBoundReport {
                n: r.n,
                mean_energy: r.mean_energy,
                z_max: r.z_max,
                z_min: r.z_min,
                ratio: r.ratio,
                bound: r.bound,
                z_max_bound: r.z_max_bound,
                satisfied_ratio: r.satisfied_ratio,
                satisfied_z_max: r.satisfied_z_max,
            },
        )
    })
}
