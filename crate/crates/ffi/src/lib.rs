//! C ABI over `setpoint-oco`.
//!
//! Every entry point returns an [`SpoStatus`]; on failure the message is
//! available from [`spo_last_error`] on the same thread. Handles are opaque
//! and owned by the caller once returned, to be released with the matching
//! `*_free` function. Pointer arguments must be valid for the stated length
//! or null where documented; strings are NUL-terminated UTF-8.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setpoint_oco::algorithms::{Bcogd, Cogd, FeedbackObservation, OnlineAlgorithm};
use setpoint_oco::config::ConfigFile;
use setpoint_oco::oco::{Bounds, LossParams};
use setpoint_oco::sim::{run_experiment, ExperimentResult, RoundRow, ScenarioConfig};
use setpoint_oco::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidConfiguration = 4,
    FeedbackMismatch = 5,
    Runtime = 6,
    Panic = 7,
}

/// Per-round series of an experiment result.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpoSeries {
    Setpoint = 0,
    Adjustment = 1,
    Loss = 2,
    CumulativeLoss = 3,
    BaselineCumulativeLoss = 4,
    Regret = 5,
    MeanNorm = 6,
    L1Norm = 7,
}

/// Trial-averaged headline numbers. Fields that do not apply are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpoSummary {
    pub improvement_pct: f64,
    pub unregularized_improvement_pct: f64,
    pub mean_improvement_pct: f64,
    pub sparsity_improvement_pct: f64,
    /// Fraction in [0, 1] (EV only).
    pub simultaneity: f64,
    pub regret: f64,
    pub regret_bound: f64,
    pub bandit_fraction: f64,
}

/// A resolved experiment configuration.
pub struct SpoConfig {
    inner: ScenarioConfig,
}

/// Results of one experiment.
pub struct SpoResult {
    inner: ExperimentResult,
}

/// An online algorithm driven one round at a time.
pub struct SpoAlgorithm {
    inner: Box<dyn OnlineAlgorithm>,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SpoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match root(&e) {
            Error::DimensionMismatch { .. } => SpoStatus::DimensionMismatch,
            Error::FeedbackMismatch { .. } => SpoStatus::FeedbackMismatch,
            Error::InvalidConfiguration(_) | Error::UnsupportedBox { .. } => {
                SpoStatus::InvalidConfiguration
            }
            Error::InvalidArgument(_) | Error::InvalidRanges(_) => SpoStatus::InvalidArgument,
            _ => SpoStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn root(e: &Error) -> &Error {
    match e {
        Error::AtRound { source, .. } => root(source),
        other => other,
    }
}

fn null(what: &str) -> Failure {
    Failure(SpoStatus::NullPointer, format!("{what} is null"))
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpoStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            SpoStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        Failure(
            SpoStatus::InvalidArgument,
            format!("{what} is not UTF-8: {e}"),
        )
    })
}

unsafe fn out<T>(ptr: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    *ptr = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn spo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn spo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Number of experiments in a TOML configuration.
#[no_mangle]
pub unsafe extern "C" fn spo_config_count(toml: *const c_char, count: *mut usize) -> SpoStatus {
    guard(|| {
        let file = ConfigFile::parse(text(toml, "toml")?)?;
        *handle_mut(count, "count")? = file.layers().len();
        Ok(())
    })
}

/// Resolves experiment `index` of a TOML configuration.
#[no_mangle]
pub unsafe extern "C" fn spo_config_parse(
    toml: *const c_char,
    index: usize,
    config: *mut *mut SpoConfig,
) -> SpoStatus {
    guard(|| {
        let file = ConfigFile::parse(text(toml, "toml")?)?;
        let layers = file.layers();
        let layer = layers.get(index).ok_or_else(|| {
            Failure(
                SpoStatus::InvalidArgument,
                format!(
                    "experiment {index} out of range ({} experiments)",
                    layers.len()
                ),
            )
        })?;
        let inner = layer.resolve()?;
        inner.validate()?;
        out(config, SpoConfig { inner }, "config")
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_config_set_seed(config: *mut SpoConfig, seed: u64) -> SpoStatus {
    guard(|| {
        handle_mut(config, "config")?.inner.seed = seed;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_config_set_trials(config: *mut SpoConfig, trials: usize) -> SpoStatus {
    guard(|| {
        let c = &mut handle_mut(config, "config")?.inner;
        let mut next = c.clone();
        next.trials = trials;
        next.validate()?;
        *c = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_config_set_rounds(config: *mut SpoConfig, rounds: usize) -> SpoStatus {
    guard(|| {
        let c = &mut handle_mut(config, "config")?.inner;
        let mut next = c.clone();
        next.rounds = rounds;
        next.validate()?;
        *c = next;
        Ok(())
    })
}

/// Sets `ρ` and `λ`.
#[no_mangle]
pub unsafe extern "C" fn spo_config_set_regularization(
    config: *mut SpoConfig,
    rho: f64,
    lambda: f64,
) -> SpoStatus {
    guard(|| {
        let c = &mut handle_mut(config, "config")?.inner;
        let mut next = c.clone();
        next.rho = rho;
        next.lambda = lambda;
        next.validate()?;
        *c = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_config_free(config: *mut SpoConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs every trial of the experiment.
#[no_mangle]
pub unsafe extern "C" fn spo_run(
    config: *const SpoConfig,
    result: *mut *mut SpoResult,
) -> SpoStatus {
    guard(|| {
        let inner = run_experiment(&handle(config, "config")?.inner)?;
        out(result, SpoResult { inner }, "result")
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_result_summary(
    result: *const SpoResult,
    summary: *mut SpoSummary,
) -> SpoStatus {
    guard(|| {
        let s = &handle(result, "result")?.inner.summary;
        let or_nan = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *handle_mut(summary, "summary")? = SpoSummary {
            improvement_pct: s.improvement,
            unregularized_improvement_pct: or_nan(s.unregularized_improvement),
            mean_improvement_pct: or_nan(s.mean_improvement),
            sparsity_improvement_pct: or_nan(s.sparsity_improvement),
            simultaneity: or_nan(s.simultaneity),
            regret: or_nan(s.regret),
            regret_bound: or_nan(s.regret_bound),
            bandit_fraction: or_nan(s.bandit_fraction),
        };
        Ok(())
    })
}

/// Number of rounds in each series.
#[no_mangle]
pub unsafe extern "C" fn spo_result_rounds(
    result: *const SpoResult,
    rounds: *mut usize,
) -> SpoStatus {
    guard(|| {
        *handle_mut(rounds, "rounds")? = handle(result, "result")?.inner.rounds.len();
        Ok(())
    })
}

/// Copies a trial-averaged series into `buffer`, which must hold exactly
/// as many values as there are rounds. Regret is NaN when not computed.
#[no_mangle]
pub unsafe extern "C" fn spo_result_series(
    result: *const SpoResult,
    series: SpoSeries,
    buffer: *mut f64,
    len: usize,
) -> SpoStatus {
    guard(|| {
        let rows = &handle(result, "result")?.inner.rounds;
        if len != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: len,
            }
            .into());
        }
        let pick: fn(&RoundRow) -> f64 = match series {
            SpoSeries::Setpoint => |r| r.setpoint,
            SpoSeries::Adjustment => |r| r.adjustment,
            SpoSeries::Loss => |r| r.loss,
            SpoSeries::CumulativeLoss => |r| r.cumulative_loss,
            SpoSeries::BaselineCumulativeLoss => |r| r.baseline_cumulative_loss,
            SpoSeries::Regret => |r| r.regret.unwrap_or(f64::NAN),
            SpoSeries::MeanNorm => |r| r.mean_norm,
            SpoSeries::L1Norm => |r| r.l1_norm,
        };
        for (slot, row) in slice_mut(buffer, len, "buffer")?.iter_mut().zip(rows) {
            *slot = pick(row);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_result_free(result: *mut SpoResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

unsafe fn bounds(dim: usize, lo: *const f64, hi: *const f64) -> Result<Bounds, Failure> {
    if lo.is_null() && hi.is_null() {
        return Ok(Bounds::symmetric(dim));
    }
    let lo = slice(lo, dim, "lo")?;
    let hi = slice(hi, dim, "hi")?;
    Ok(Bounds::new(lo.to_vec(), hi.to_vec())?)
}

/// Full-information composite online gradient descent over the box
/// `[lo, hi]` (both null for `[-1, 1]^dim`).
#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_cogd(
    dim: usize,
    lo: *const f64,
    hi: *const f64,
    eta: f64,
    rho: f64,
    lambda: f64,
    algorithm: *mut *mut SpoAlgorithm,
) -> SpoStatus {
    guard(|| {
        let inner = Cogd::new(bounds(dim, lo, hi)?, eta, LossParams::new(rho, lambda)?)?;
        let alg = SpoAlgorithm {
            inner: Box::new(inner),
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        out(algorithm, alg, "algorithm")
    })
}

/// Bandit variant seeing only the aggregate adjustment. Perturbation
/// directions are drawn from a generator seeded with `seed`.
#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_bcogd(
    dim: usize,
    lo: *const f64,
    hi: *const f64,
    eta: f64,
    delta: f64,
    rho: f64,
    lambda: f64,
    seed: u64,
    algorithm: *mut *mut SpoAlgorithm,
) -> SpoStatus {
    guard(|| {
        let params = LossParams::new(rho, lambda)?;
        let inner = Bcogd::new(bounds(dim, lo, hi)?, eta, delta, params)?;
        let alg = SpoAlgorithm {
            inner: Box::new(inner),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        out(algorithm, alg, "algorithm")
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_dim(
    algorithm: *const SpoAlgorithm,
    dim: *mut usize,
) -> SpoStatus {
    guard(|| {
        *handle_mut(dim, "dim")? = handle(algorithm, "algorithm")?.inner.dim();
        Ok(())
    })
}

/// Writes the signal to broadcast this round into `signal[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_play(
    algorithm: *mut SpoAlgorithm,
    signal: *mut f64,
    len: usize,
) -> SpoStatus {
    guard(|| {
        let alg = handle_mut(algorithm, "algorithm")?;
        let buffer = slice_mut(signal, len, "signal")?;
        if len != alg.inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: alg.inner.dim(),
                got: len,
            }
            .into());
        }
        let played = alg.inner.play(&mut alg.rng)?;
        buffer.copy_from_slice(&played);
        Ok(())
    })
}

unsafe fn observe(
    algorithm: *mut SpoAlgorithm,
    obs: FeedbackObservation,
    loss: *mut f64,
) -> Result<(), Failure> {
    let outcome = handle_mut(algorithm, "algorithm")?.inner.observe(&obs)?;
    if let Some(slot) = loss.as_mut() {
        *slot = outcome.loss;
    }
    Ok(())
}

/// Feeds back every load's response. `loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_observe_full(
    algorithm: *mut SpoAlgorithm,
    response: *const f64,
    len: usize,
    setpoint: f64,
    loss: *mut f64,
) -> SpoStatus {
    guard(|| {
        let response = slice(response, len, "response")?.to_vec();
        observe(
            algorithm,
            FeedbackObservation::Full { response, setpoint },
            loss,
        )
    })
}

/// Feeds back only the aggregate adjustment. `loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_observe_aggregate(
    algorithm: *mut SpoAlgorithm,
    total: f64,
    setpoint: f64,
    loss: *mut f64,
) -> SpoStatus {
    guard(|| {
        observe(
            algorithm,
            FeedbackObservation::Aggregate { total, setpoint },
            loss,
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_algorithm_free(algorithm: *mut SpoAlgorithm) {
    if !algorithm.is_null() {
        drop(Box::from_raw(algorithm));
    }
}
