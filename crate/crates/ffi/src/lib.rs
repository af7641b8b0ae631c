//! C ABI over `spikesync`.
//!
//! Every fallible call returns an [`SsStatus`]; on failure the message is
//! kept per thread and read back with [`ss_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spikesync::inference::{run_test, Hypothesis, TestSpec};
use spikesync::intensity::{
    build_conditional_design, build_marginal_design, fit_poisson_irls, HistoryCovariateSpec, IntensityFit, IrlsOptions,
    SplineBasis,
};
use spikesync::spikedata::{bin_trains, load_with_sidecar, BinnedTensor, ExperimentData, SpikeTrain};
use spikesync::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Convergence = 5,
    /// The data cannot support the requested estimate or test.
    Degenerate = 6,
    Infeasible = 7,
    Simulation = 8,
    Panic = 9,
}

impl From<&Error> for SsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SsStatus::Io,
            Error::Parse { .. } | Error::Json(_) => SsStatus::Parse,
            Error::Validation(_) | Error::Argument(_) | Error::Config(_) => SsStatus::InvalidArgument,
            Error::Convergence { .. } | Error::IpfConvergence { .. } | Error::Separation { .. } => {
                SsStatus::Convergence
            }
            Error::DegenerateModel(_)
            | Error::DegenerateTest(_)
            | Error::DegenerateRoc(_)
            | Error::InsufficientEvents { .. } => SsStatus::Degenerate,
            Error::InfeasibleTable { .. } | Error::Resolution { .. } => SsStatus::Infeasible,
            Error::Simulation(_) => SsStatus::Simulation,
        }
    }
}

/// Hypothesis tested by [`ss_test`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsHypothesis {
    PairMarginal = 0,
    PairConditional = 1,
    /// Uses `lag_bins`.
    PairLagged = 2,
    Triple = 3,
}

/// Spike times for every trial and neuron.
pub struct SsExperiment(ExperimentData);

/// Binary spike tensor.
pub struct SsBinned(BinnedTensor);

/// Fitted intensity for one neuron.
pub struct SsFit(IntensityFit);

/// Outcome of [`ss_test`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SsTestSummary {
    pub n_joint: usize,
    pub expected_joint: f64,
    pub xi_hat: f64,
    /// NaN when `xi_hat` is 0.
    pub log_xi: f64,
    pub se: f64,
    pub z: f64,
    pub p_normal: f64,
    pub p_empirical: f64,
    pub one_sided: bool,
    pub undefined_replicates: usize,
    pub reject: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SsStatus, msg: impl Into<String>) -> SsStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), SsStatus>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn check<T>(r: spikesync::Result<T>) -> Result<T, SsStatus> {
    r.map_err(|e| fail(SsStatus::from(&e), e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SsStatus> {
    p.as_ref()
        .ok_or_else(|| fail(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SsStatus> {
    p.as_mut()
        .ok_or_else(|| fail(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], SsStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ss_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an event file plus its `.meta.json` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_experiment_load(path: *const c_char, out: *mut *mut SsExperiment) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = deref(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(SsStatus::InvalidArgument, "path is not UTF-8"))?;
        let data = check(load_with_sidecar(Path::new(path)))?;
        *out = Box::into_raw(Box::new(SsExperiment(data)));
        Ok(())
    })
}

/// Builds an experiment from `n` spikes given as parallel arrays of 0-based
/// trial and neuron indices and times in seconds, in any order.
///
/// # Safety
/// Each array must hold `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_experiment_new(
    duration: f64,
    neurons: usize,
    trials: usize,
    trial: *const u32,
    neuron: *const u32,
    time: *const f64,
    n: usize,
    out: *mut *mut SsExperiment,
) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (trial, neuron, time) = (
            slice(trial, n, "trial")?,
            slice(neuron, n, "neuron")?,
            slice(time, n, "time")?,
        );
        let mut times = vec![vec![Vec::new(); neurons]; trials];
        for k in 0..n {
            let (r, i) = (trial[k] as usize, neuron[k] as usize);
            if r >= trials || i >= neurons {
                return Err(fail(
                    SsStatus::InvalidArgument,
                    format!("spike {k}: trial {r} or neuron {i} out of range"),
                ));
            }
            times[r][i].push(time[k]);
        }
        let data = check(
            times
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|t| SpikeTrain::from_unsorted(t, duration))
                        .collect()
                })
                .collect::<spikesync::Result<Vec<Vec<_>>>>()
                .and_then(|d| ExperimentData::new(duration, neurons, d)),
        )?;
        *out = Box::into_raw(Box::new(SsExperiment(data)));
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ss_experiment_free(exp: *mut SsExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Total number of spikes; 0 for NULL.
///
/// # Safety
/// `exp` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_experiment_spike_count(exp: *const SsExperiment) -> usize {
    exp.as_ref().map_or(0, |e| e.0.spike_count())
}

/// Bins every train at width `delta` seconds.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_bin(exp: *const SsExperiment, delta: f64, out: *mut *mut SsBinned) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let exp = deref(exp, "experiment")?;
        let binned = check(bin_trains(&exp.0, delta))?;
        *out = Box::into_raw(Box::new(SsBinned(binned)));
        Ok(())
    })
}

/// # Safety
/// `binned` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ss_binned_free(binned: *mut SsBinned) {
    if !binned.is_null() {
        drop(Box::from_raw(binned));
    }
}

/// Writes trials, neurons and bins; any of the outputs may be NULL.
///
/// # Safety
/// `binned` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_binned_shape(
    binned: *const SsBinned,
    trials: *mut usize,
    neurons: *mut usize,
    bins: *mut usize,
) -> SsStatus {
    guard(|| {
        let b = &deref(binned, "binned")?.0;
        for (p, v) in [(trials, b.trials()), (neurons, b.neurons()), (bins, b.bins())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Fits the intensity of 0-based `neuron` with a cubic spline in time.
/// Positive `own_window` and `population_window` (seconds) add history terms;
/// pass 0 for both to fit time only. `exclude` lists 0-based neurons left out
/// of the population count.
///
/// # Safety
/// `binned` must be a live handle; `exclude` must hold `n_exclude` elements;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_fit(
    binned: *const SsBinned,
    neuron: usize,
    knot_spacing: f64,
    own_window: f64,
    population_window: f64,
    exclude: *const usize,
    n_exclude: usize,
    ridge: f64,
    out: *mut *mut SsFit,
) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = &deref(binned, "binned")?.0;
        if neuron >= b.neurons() {
            return Err(fail(SsStatus::InvalidArgument, format!("neuron {neuron} out of range")));
        }
        let basis = check(SplineBasis::cubic(b.bins() as f64 * b.delta(), knot_spacing))?;
        let design = if own_window == 0.0 && population_window == 0.0 {
            check(build_marginal_design(b, neuron, &basis))?
        } else {
            let hist = check(HistoryCovariateSpec::new(
                own_window,
                population_window,
                slice(exclude, n_exclude, "exclude")?.to_vec(),
            ))?;
            check(build_conditional_design(b, neuron, &basis, &hist))?
        };
        let opts = IrlsOptions {
            ridge,
            ..IrlsOptions::default()
        };
        let fit = check(fit_poisson_irls(&design, &opts))?;
        *out = Box::into_raw(Box::new(SsFit(fit)));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ss_fit_free(fit: *mut SsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Intensity in events per second at time `t`. Fits with history terms
/// need `own` and `population` spike counts over their windows; they are
/// ignored otherwise.
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_fit_eval(fit: *const SsFit, t: f64, own: f64, population: f64, out: *mut f64) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let fit = &deref(fit, "fit")?.0;
        let hist = fit.has_history().then_some((own, population));
        *out = check(fit.eval(t, hist))?;
        Ok(())
    })
}

/// The fit as JSON; release with [`ss_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_fit_to_json(fit: *const SsFit, out: *mut *mut c_char) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let json = check(deref(fit, "fit")?.0.to_json())?;
        *out = CString::new(json)
            .map_err(|_| fail(SsStatus::Parse, "JSON contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Bootstrap test of excess synchrony among the neurons of `fits` (two, or
/// three for a triple), using `replicates` parametric replicates.
///
/// # Safety
/// `binned` must be a live handle; `fits` must hold `n_fits` live handles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_test(
    binned: *const SsBinned,
    fits: *const *const SsFit,
    n_fits: usize,
    hypothesis: SsHypothesis,
    lag_bins: usize,
    replicates: usize,
    alpha: f64,
    seed: u64,
    out: *mut SsTestSummary,
) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = &deref(binned, "binned")?.0;
        let fits = slice(fits, n_fits, "fits")?
            .iter()
            .map(|&f| deref(f, "fit").map(|f| f.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let hypothesis = match hypothesis {
            SsHypothesis::PairMarginal => Hypothesis::PairMarginal,
            SsHypothesis::PairConditional => Hypothesis::PairConditional,
            SsHypothesis::PairLagged => Hypothesis::PairLagged { lag_bins },
            SsHypothesis::Triple => Hypothesis::Triple,
        };
        let mut spec = TestSpec::new(hypothesis, fits.iter().map(|f| f.neuron).collect(), seed);
        spec.replicates = replicates;
        spec.alpha = alpha;
        let r = check(run_test(b, &fits, &spec))?;
        *out = SsTestSummary {
            n_joint: r.estimate.n_joint,
            expected_joint: r.estimate.expected_joint,
            xi_hat: r.estimate.xi_hat,
            log_xi: r.estimate.log_xi.unwrap_or(f64::NAN),
            se: r.bootstrap.se.unwrap_or(f64::NAN),
            z: r.bootstrap.z.unwrap_or(f64::NAN),
            p_normal: r.bootstrap.p_normal.unwrap_or(f64::NAN),
            p_empirical: r.bootstrap.p_empirical,
            one_sided: r.bootstrap.one_sided,
            undefined_replicates: r.bootstrap.undefined_count,
            reject: r.reject,
        };
        Ok(())
    })
}
