//! C ABI for scglm-core.
//!
//! Objects are opaque handles released with their `_free` function. Every
//! fallible call returns a `ScglmStatus`; on failure `scglm_last_error()`
//! gives a message for the calling thread. Panics never cross the boundary.

use scglm_core::base_matrix::{adjusted_rows, BaseMatrix, CouplingParams};
use scglm_core::channels::Channel;
use scglm_core::gamp::{sample_problem, Gamp, GampOptions};
use scglm_core::harness::{execute, Command, ExperimentConfig};
use scglm_core::potential::{GridSpec, Potential, PotentialCurve};
use scglm_core::priors::DiscretePrior;
use scglm_core::se::{bayes_se_run, SeOptions};
use scglm_core::sensing::{Backend, SensingOperator};
use scglm_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScglmStatus {
    Ok = 0,
    InvalidArgument = 1,
    BaseMatrix = 2,
    UnsupportedChannel = 3,
    Degenerate = 4,
    NonFinite = 5,
    Config = 6,
    Io = 7,
    Serialization = 8,
    NullPointer = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScglmChannelKind {
    PhaseRetrieval = 0,
    PhaseRetrievalNoisy = 1,
    Relu = 2,
    Linear = 3,
}

/// Output channel; `sigma2` is ignored by the noiseless kinds.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ScglmChannel {
    pub kind: ScglmChannelKind,
    pub sigma2: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScglmBackend {
    Dense = 0,
    Dct = 1,
}

pub struct ScglmPrior(DiscretePrior);
pub struct ScglmBase(BaseMatrix);
pub struct ScglmPotential(PotentialCurve);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ScglmStatus {
    match e {
        Error::InvalidArgument(_) => ScglmStatus::InvalidArgument,
        Error::BaseMatrix(_) => ScglmStatus::BaseMatrix,
        Error::UnsupportedChannel { .. } => ScglmStatus::UnsupportedChannel,
        Error::Degenerate { .. } => ScglmStatus::Degenerate,
        Error::NonFinite { .. } => ScglmStatus::NonFinite,
        Error::Config(_) => ScglmStatus::Config,
        Error::Io(_) => ScglmStatus::Io,
        Error::Serialization(_) => ScglmStatus::Serialization,
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> ScglmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScglmStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ScglmStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("panic: {msg}"));
            ScglmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn write<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

fn channel_of(c: ScglmChannel) -> Result<Channel, Fail> {
    let ch = match c.kind {
        ScglmChannelKind::PhaseRetrieval => Channel::PhaseRetrieval,
        ScglmChannelKind::PhaseRetrievalNoisy => Channel::PhaseRetrievalNoisy { sigma2: c.sigma2 },
        ScglmChannelKind::Relu => Channel::Relu,
        ScglmChannelKind::Linear => Channel::Linear { sigma2: c.sigma2 },
    };
    ch.validate()?;
    Ok(ch)
}

/// Check `out`, then build and box the handle, so a null `out` never leaks.
unsafe fn emit<T>(out: *mut *mut T, make: impl FnOnce() -> Result<T, Fail>) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    out.write(Box::into_raw(Box::new(make()?)));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scglm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if none failed.
#[no_mangle]
pub extern "C" fn scglm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// Priors

/// Two-point prior with unit variance, P(X = +a) = alpha.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn scglm_prior_two_point(alpha: f64, out: *mut *mut ScglmPrior) -> ScglmStatus {
    guard(|| emit(out, || Ok(ScglmPrior(DiscretePrior::two_point(alpha)?))))
}

/// Symmetric three-point prior {-b, 0, b}, P(X != 0) = alpha.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn scglm_prior_three_point(alpha: f64, out: *mut *mut ScglmPrior) -> ScglmStatus {
    guard(|| emit(out, || Ok(ScglmPrior(DiscretePrior::three_point(alpha)?))))
}

/// Discrete prior from `len` atoms and probabilities.
///
/// # Safety
/// `atoms` and `probs` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scglm_prior_custom(
    atoms: *const f64,
    probs: *const f64,
    len: usize,
    out: *mut *mut ScglmPrior,
) -> ScglmStatus {
    guard(|| {
        if atoms.is_null() || probs.is_null() {
            return Err(Fail::Null("atoms/probs"));
        }
        emit(out, || {
            let a = std::slice::from_raw_parts(atoms, len).to_vec();
            let p = std::slice::from_raw_parts(probs, len).to_vec();
            Ok(ScglmPrior(DiscretePrior::new(a, p)?))
        })
    })
}

/// # Safety
/// `prior` must come from a `scglm_prior_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn scglm_prior_free(prior: *mut ScglmPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// mmse(s) of the scalar channel sqrt(s) X + G.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scglm_prior_mmse(prior: *const ScglmPrior, s: f64, out: *mut f64) -> ScglmStatus {
    guard(|| {
        let p = deref(prior, "prior")?;
        if !(s >= 0.0) {
            return Err(Error::InvalidArgument(format!("snr must be nonnegative, got {s}")).into());
        }
        write(out, p.0.mmse(s), "out")
    })
}

/// Posterior mean and variance of X given X + sqrt(tau) G = q.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scglm_prior_posterior(
    prior: *const ScglmPrior,
    q: f64,
    tau: f64,
    mean: *mut f64,
    var: *mut f64,
) -> ScglmStatus {
    guard(|| {
        let p = deref(prior, "prior")?;
        let m = p.0.posterior_mean(q, tau)?;
        let v = p.0.posterior_mean_derivative(q, tau)? * tau;
        write(mean, m, "mean")?;
        write(var, v, "var")
    })
}

// ---------------------------------------------------------------------------
// Channels

/// g_out*(p, y; tau) and its derivative in p.
///
/// # Safety
/// `g` and `dg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scglm_channel_gout(
    channel: ScglmChannel,
    p: f64,
    y: f64,
    tau: f64,
    g: *mut f64,
    dg: *mut f64,
) -> ScglmStatus {
    guard(|| {
        let ch = channel_of(channel)?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")).into());
        }
        let (a, b) = ch.gout(p, y, tau);
        write(g, a, "g")?;
        write(dg, b, "dg")
    })
}

// ---------------------------------------------------------------------------
// Base matrices

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scglm_base_iid(out: *mut *mut ScglmBase) -> ScglmStatus {
    guard(|| emit(out, || Ok(ScglmBase(BaseMatrix::iid()))))
}

/// (omega, lambda) base matrix with lambda + omega - 1 row blocks.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scglm_base_omega_lambda(omega: usize, lambda: usize, out: *mut *mut ScglmBase) -> ScglmStatus {
    guard(|| {
        emit(out, || {
            Ok(ScglmBase(BaseMatrix::omega_lambda(CouplingParams { omega, lambda })?))
        })
    })
}

/// # Safety
/// `base` must come from a `scglm_base_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn scglm_base_free(base: *mut ScglmBase) {
    if !base.is_null() {
        drop(Box::from_raw(base));
    }
}

/// Number of row blocks R and column blocks C.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scglm_base_shape(base: *const ScglmBase, rows: *mut usize, cols: *mut usize) -> ScglmStatus {
    guard(|| {
        let b = deref(base, "base")?;
        write(rows, b.0.rows(), "rows")?;
        write(cols, b.0.cols(), "cols")
    })
}

/// m = R round(delta n / R) and the effective ratio m / n.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn scglm_adjusted_rows(
    delta: f64,
    n: usize,
    rows: usize,
    m: *mut usize,
    effective_delta: *mut f64,
) -> ScglmStatus {
    guard(|| {
        if !(delta > 0.0) || n == 0 || rows == 0 {
            return Err(Error::InvalidArgument("delta, n and rows must be positive".into()).into());
        }
        let (mm, d) = adjusted_rows(delta, n, rows);
        write(m, mm, "m")?;
        write(effective_delta, d, "effective_delta")
    })
}

// ---------------------------------------------------------------------------
// State evolution and potential

/// Run block-wise Bayes state evolution to convergence.
///
/// # Safety
/// Pointers must be valid; `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn scglm_se_run(
    base: *const ScglmBase,
    prior: *const ScglmPrior,
    channel: ScglmChannel,
    delta: f64,
    tol: f64,
    max_iter: usize,
    final_mse: *mut f64,
    iterations: *mut usize,
) -> ScglmStatus {
    guard(|| {
        let b = deref(base, "base")?;
        let p = deref(prior, "prior")?;
        let tr = bayes_se_run(&b.0, &p.0, channel_of(channel)?, delta, SeOptions { tol, max_iter })?;
        write(final_mse, tr.final_mse(), "final_mse")?;
        if !iterations.is_null() {
            iterations.write(tr.iterations());
        }
        Ok(())
    })
}

/// Potential U(x; delta) on `points` equispaced x in [x_min, x_max].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scglm_potential_new(
    prior: *const ScglmPrior,
    channel: ScglmChannel,
    delta: f64,
    points: usize,
    x_min: f64,
    x_max: f64,
    out: *mut *mut ScglmPotential,
) -> ScglmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let p = deref(prior, "prior")?;
        let grid = GridSpec {
            points,
            x_min,
            x_max,
            lower_limit: GridSpec::default().lower_limit.min(x_min),
            ..GridSpec::default()
        };
        grid.validate()?;
        let c = Potential::new(&p.0, channel_of(channel)?, delta)?.curve(&grid)?;
        emit(out, || Ok(ScglmPotential(c)))
    })
}

/// # Safety
/// `pot` must come from `scglm_potential_new`, or be null.
#[no_mangle]
pub unsafe extern "C" fn scglm_potential_free(pot: *mut ScglmPotential) {
    if !pot.is_null() {
        drop(Box::from_raw(pot));
    }
}

/// Number of grid points.
///
/// # Safety
/// `pot` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn scglm_potential_len(pot: *const ScglmPotential) -> usize {
    pot.as_ref().map_or(0, |p| p.0.grid_x.len())
}

/// Copy grid x and U values into caller buffers of length `len`
/// (must equal `scglm_potential_len`). `is_stationary` may be null.
///
/// # Safety
/// Buffers must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn scglm_potential_copy(
    pot: *const ScglmPotential,
    x: *mut f64,
    u: *mut f64,
    is_stationary: *mut u8,
    len: usize,
) -> ScglmStatus {
    guard(|| {
        let p = &deref(pot, "pot")?.0;
        if len != p.grid_x.len() {
            return Err(Error::InvalidArgument(format!("buffer length {len}, curve has {}", p.grid_x.len())).into());
        }
        if x.is_null() || u.is_null() {
            return Err(Fail::Null("x/u"));
        }
        std::slice::from_raw_parts_mut(x, len).copy_from_slice(&p.grid_x);
        std::slice::from_raw_parts_mut(u, len).copy_from_slice(&p.grid_u);
        if !is_stationary.is_null() {
            let s = std::slice::from_raw_parts_mut(is_stationary, len);
            for (i, v) in s.iter_mut().enumerate() {
                *v = p.is_stationary(i) as u8;
            }
        }
        Ok(())
    })
}

/// Grid global minimizer and largest stationary point.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scglm_potential_summary(
    pot: *const ScglmPotential,
    global_minimizer: *mut f64,
    largest_stationary: *mut f64,
) -> ScglmStatus {
    guard(|| {
        let p = &deref(pot, "pot")?.0;
        write(global_minimizer, p.global_minimizer, "global_minimizer")?;
        write(largest_stationary, p.largest_stationary, "largest_stationary")
    })
}

// ---------------------------------------------------------------------------
// SC-GAMP

/// One SC-GAMP trial: draw the operator, signal and outputs from the seeds,
/// run to convergence and report the final MSE.
///
/// # Safety
/// Pointers must be valid; `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn scglm_gamp_trial(
    base: *const ScglmBase,
    prior: *const ScglmPrior,
    channel: ScglmChannel,
    backend: ScglmBackend,
    m: usize,
    n: usize,
    operator_seed: u64,
    signal_seed: u64,
    noise_seed: u64,
    max_iter: usize,
    rel_tol: f64,
    final_mse: *mut f64,
    iterations: *mut usize,
) -> ScglmStatus {
    guard(|| {
        let b = deref(base, "base")?;
        let p = deref(prior, "prior")?;
        let ch = channel_of(channel)?;
        let be = match backend {
            ScglmBackend::Dense => Backend::Dense,
            ScglmBackend::Dct => Backend::Dct,
        };
        let op = SensingOperator::sample(be, &b.0, m, n, operator_seed, true)?;
        let (x, y) = sample_problem(&op, &p.0, &ch, signal_seed, noise_seed)?;
        let res = Gamp::new(&op, &p.0, ch, &y)?.run(Some(&x), GampOptions { max_iter, rel_tol })?;
        write(final_mse, res.final_mse().unwrap_or(f64::NAN), "final_mse")?;
        if !iterations.is_null() {
            iterations.write(res.iterations);
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Harness

/// Run a harness command ("potential", "se", "run", "figure2", "figure3",
/// "figure4") with a TOML config, writing CSVs and the JSON sidecar.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn scglm_execute(command: *const c_char, config_toml: *const c_char) -> ScglmStatus {
    guard(|| {
        let cmd = match str_arg(command, "command")? {
            "potential" => Command::Potential,
            "se" => Command::Se,
            "run" => Command::Run,
            "figure2" => Command::Figure2,
            "figure3" => Command::Figure3,
            "figure4" => Command::Figure4,
            other => return Err(Error::InvalidArgument(format!("unknown command '{other}'")).into()),
        };
        let cfg = ExperimentConfig::parse_str(str_arg(config_toml, "config_toml")?)?;
        execute(cmd, &cfg, &|_| {})?;
        Ok(())
    })
}
