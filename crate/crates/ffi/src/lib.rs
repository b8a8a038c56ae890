//! C ABI over auxlab.
//!
//! Every fallible function returns an [`AuxlabStatus`]; on failure the
//! message is available from [`auxlab_last_error`] on the same thread until
//! the next call. Handles are opaque and must be released with their `free`
//! function. Strings returned to the caller are released with
//! [`auxlab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use auxlab::bilevel_oracle::{
    exact_hypergradient, finite_difference_hypergradient, identity_hessian_approx, random_instance, ProxyMode,
    QuadraticTaskSet,
};
use auxlab::error::Error;
use auxlab::harness::{run_experiment, ExperimentConfig};
use auxlab::stats::{permutation_test, SampleSet};
use auxlab::strategies::{update_task_weights, TaskWeights};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotPositiveDefinite = 3,
    IllConditioned = 4,
    NonFinite = 5,
    Divergence = 6,
    Io = 7,
    /// Some seeds of an experiment failed; the summary is still returned.
    RunFailed = 8,
    Panic = 9,
}

/// Softmax task weights over `n` tasks, the end task first.
pub struct AuxlabTaskWeights(TaskWeights);

/// A quadratic bilevel instance with its stored weights.
pub struct AuxlabQuadratic(QuadraticTaskSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AuxlabStatus {
    match e {
        Error::NotPositiveDefinite => AuxlabStatus::NotPositiveDefinite,
        Error::IllConditioned(_) => AuxlabStatus::IllConditioned,
        Error::NonFinite(_) => AuxlabStatus::NonFinite,
        Error::Divergence { .. } => AuxlabStatus::Divergence,
        Error::Io(_) => AuxlabStatus::Io,
        _ => AuxlabStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AuxlabStatus, String)>) -> AuxlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AuxlabStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            AuxlabStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (AuxlabStatus, String)>;
}

impl<T> IntoFfi<T> for auxlab::error::Result<T> {
    fn ffi(self) -> Result<T, (AuxlabStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (AuxlabStatus, String) {
    (AuxlabStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (AuxlabStatus, String) {
    (AuxlabStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (AuxlabStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (AuxlabStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AuxlabStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failure on this thread, empty after a success. The
/// pointer stays valid until the next auxlab call on the same thread.
#[no_mangle]
pub extern "C" fn auxlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn auxlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn auxlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Uniform weights over `n_tasks` tasks named `end`, `aux1`, ...
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxlab_task_weights_new(n_tasks: usize, out: *mut *mut AuxlabTaskWeights) -> AuxlabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ids = (0..n_tasks).map(|i| if i == 0 { "end".to_string() } else { format!("aux{i}") }).collect();
        let w = TaskWeights::uniform(ids).ffi()?;
        *out = Box::into_raw(Box::new(AuxlabTaskWeights(w)));
        Ok(())
    })
}

/// `raw_i += lr * alignments[i]` for every task, then renormalizes.
///
/// # Safety
/// `w` must be a live handle and `alignments` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn auxlab_task_weights_update(
    w: *mut AuxlabTaskWeights,
    alignments: *const f64,
    n: usize,
    lr: f64,
) -> AuxlabStatus {
    guard(|| {
        let w = out_ref(w, "weights")?;
        let a = slice(alignments, n, "alignments")?;
        if n != w.0.tasks().len() {
            return Err(invalid(format!("{n} alignments for {} tasks", w.0.tasks().len())));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(invalid(format!("learning rate {lr}")));
        }
        let pairs: Vec<_> = w.0.tasks().iter().cloned().zip(a.iter().copied()).collect();
        w.0 = update_task_weights(&w.0, &pairs, lr).ffi()?;
        Ok(())
    })
}

/// Copies the normalized weights into `out`, which must hold `n` values.
///
/// # Safety
/// `w` must be a live handle and `out` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn auxlab_task_weights_alpha(w: *const AuxlabTaskWeights, out: *mut f64, n: usize) -> AuxlabStatus {
    guard(|| {
        let w = w.as_ref().ok_or_else(|| null("weights"))?;
        let alpha = w.0.normalized();
        if n != alpha.len() {
            return Err(invalid(format!("buffer of {n} for {} tasks", alpha.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(alpha.as_ptr(), out, n);
        Ok(())
    })
}

/// # Safety
/// `w` must come from [`auxlab_task_weights_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn auxlab_task_weights_free(w: *mut AuxlabTaskWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Builds an instance from row-major arrays: `a` holds `n_tasks` matrices of
/// `d × d`, `b` holds `n_tasks` vectors of length `d`, the end task first.
///
/// # Safety
/// All arrays must have the stated lengths and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn auxlab_quadratic_new(
    d: usize,
    n_tasks: usize,
    a: *const f64,
    b: *const f64,
    a_val: *const f64,
    b_val: *const f64,
    weights: *const f64,
    out: *mut *mut AuxlabQuadratic,
) -> AuxlabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if d == 0 || n_tasks == 0 {
            return Err(invalid("dimension and task count must be positive"));
        }
        let a = slice(a, n_tasks * d * d, "a")?;
        let b = slice(b, n_tasks * d, "b")?;
        let a_val = slice(a_val, d * d, "a_val")?;
        let b_val = slice(b_val, d, "b_val")?;
        let weights = slice(weights, n_tasks, "weights")?;
        let q = QuadraticTaskSet::new(
            a.chunks(d * d).map(|m| DMatrix::from_row_slice(d, d, m)).collect(),
            b.chunks(d).map(DVector::from_column_slice).collect(),
            DMatrix::from_row_slice(d, d, a_val),
            DVector::from_column_slice(b_val),
            weights.to_vec(),
        )
        .ffi()?;
        *out = Box::into_raw(Box::new(AuxlabQuadratic(q)));
        Ok(())
    })
}

/// Random instance whose total Hessian spectrum spans `[lo, hi]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxlab_quadratic_random(
    seed: u64,
    d: usize,
    n_aux: usize,
    lo: f64,
    hi: f64,
    out: *mut *mut AuxlabQuadratic,
) -> AuxlabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let q = random_instance(seed, d, n_aux, lo, hi).ffi()?;
        *out = Box::into_raw(Box::new(AuxlabQuadratic(q)));
        Ok(())
    })
}

unsafe fn with_quadratic(
    q: *const AuxlabQuadratic,
    out: *mut f64,
    f: impl FnOnce(&QuadraticTaskSet, &[f64]) -> auxlab::error::Result<f64>,
) -> AuxlabStatus {
    guard(|| {
        let q = q.as_ref().ok_or_else(|| null("instance"))?;
        let out = out_ref(out, "out")?;
        *out = f(&q.0, q.0.weights()).ffi()?;
        Ok(())
    })
}

/// Exact hypergradient of the validation loss in task weight `i`, at the
/// instance's weights.
///
/// # Safety
/// `q` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn auxlab_quadratic_exact(q: *const AuxlabQuadratic, i: usize, out: *mut f64) -> AuxlabStatus {
    with_quadratic(q, out, |q, w| exact_hypergradient(q, w, i))
}

/// Central finite difference of the same quantity with step `h`.
///
/// # Safety
/// `q` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn auxlab_quadratic_finite_difference(
    q: *const AuxlabQuadratic,
    i: usize,
    h: f64,
    out: *mut f64,
) -> AuxlabStatus {
    with_quadratic(q, out, |q, w| finite_difference_hypergradient(q, w, i, h))
}

/// Identity-Hessian approximation at the inner optimum, in the same sign
/// convention as the exact value.
///
/// # Safety
/// `q` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn auxlab_quadratic_identity(q: *const AuxlabQuadratic, i: usize, out: *mut f64) -> AuxlabStatus {
    with_quadratic(q, out, |q, w| identity_hessian_approx(q, w, i, ProxyMode::Exact))
}

/// # Safety
/// `q` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn auxlab_quadratic_free(q: *mut AuxlabQuadratic) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Two-sided permutation test on the difference of means. `permutations`
/// of 0 enumerates every relabeling.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` values; `p_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn auxlab_permutation_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    permutations: usize,
    seed: u64,
    p_out: *mut f64,
) -> AuxlabStatus {
    guard(|| {
        let out = out_ref(p_out, "p_out")?;
        let sa = SampleSet::new("a", slice(a, na, "a")?.to_vec()).ffi()?;
        let sb = SampleSet::new("b", slice(b, nb, "b")?.to_vec()).ffi()?;
        *out = permutation_test(&sa, &sb, permutations, seed).ffi()?;
        Ok(())
    })
}

/// Runs an experiment described by a JSON config. Records go to `out_dir`
/// when it is non-null, else to the config's `output_dir`, else nowhere.
/// On `Ok` or `RunFailed` `*summary_json` receives the summary, to be
/// released with [`auxlab_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_dir` null or one;
/// `summary_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxlab_run_experiment_json(
    config_json: *const c_char,
    out_dir: *const c_char,
    summary_json: *mut *mut c_char,
) -> AuxlabStatus {
    let mut failed = false;
    let status = guard(|| {
        let out = out_ref(summary_json, "summary_json")?;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(config_json, "config_json")?).ffi()?;
        let dir = if out_dir.is_null() { None } else { Some(Path::new(str_arg(out_dir, "out_dir")?)) };
        let outcome = run_experiment(&cfg, dir).ffi()?;
        let text = serde_json::to_string(&outcome.summary).map_err(|e| invalid(e.to_string()))?;
        *out = CString::new(text).map_err(|e| invalid(e.to_string()))?.into_raw();
        failed = !outcome.summary.all_ok();
        Ok(())
    });
    if status == AuxlabStatus::Ok && failed {
        set_error("one or more seeds failed; see the summary");
        return AuxlabStatus::RunFailed;
    }
    status
}
