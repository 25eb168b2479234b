//! C interface to the finite committee posterior over labelings and to the
//! kernel posterior.
//!
//! Every function returns an [`SqbcStatus`]; on anything but `SQBC_OK` the
//! message is available from [`sqbc_last_error`] on the same thread. Handles
//! are opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqbc::kernel_linear::{KernelPosterior, KernelSpec};
use sqbc::posterior::FinitePosterior;
use sqbc::structures::{Answer, Atom, Labeling};
use sqbc::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqbcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidQuery = 3,
    Numeric = 4,
    EmptyVersionSpace = 5,
    Panic = 6,
    Other = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SqbcStatus {
    match e {
        Error::InvalidQuery(_) | Error::AtomMismatch { .. } | Error::AnswerMismatch(_) => SqbcStatus::InvalidQuery,
        Error::Config(_) | Error::Domain(_) | Error::InvalidStructure(_) => SqbcStatus::InvalidArgument,
        Error::Numeric(_) | Error::IllConditioned { .. } => SqbcStatus::Numeric,
        Error::EmptyVersionSpace => SqbcStatus::EmptyVersionSpace,
        _ => SqbcStatus::Other,
    }
}

struct Fail(SqbcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SqbcStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SqbcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SqbcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SqbcStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the last error message on this thread into `buf` (nul-terminated,
/// truncated to `len`). Returns the full message length without the nul, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sqbc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sqbc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Weighted committee of labelings of a fixed pool.
pub struct SqbcLabelPosterior {
    inner: FinitePosterior<Labeling>,
    n_items: usize,
}

/// Creates a uniform posterior over `n_structures` labelings. `labels` is
/// row-major: row `s` holds the `n_items` labels of structure `s`.
///
/// # Safety
/// `labels` must point to `n_structures * n_items` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_new(
    labels: *const i64,
    n_structures: usize,
    n_items: usize,
    out_handle: *mut *mut SqbcLabelPosterior,
) -> SqbcStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        *slot = ptr::null_mut();
        if n_structures == 0 || n_items == 0 {
            return Err(Fail(SqbcStatus::InvalidArgument, "need at least one structure and one item".into()));
        }
        let total = n_structures.checked_mul(n_items).ok_or_else(|| Fail(SqbcStatus::InvalidArgument, "size overflow".into()))?;
        let all = slice_in(labels, total, "labels")?;
        let structures = all.chunks(n_items).map(|r| Labeling::new(r.to_vec())).collect();
        let inner = FinitePosterior::uniform(structures)?;
        *slot = Box::into_raw(Box::new(SqbcLabelPosterior { inner, n_items }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `sqbc_label_posterior_new` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_free(handle: *mut SqbcLabelPosterior) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

fn item_atom(p: &SqbcLabelPosterior, item: usize) -> Result<Atom, Fail> {
    if item >= p.n_items {
        return Err(Fail(SqbcStatus::InvalidQuery, format!("item {item} outside pool of {}", p.n_items)));
    }
    Ok(Atom::Point(item))
}

/// Multiplies each weight by `exp(-beta)` when the structure disagrees with
/// `label` on `item`, then renormalises.
///
/// # Safety
/// `handle` must be a live posterior.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_update(
    handle: *mut SqbcLabelPosterior,
    item: usize,
    label: i64,
    beta: f64,
) -> SqbcStatus {
    guard(|| {
        let p = out(handle, "handle")?;
        let atom = item_atom(p, item)?;
        p.inner = p.inner.update_zero_one(&atom, &Answer::Class(label), beta)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must be a live posterior and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_len(handle: *const SqbcLabelPosterior, out_len: *mut usize) -> SqbcStatus {
    guard(|| {
        let p = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(out_len, "out_len")? = p.inner.len();
        Ok(())
    })
}

/// Writes the normalised weights into `weights` (`len` must equal the
/// number of structures).
///
/// # Safety
/// `weights` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_weights(
    handle: *const SqbcLabelPosterior,
    weights: *mut f64,
    len: usize,
) -> SqbcStatus {
    guard(|| {
        let p = handle.as_ref().ok_or_else(|| null("handle"))?;
        if len != p.inner.len() {
            return Err(Fail(SqbcStatus::InvalidArgument, format!("buffer holds {len}, posterior has {}", p.inner.len())));
        }
        if weights.is_null() {
            return Err(null("weights"));
        }
        slice::from_raw_parts_mut(weights, len).copy_from_slice(&p.inner.weights());
        Ok(())
    })
}

/// Uncertainty `1 - sum_y p(y)^2` of the label of `item`.
///
/// # Safety
/// `handle` must be a live posterior and `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_uncertainty(
    handle: *const SqbcLabelPosterior,
    item: usize,
    out_value: *mut f64,
) -> SqbcStatus {
    guard(|| {
        let p = handle.as_ref().ok_or_else(|| null("handle"))?;
        let atom = item_atom(p, item)?;
        *out(out_value, "out_value")? = p.inner.uncertainty_atom(&atom)?;
        Ok(())
    })
}

/// Shrinkage `1 - max_y p(y)` of the label of `item`.
///
/// # Safety
/// `handle` must be a live posterior and `out_value` valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_label_posterior_shrinkage(
    handle: *const SqbcLabelPosterior,
    item: usize,
    out_value: *mut f64,
) -> SqbcStatus {
    guard(|| {
        let p = handle.as_ref().ok_or_else(|| null("handle"))?;
        let atom = item_atom(p, item)?;
        *out(out_value, "out_value")? = p.inner.shrinkage_atom(&atom)?;
        Ok(())
    })
}

/// Dual-form Gaussian posterior over a kernel predictor.
pub struct SqbcKernelPosterior {
    inner: KernelPosterior,
    rng: ChaCha8Rng,
}

/// Creates a kernel posterior. `gamma <= 0` selects the linear kernel,
/// otherwise `exp(-gamma |x - y|^2)`. `seed` drives [`sqbc_kernel_sample`].
///
/// # Safety
/// `out_handle` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_kernel_new(
    gamma: f64,
    beta: f64,
    sigma0_sq: f64,
    seed: u64,
    out_handle: *mut *mut SqbcKernelPosterior,
) -> SqbcStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        *slot = ptr::null_mut();
        let kernel = if gamma > 0.0 { KernelSpec::rbf(gamma)? } else { KernelSpec::Linear };
        let inner = KernelPosterior::new(kernel, beta, sigma0_sq)?;
        *slot = Box::into_raw(Box::new(SqbcKernelPosterior { inner, rng: ChaCha8Rng::seed_from_u64(seed) }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `sqbc_kernel_new` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn sqbc_kernel_free(handle: *mut SqbcKernelPosterior) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Adds the observation `(x, y)`.
///
/// # Safety
/// `x` must point to `dim` values.
#[no_mangle]
pub unsafe extern "C" fn sqbc_kernel_update(handle: *mut SqbcKernelPosterior, x: *const f64, dim: usize, y: f64) -> SqbcStatus {
    guard(|| {
        let p = out(handle, "handle")?;
        let x = slice_in(x, dim, "x")?;
        p.inner.update(x, y)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must be live and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_kernel_len(handle: *const SqbcKernelPosterior, out_len: *mut usize) -> SqbcStatus {
    guard(|| {
        let p = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(out_len, "out_len")? = p.inner.len();
        Ok(())
    })
}

/// Predictive mean and variance at `x`.
///
/// # Safety
/// `x` must point to `dim` values; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_kernel_predict(
    handle: *const SqbcKernelPosterior,
    x: *const f64,
    dim: usize,
    out_mean: *mut f64,
    out_var: *mut f64,
) -> SqbcStatus {
    guard(|| {
        let p = handle.as_ref().ok_or_else(|| null("handle"))?;
        let x = slice_in(x, dim, "x")?;
        let (m, v) = p.inner.predictive_scalar(x)?;
        *out(out_mean, "out_mean")? = m;
        *out(out_var, "out_var")? = v;
        Ok(())
    })
}

/// Draws one prediction at `x` from the posterior.
///
/// # Safety
/// `x` must point to `dim` values; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sqbc_kernel_sample(
    handle: *mut SqbcKernelPosterior,
    x: *const f64,
    dim: usize,
    out_value: *mut f64,
) -> SqbcStatus {
    guard(|| {
        let p = out(handle, "handle")?;
        let x = slice_in(x, dim, "x")?;
        let v = p.inner.sample_prediction(x, &mut p.rng)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}
