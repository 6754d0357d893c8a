//! C ABI over the lazydraw sampling and estimation library.
//!
//! Conventions: every fallible function returns an `LdStatus` and reports
//! results through out-pointers; handles are opaque and freed with their
//! `_free` function; `ld_last_error` retrieves a per-thread message for the
//! most recent failure. Passing NaN where a gap allowance is expected means
//! "use the index's own certificate". Handles are not thread-safe; share
//! them across threads only behind external synchronization.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lazydraw::data::{load_dataset, save_dataset};
use lazydraw::error::Error;
use lazydraw::estimators::{estimate_expectation, estimate_partition};
use lazydraw::mips::{
    build_ivf, build_lsh_ladder, load_index, save_index, ExactProvider, Index, IvfProvider,
    LshConfig, LshProvider, TopKProvider,
};
use lazydraw::model::{exact_expectation, exact_partition, exact_topk, score_all, Dataset, Query};
use lazydraw::rng::derive_rng;
use lazydraw::sampler::{lazy_sample, tv_upper_bound};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdStatus {
    Ok = 0,
    /// Null pointer, bad sizes, or parameters outside their domain.
    InvalidArgument = 1,
    /// Malformed or mismatched files and payloads.
    DataError = 2,
    /// The operating system refused a file operation.
    IoError = 3,
    /// A computation left the finite range.
    NumericError = 4,
    /// An internal invariant failed; the library state is still usable.
    Panicked = 5,
}

/// Feature rows, n x d row-major. Opaque.
pub struct LdDataset {
    inner: Dataset,
}

/// A prebuilt top-k retrieval structure bound to one dataset shape. Opaque.
pub struct LdIndex {
    inner: Index,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message);
}

fn classify(error: &Error) -> LdStatus {
    match error {
        Error::EmptyDataset
        | Error::DimensionMismatch { .. }
        | Error::NonFinite { .. }
        | Error::InvalidParameter { .. }
        | Error::ZeroNormRow { .. }
        | Error::DuplicateProviderId { .. }
        | Error::GapCertificateExceeded { .. }
        | Error::MissingGapCertificate
        | Error::ExactCheaper { .. } => LdStatus::InvalidArgument,
        Error::MalformedFile { .. }
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::IndexMismatch { .. } => LdStatus::DataError,
        Error::DivergedGradient { .. } => LdStatus::NumericError,
        Error::Io { .. } => LdStatus::IoError,
        _ => LdStatus::DataError,
    }
}

fn guard(body: impl FnOnce() -> Result<(), Error>) -> LdStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LdStatus::Ok,
        Ok(Err(error)) => {
            let status = classify(&error);
            set_error(error.to_string());
            status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("internal panic: {what}"));
            LdStatus::Panicked
        }
    }
}

fn null_arg(name: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        reason: "null pointer".to_string(),
    }
}

unsafe fn need_ref<'a, T>(ptr: *const T, name: &'static str) -> Result<&'a T, Error> {
    ptr.as_ref().ok_or_else(|| null_arg(name))
}

unsafe fn need_slice<'a, T>(
    ptr: *const T,
    len: usize,
    name: &'static str,
) -> Result<&'a [T], Error> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn need_path(ptr: *const c_char, name: &'static str) -> Result<PathBuf, Error> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    let text = CStr::from_ptr(ptr).to_str().map_err(|_| Error::InvalidParameter {
        name,
        reason: "path is not valid UTF-8".to_string(),
    })?;
    Ok(PathBuf::from(text))
}

unsafe fn need_query(
    theta: *const f64,
    theta_len: usize,
    scale: f64,
) -> Result<Query, Error> {
    let theta = need_slice(theta, theta_len, "theta")?;
    Query::with_scale(theta.to_vec(), scale)
}

unsafe fn make_provider<'a>(
    dataset: &'a Dataset,
    index: *const LdIndex,
    n_probe: usize,
) -> Box<dyn TopKProvider + 'a> {
    match index.as_ref() {
        None => Box::new(ExactProvider::new(dataset)),
        Some(handle) => match &handle.inner {
            Index::Ivf(ivf) => Box::new(IvfProvider::new(ivf, dataset, n_probe)),
            Index::Lsh(ladder) => Box::new(LshProvider::new(ladder, dataset)),
        },
    }
}

unsafe fn hand_out<T>(out: *mut *mut T, value: T, name: &'static str) -> Result<(), Error> {
    if out.is_null() {
        return Err(null_arg(name));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn write_f64(out: *mut f64, value: f64, name: &'static str) -> Result<(), Error> {
    if out.is_null() {
        return Err(null_arg(name));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the current thread's last error message into `buf` (always
/// nul-terminated when `cap > 0`) and returns the full length the message
/// needs, including the nul. `buf` may be null to query the length.
#[no_mangle]
pub unsafe extern "C" fn ld_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && cap > 0 {
            let copy = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, copy);
            buf.add(copy).write(0);
        }
        bytes.len() + 1
    })
}

/// Builds a dataset from `n` rows of `d` floats, copied from `rows`.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_from_rows(
    n: u64,
    d: u32,
    rows: *const f32,
    out: *mut *mut LdDataset,
) -> LdStatus {
    guard(|| {
        let count = (n as usize)
            .checked_mul(d as usize)
            .ok_or_else(|| Error::InvalidParameter {
                name: "n",
                reason: format!("{n} x {d} overflows"),
            })?;
        let rows = need_slice(rows, count, "rows")?;
        let dataset = Dataset::from_rows(n as usize, d as usize, rows.to_vec())?;
        hand_out(out, LdDataset { inner: dataset }, "out")
    })
}

/// Loads a dataset container file.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_load(
    path: *const c_char,
    out: *mut *mut LdDataset,
) -> LdStatus {
    guard(|| {
        let path = need_path(path, "path")?;
        let dataset = load_dataset(&path)?;
        hand_out(out, LdDataset { inner: dataset }, "out")
    })
}

/// Writes a dataset container file.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_save(
    dataset: *const LdDataset,
    path: *const c_char,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let path = need_path(path, "path")?;
        save_dataset(&dataset.inner, &path)
    })
}

/// Row count; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_len(dataset: *const LdDataset) -> u64 {
    dataset.as_ref().map_or(0, |d| d.inner.len() as u64)
}

/// Feature dimension; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_dim(dataset: *const LdDataset) -> u32 {
    dataset.as_ref().map_or(0, |d| d.inner.dim() as u32)
}

/// Releases a dataset handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_free(dataset: *mut LdDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Builds an IVF index with `n_c` centroids and `iters` refinement passes.
#[no_mangle]
pub unsafe extern "C" fn ld_index_build_ivf(
    dataset: *const LdDataset,
    n_c: u64,
    iters: u64,
    seed: u64,
    out: *mut *mut LdIndex,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let index = build_ivf(&dataset.inner, n_c as usize, iters as usize, seed)?;
        hand_out(out, LdIndex { inner: Index::Ivf(index) }, "out")
    })
}

/// Builds an LSH ladder certifying score gap `c` with failure budget
/// `delta` for retrievals up to `k_max`.
#[no_mangle]
pub unsafe extern "C" fn ld_index_build_lsh(
    dataset: *const LdDataset,
    c: f64,
    delta: f64,
    k_max: u64,
    seed: u64,
    out: *mut *mut LdIndex,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let mut config = LshConfig::new(c, delta, k_max as usize);
        config.seed = seed;
        let ladder = build_lsh_ladder(&dataset.inner, &config)?;
        hand_out(out, LdIndex { inner: Index::Lsh(ladder) }, "out")
    })
}

/// Writes an index container file.
#[no_mangle]
pub unsafe extern "C" fn ld_index_save(index: *const LdIndex, path: *const c_char) -> LdStatus {
    guard(|| {
        let index = need_ref(index, "index")?;
        let path = need_path(path, "path")?;
        save_index(&index.inner, &path)
    })
}

/// Loads an index container and checks it matches `dataset`.
#[no_mangle]
pub unsafe extern "C" fn ld_index_load(
    path: *const c_char,
    dataset: *const LdDataset,
    out: *mut *mut LdIndex,
) -> LdStatus {
    guard(|| {
        let path = need_path(path, "path")?;
        let dataset = need_ref(dataset, "dataset")?;
        let index = load_index(&path, &dataset.inner)?;
        hand_out(out, LdIndex { inner: index }, "out")
    })
}

/// Releases an index handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ld_index_free(index: *mut LdIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Draws `n_draws` ids from p(i) proportional to e^{scale * theta . phi_i}
/// into `out_ids`, using the top-`k` lazy sampler. A null `index` scans
/// exactly; `n_probe` applies to IVF indexes; `gap_c` widens the cutoff for
/// approximate retrieval (NaN defers to the index's certificate). Draw `t`
/// uses the RNG stream derived from (`seed`, `t`), so prefixes of a longer
/// run are reproducible.
#[no_mangle]
pub unsafe extern "C" fn ld_sample(
    dataset: *const LdDataset,
    index: *const LdIndex,
    n_probe: usize,
    theta: *const f64,
    theta_len: usize,
    scale: f64,
    k: usize,
    gap_c: f64,
    seed: u64,
    n_draws: usize,
    out_ids: *mut u32,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let query = need_query(theta, theta_len, scale)?;
        if out_ids.is_null() {
            return Err(null_arg("out_ids"));
        }
        let provider = make_provider(&dataset.inner, index, n_probe);
        let gap = if gap_c.is_nan() { None } else { Some(gap_c) };
        for t in 0..n_draws {
            let mut rng = derive_rng(seed, t as u64);
            let trace =
                lazy_sample(&dataset.inner, &query, provider.as_ref(), k, gap, &mut rng)?;
            out_ids.add(t).write(trace.chosen_id);
        }
        Ok(())
    })
}

/// Exact log partition function of the model.
#[no_mangle]
pub unsafe extern "C" fn ld_log_partition_exact(
    dataset: *const LdDataset,
    theta: *const f64,
    theta_len: usize,
    scale: f64,
    out: *mut f64,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let query = need_query(theta, theta_len, scale)?;
        let value = exact_partition(&dataset.inner, &query)?;
        write_f64(out, value, "out")
    })
}

/// Unbiased log-partition estimate from a top-`k` set and `l` tail draws.
#[no_mangle]
pub unsafe extern "C" fn ld_log_partition_estimate(
    dataset: *const LdDataset,
    index: *const LdIndex,
    n_probe: usize,
    theta: *const f64,
    theta_len: usize,
    scale: f64,
    k: usize,
    l: u64,
    seed: u64,
    out: *mut f64,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let query = need_query(theta, theta_len, scale)?;
        let provider = make_provider(&dataset.inner, index, n_probe);
        let mut rng = derive_rng(seed, 0);
        let est = estimate_partition(&dataset.inner, &query, provider.as_ref(), k, l, &mut rng)?;
        write_f64(out, est.value, "out")
    })
}

/// Exact model expectation of the statistic `f` (one value per row),
/// clamped to [-c_bound, c_bound].
#[no_mangle]
pub unsafe extern "C" fn ld_expectation_exact(
    dataset: *const LdDataset,
    theta: *const f64,
    theta_len: usize,
    scale: f64,
    f: *const f64,
    f_len: usize,
    c_bound: f64,
    out: *mut f64,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let query = need_query(theta, theta_len, scale)?;
        let f = need_slice(f, f_len, "f")?;
        let value = exact_expectation(&dataset.inner, &query, f, c_bound)?;
        write_f64(out, value, "out")
    })
}

/// Expectation estimate of `f` from a top-`k` set and `l` tail draws.
#[no_mangle]
pub unsafe extern "C" fn ld_expectation_estimate(
    dataset: *const LdDataset,
    index: *const LdIndex,
    n_probe: usize,
    theta: *const f64,
    theta_len: usize,
    scale: f64,
    f: *const f64,
    f_len: usize,
    c_bound: f64,
    k: usize,
    l: u64,
    seed: u64,
    out: *mut f64,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let query = need_query(theta, theta_len, scale)?;
        let f = need_slice(f, f_len, "f")?;
        let provider = make_provider(&dataset.inner, index, n_probe);
        let mut rng = derive_rng(seed, 0);
        let est = estimate_expectation(
            &dataset.inner,
            &query,
            f,
            c_bound,
            provider.as_ref(),
            k,
            l,
            &mut rng,
        )?;
        write_f64(out, est.value, "out")
    })
}

/// Upper bound on the total variation distance between exact softmax
/// sampling and sampling restricted to the exact top-`k` set.
#[no_mangle]
pub unsafe extern "C" fn ld_tv_bound(
    dataset: *const LdDataset,
    theta: *const f64,
    theta_len: usize,
    scale: f64,
    k: usize,
    out: *mut f64,
) -> LdStatus {
    guard(|| {
        let dataset = need_ref(dataset, "dataset")?;
        let query = need_query(theta, theta_len, scale)?;
        let full = score_all(&dataset.inner, &query)?;
        let top = exact_topk(&dataset.inner, &query, k)?;
        write_f64(out, tv_upper_bound(&full, &top), "out")
    })
}
