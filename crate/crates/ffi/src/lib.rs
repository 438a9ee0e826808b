//! C ABI over the donorflow library.
//!
//! Every function returns a [`DfStatus`]. On failure the calling thread's last
//! error message is set and can be read with [`df_last_error_message`].
//! Arrays are passed as pointer plus length; matrices are row-major.
//! Objects that outlive a call are opaque handles with a matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::{Array2, ArrayView1, ArrayView2};

use donorflow::cluster::kmeans_fit;
use donorflow::info::mutual_information;
use donorflow::metrics::{kge, ks_two_sample, nse};
use donorflow::model::{load_model, predict_raw, TrainedModel};
use donorflow::similarity::{cosine, rank_and_select, similarity_matrix, SimilarityMatrix};
use donorflow::{BasinId, StaticTable, TableKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The score is undefined for this input (too few pairs, zero variance).
    Undefined = 3,
    Io = 4,
    Model = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let text = CString::new(msg.to_string().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn fail(status: DfStatus, msg: impl std::fmt::Display) -> DfStatus {
    set_error(msg);
    status
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn df_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> DfStatus) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DfStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `p` must be NULL or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], DfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DfStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], DfStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(DfStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn out<T>(p: *mut T, value: T, name: &str) -> DfStatus {
    if p.is_null() {
        return fail(DfStatus::NullPointer, format!("{name} is NULL"));
    }
    // SAFETY: non-null, caller promises it is writable
    unsafe { p.write(value) };
    DfStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn metric_err(e: donorflow::metrics::MetricError) -> DfStatus {
    fail(DfStatus::Undefined, e)
}

// ---------------------------------------------------------------- metrics

/// Nash–Sutcliffe efficiency over the pairs where neither value is NaN.
///
/// # Safety
/// `obs` and `sim` point to `len` values; `result` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_nse(obs: *const f64, sim: *const f64, len: usize, result: *mut f64) -> DfStatus {
    guard(|| {
        let o = tri!(slice(obs, len, "obs"));
        let s = tri!(slice(sim, len, "sim"));
        match nse(o, s) {
            Ok(v) => out(result, v, "result"),
            Err(e) => metric_err(e),
        }
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DfKge {
    pub kge: f64,
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Kling–Gupta efficiency and its components.
///
/// # Safety
/// `obs` and `sim` point to `len` values; `result` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_kge(obs: *const f64, sim: *const f64, len: usize, result: *mut DfKge) -> DfStatus {
    guard(|| {
        let o = tri!(slice(obs, len, "obs"));
        let s = tri!(slice(sim, len, "sim"));
        match kge(o, s) {
            Ok(k) => out(
                result,
                DfKge {
                    kge: k.kge,
                    r: k.r,
                    alpha: k.alpha,
                    beta: k.beta,
                },
                "result",
            ),
            Err(e) => metric_err(e),
        }
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
///
/// # Safety
/// `x` points to `nx` values, `y` to `ny`; `d` and `p` are writable.
#[no_mangle]
pub unsafe extern "C" fn df_ks_two_sample(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    d: *mut f64,
    p: *mut f64,
) -> DfStatus {
    guard(|| {
        let xs = tri!(slice(x, nx, "x"));
        let ys = tri!(slice(y, ny, "y"));
        if d.is_null() || p.is_null() {
            return fail(DfStatus::NullPointer, "d or p is NULL");
        }
        match ks_two_sample(xs, ys) {
            Ok(r) => {
                out(d, r.d, "d");
                out(p, r.p, "p")
            }
            Err(e) => fail(DfStatus::InvalidArgument, e),
        }
    })
}

/// Histogram mutual information in nats with `bins` equal-frequency bins.
///
/// # Safety
/// `x` and `y` point to `len` values; `result` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_mutual_information(
    x: *const f64,
    y: *const f64,
    len: usize,
    bins: usize,
    result: *mut f64,
) -> DfStatus {
    guard(|| {
        let xs = tri!(slice(x, len, "x"));
        let ys = tri!(slice(y, len, "y"));
        match mutual_information(xs, ys, bins) {
            Ok(v) => out(result, v, "result"),
            Err(e) => fail(DfStatus::InvalidArgument, e),
        }
    })
}

/// Cosine similarity of two vectors.
///
/// # Safety
/// `u` and `v` point to `len` values; `result` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_cosine(u: *const f64, v: *const f64, len: usize, result: *mut f64) -> DfStatus {
    guard(|| {
        let a = tri!(slice(u, len, "u"));
        let b = tri!(slice(v, len, "v"));
        match cosine(ArrayView1::from(a), ArrayView1::from(b)) {
            Ok(s) => out(result, s, "result"),
            Err(e) => fail(DfStatus::InvalidArgument, e),
        }
    })
}

// ---------------------------------------------------------------- similarity

/// Opaque similarity matrix over a descriptor table.
pub struct DfSimilarity {
    inner: SimilarityMatrix,
}

fn basin_index(i: usize) -> BasinId {
    BasinId::new(format!("{i:08}"))
}

/// Standardises an `n_basins`×`width` descriptor table and builds its cosine
/// similarity matrix. Basins are addressed by row index.
///
/// # Safety
/// `values` points to `n_basins * width` values; `handle` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_similarity_new(
    values: *const f64,
    n_basins: usize,
    width: usize,
    handle: *mut *mut DfSimilarity,
) -> DfStatus {
    guard(|| {
        if handle.is_null() {
            return fail(DfStatus::NullPointer, "handle is NULL");
        }
        let Some(len) = n_basins.checked_mul(width) else {
            return fail(DfStatus::InvalidArgument, "table too large");
        };
        let v = tri!(slice(values, len, "values"));
        let arr = match Array2::from_shape_vec((n_basins, width), v.to_vec()) {
            Ok(a) => a,
            Err(e) => return fail(DfStatus::InvalidArgument, e),
        };
        let basins = (0..n_basins).map(basin_index).collect();
        let cols = (0..width).map(|j| format!("c{j}")).collect();
        let table = match StaticTable::new(TableKind::Custom, basins, cols, arr) {
            Ok(t) => t,
            Err(e) => return fail(DfStatus::InvalidArgument, e),
        };
        match similarity_matrix(&table) {
            Ok(m) => out(handle, Box::into_raw(Box::new(DfSimilarity { inner: m })), "handle"),
            Err(e) => fail(DfStatus::InvalidArgument, e),
        }
    })
}

/// Similarity between rows `i` and `j`.
///
/// # Safety
/// `handle` comes from [`df_similarity_new`]; `result` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_similarity_get(
    handle: *const DfSimilarity,
    i: usize,
    j: usize,
    result: *mut f64,
) -> DfStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(DfStatus::NullPointer, "handle is NULL");
        };
        let n = h.inner.basins.len();
        if i >= n || j >= n {
            return fail(DfStatus::InvalidArgument, format!("index out of range 0..{n}"));
        }
        out(result, h.inner.values[[i, j]], "result")
    })
}

/// Row indices of the `k` rows most similar to `target`, most similar first,
/// ties broken by lower index.
///
/// # Safety
/// `handle` comes from [`df_similarity_new`]; `donors` has room for `k` values.
#[no_mangle]
pub unsafe extern "C" fn df_similarity_rank(
    handle: *const DfSimilarity,
    target: usize,
    k: usize,
    donors: *mut usize,
) -> DfStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(DfStatus::NullPointer, "handle is NULL");
        };
        if target >= h.inner.basins.len() {
            return fail(DfStatus::InvalidArgument, format!("target {target} out of range"));
        }
        let picked = match rank_and_select(&h.inner, &basin_index(target), k) {
            Ok(p) => p,
            Err(e) => return fail(DfStatus::InvalidArgument, e),
        };
        let dst = tri!(slice_mut(donors, k, "donors"));
        for (slot, b) in dst.iter_mut().zip(&picked) {
            *slot = h.inner.index_of(b).expect("ranked basin is in the matrix");
        }
        DfStatus::Ok
    })
}

/// # Safety
/// `handle` is NULL or comes from [`df_similarity_new`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn df_similarity_free(handle: *mut DfSimilarity) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

// ---------------------------------------------------------------- clustering

/// K-means (k-means++ seeding, best of `restarts`) on `n`×`d` points. Writes
/// one label per point and the fit's silhouette score.
///
/// # Safety
/// `points` holds `n * d` values, `labels` has room for `n`; `silhouette` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn df_kmeans(
    points: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    restarts: usize,
    labels: *mut usize,
    silhouette: *mut f64,
) -> DfStatus {
    guard(|| {
        let Some(len) = n.checked_mul(d) else {
            return fail(DfStatus::InvalidArgument, "input too large");
        };
        let p = tri!(slice(points, len, "points"));
        let view = match ArrayView2::from_shape((n, d), p) {
            Ok(v) => v,
            Err(e) => return fail(DfStatus::InvalidArgument, e),
        };
        let ids: Vec<BasinId> = (0..n).map(basin_index).collect();
        let model = match kmeans_fit(view, &ids, k, seed, restarts.max(1)) {
            Ok(m) => m,
            Err(e) => return fail(DfStatus::InvalidArgument, e),
        };
        let dst = tri!(slice_mut(labels, n, "labels"));
        dst.copy_from_slice(&model.labels);
        out(silhouette, model.silhouette, "silhouette")
    })
}

// ---------------------------------------------------------------- models

/// Opaque trained model.
pub struct DfModel {
    inner: TrainedModel,
}

/// Loads a model file written by `donorflow train`.
///
/// # Safety
/// `path` is a nul-terminated UTF-8 string; `handle` is writable.
#[no_mangle]
pub unsafe extern "C" fn df_model_load(path: *const c_char, handle: *mut *mut DfModel) -> DfStatus {
    guard(|| {
        if path.is_null() || handle.is_null() {
            return fail(DfStatus::NullPointer, "path or handle is NULL");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(DfStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_model(Path::new(p)) {
            Ok(m) => out(handle, Box::into_raw(Box::new(DfModel { inner: m })), "handle"),
            Err(e) => fail(DfStatus::Io, e),
        }
    })
}

/// Window length, forcing count and static count the model expects.
///
/// # Safety
/// `handle` comes from [`df_model_load`]; the outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn df_model_shape(
    handle: *const DfModel,
    seq_len: *mut usize,
    n_dyn: *mut usize,
    n_static: *mut usize,
) -> DfStatus {
    guard(|| {
        let Some(m) = handle.as_ref() else {
            return fail(DfStatus::NullPointer, "handle is NULL");
        };
        if seq_len.is_null() || n_dyn.is_null() || n_static.is_null() {
            return fail(DfStatus::NullPointer, "output is NULL");
        }
        out(seq_len, m.inner.config.seq_len, "seq_len");
        out(n_dyn, m.inner.config.n_dyn, "n_dyn");
        out(n_static, m.inner.config.n_static, "n_static")
    })
}

/// Simulated flow in mm/day. `forcing` is `n_days`×n_dyn in archive units and
/// column order, `statics` the raw descriptor row. Writes
/// `n_days - seq_len + 1` values, one per day from the first full window.
///
/// # Safety
/// `handle` comes from [`df_model_load`]; array sizes as described above.
#[no_mangle]
pub unsafe extern "C" fn df_model_predict(
    handle: *const DfModel,
    forcing: *const f64,
    n_days: usize,
    statics: *const f64,
    n_static: usize,
    flow: *mut f64,
    flow_len: usize,
) -> DfStatus {
    guard(|| {
        let Some(m) = handle.as_ref() else {
            return fail(DfStatus::NullPointer, "handle is NULL");
        };
        let cfg = &m.inner.config;
        if n_days < cfg.seq_len {
            return fail(DfStatus::InvalidArgument, format!("need at least {} days", cfg.seq_len));
        }
        let expected = n_days - cfg.seq_len + 1;
        if flow_len != expected {
            return fail(DfStatus::InvalidArgument, format!("flow_len must be {expected}"));
        }
        let Some(len) = n_days.checked_mul(cfg.n_dyn) else {
            return fail(DfStatus::InvalidArgument, "input too large");
        };
        let f = tri!(slice(forcing, len, "forcing"));
        let s = tri!(slice(statics, n_static, "statics"));
        let view = ArrayView2::from_shape((n_days, cfg.n_dyn), f).expect("length checked");
        let sim = match predict_raw(&m.inner, view, ArrayView1::from(s)) {
            Ok(v) => v,
            Err(e) => return fail(DfStatus::Model, e),
        };
        let dst = tri!(slice_mut(flow, flow_len, "flow"));
        dst.copy_from_slice(&sim);
        DfStatus::Ok
    })
}

/// # Safety
/// `handle` is NULL or comes from [`df_model_load`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn df_model_free(handle: *mut DfModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
