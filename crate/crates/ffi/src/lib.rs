//! C ABI over `acttail`.
//!
//! Every fallible function returns an [`AtStatus`]; on failure the message is
//! available from [`at_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned by the
//! library are released with [`at_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use acttail::allocation::{allocate_alphas, dims_of, uniform_plan, AllocationConfig, AllocationPlan};
use acttail::harness::{build_stack, StackSpec};
use acttail::spectral::{analyze_all, hill_alpha, AnalysisOutcome};
use acttail::tensor_store::{load_tensor_file, save_tensor_file};
use acttail::{masked_project, theoretical_k, topk_mask, Error, ProjKind, WeightMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    UnsupportedDtype = 4,
    Domain = 5,
    DegenerateSpectrum = 6,
    Infeasible = 7,
    Io = 8,
    Internal = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtProjKind {
    Q = 0,
    K = 1,
    V = 2,
    O = 3,
    Gate = 4,
    Up = 5,
    Down = 6,
    Other = 7,
}

impl From<ProjKind> for AtProjKind {
    fn from(p: ProjKind) -> Self {
        match p {
            ProjKind::Q => AtProjKind::Q,
            ProjKind::K => AtProjKind::K,
            ProjKind::V => AtProjKind::V,
            ProjKind::O => AtProjKind::O,
            ProjKind::Gate => AtProjKind::Gate,
            ProjKind::Up => AtProjKind::Up,
            ProjKind::Down => AtProjKind::Down,
            ProjKind::Other => AtProjKind::Other,
        }
    }
}

/// Fit summary of one matrix. `ok` is false when the fit failed; the numeric
/// fields are then NaN or zero.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AtSpectrumInfo {
    pub layer: usize,
    pub proj: AtProjKind,
    pub n: usize,
    pub d_out: usize,
    pub ok: bool,
    pub alpha: f64,
    pub k_used: usize,
    pub lambda_ref: f64,
    pub lambda_max: f64,
}

/// One plan row. `alpha` is NaN for uniform plans.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AtPlanEntry {
    pub layer: usize,
    pub proj: AtProjKind,
    pub alpha: f64,
    pub d_in: usize,
    pub params: usize,
    pub s: f64,
    pub k: usize,
}

/// Loaded or synthesized weight matrices.
pub struct AtMatrixSet {
    matrices: Vec<WeightMatrix>,
    names: Vec<CString>,
}

impl AtMatrixSet {
    fn new(matrices: Vec<WeightMatrix>) -> Self {
        let names = matrices
            .iter()
            .map(|m| CString::new(m.name().replace('\0', "")).expect("NULs removed"))
            .collect();
        Self { matrices, names }
    }
}

/// Per-matrix spectral fits, in matrix order.
pub struct AtSpectra {
    outcomes: Vec<AnalysisOutcome>,
}

pub struct AtPlan {
    plan: AllocationPlan,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("NULs replaced")));
}

struct Failure(AtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => AtStatus::Format,
            Error::UnsupportedDtype(_) => AtStatus::UnsupportedDtype,
            Error::Domain(_) => AtStatus::Domain,
            Error::DegenerateSpectrum(_) => AtStatus::DegenerateSpectrum,
            Error::Infeasible { .. } => AtStatus::Infeasible,
            Error::Io(_) => AtStatus::Io,
            Error::Linalg(_) => AtStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AtStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(AtStatus::NullPointer, format!("`{what}` is NULL"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside acttail");
            AtStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn at_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads every 2-D tensor of a tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_load(path: *const c_char, out: *mut *mut AtMatrixSet) -> AtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path, "path")?;
        let set = AtMatrixSet::new(load_tensor_file(&path)?);
        *out = Box::into_raw(Box::new(set));
        Ok(())
    })
}

/// Synthetic stack with one exponent for attention and one for MLP
/// projections.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_synth_stack(
    layers: usize,
    d_model: usize,
    alpha_attn: f64,
    alpha_mlp: f64,
    seed: u64,
    out: *mut *mut AtMatrixSet,
) -> AtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let stack = build_stack(&StackSpec::two_tier(layers, d_model, alpha_attn, alpha_mlp, seed))?;
        *out = Box::into_raw(Box::new(AtMatrixSet::new(stack)));
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_save(set: *const AtMatrixSet, path: *const c_char) -> AtStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let path = path_arg(path, "path")?;
        save_tensor_file(&set.matrices, &path)?;
        Ok(())
    })
}

/// Number of matrices; 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_len(set: *const AtMatrixSet) -> usize {
    set.as_ref().map_or(0, |s| s.matrices.len())
}

/// # Safety
/// `set` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_shape(
    set: *const AtMatrixSet,
    index: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> AtStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let (rows, cols) = (out_arg(rows, "rows")?, out_arg(cols, "cols")?);
        let m = set.matrices.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *rows = m.rows();
        *cols = m.cols();
        Ok(())
    })
}

/// Tensor name of a matrix, owned by the set; NULL if out of range.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_name(set: *const AtMatrixSet, index: usize) -> *const c_char {
    set.as_ref().and_then(|s| s.names.get(index)).map_or(ptr::null(), |n| n.as_ptr())
}

/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_matrix_set_free(set: *mut AtMatrixSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Hill fit of every matrix. A matrix whose fit fails still gets an entry
/// with `ok = false`.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_analyze(set: *const AtMatrixSet, k_fraction: f64, out: *mut *mut AtSpectra) -> AtStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let out = out_arg(out, "out")?;
        let outcomes = analyze_all(&set.matrices, k_fraction)?;
        *out = Box::into_raw(Box::new(AtSpectra { outcomes }));
        Ok(())
    })
}

/// # Safety
/// `spectra` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_spectra_len(spectra: *const AtSpectra) -> usize {
    spectra.as_ref().map_or(0, |s| s.outcomes.len())
}

/// # Safety
/// `spectra` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_spectra_get(spectra: *const AtSpectra, index: usize, out: *mut AtSpectrumInfo) -> AtStatus {
    guard(|| {
        let spectra = handle(spectra, "spectra")?;
        let out = out_arg(out, "out")?;
        let o = spectra.outcomes.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *out = match o {
            Ok(r) => AtSpectrumInfo {
                layer: r.source.layer,
                proj: r.source.proj.into(),
                n: r.n,
                d_out: r.d_out,
                ok: true,
                alpha: r.alpha,
                k_used: r.k_used,
                lambda_ref: r.lambda_ref,
                lambda_max: r.lambda_max,
            },
            Err(f) => AtSpectrumInfo {
                layer: f.source.layer,
                proj: f.source.proj.into(),
                n: f.n,
                d_out: f.d_out,
                ok: false,
                alpha: f64::NAN,
                k_used: 0,
                lambda_ref: f64::NAN,
                lambda_max: f64::NAN,
            },
        };
        Ok(())
    })
}

/// # Safety
/// `spectra` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_spectra_free(spectra: *mut AtSpectra) {
    if !spectra.is_null() {
        drop(Box::from_raw(spectra));
    }
}

/// ActTail allocation from fitted exponents. Failed fits and matrices that
/// are not block projections are left out of the plan. Pass NaN for `s1`,
/// `s2` or `clamp` to use `0.8·S`, `1.2·S` and `0.99`.
///
/// # Safety
/// `spectra` and `set` must be live handles from the same matrices; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_allocate(
    spectra: *const AtSpectra,
    set: *const AtMatrixSet,
    global_sparsity: f64,
    s1: f64,
    s2: f64,
    clamp: f64,
    out: *mut *mut AtPlan,
) -> AtStatus {
    guard(|| {
        let spectra = handle(spectra, "spectra")?;
        let set = handle(set, "set")?;
        let out = out_arg(out, "out")?;
        let defaults = AllocationConfig::with_target(global_sparsity);
        let or = |v: f64, d: f64| if v.is_nan() { d } else { v };
        let cfg = AllocationConfig {
            global_sparsity,
            s1: or(s1, defaults.s1),
            s2: or(s2, defaults.s2),
            clamp_max: or(clamp, defaults.clamp_max),
        };
        let alphas: Vec<_> = spectra
            .outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .filter(|r| r.source.proj != ProjKind::Other)
            .map(|r| (r.source, r.alpha))
            .collect();
        let plan = allocate_alphas(&alphas, &dims_of(&set.matrices), &cfg)?;
        *out = Box::into_raw(Box::new(AtPlan { plan }));
        Ok(())
    })
}

/// Every projection of `set` at sparsity `S`.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_uniform_plan(set: *const AtMatrixSet, global_sparsity: f64, out: *mut *mut AtPlan) -> AtStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let out = out_arg(out, "out")?;
        let plan = uniform_plan(&dims_of(&set.matrices), global_sparsity)?;
        *out = Box::into_raw(Box::new(AtPlan { plan }));
        Ok(())
    })
}

/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_plan_len(plan: *const AtPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.plan.entries.len())
}

/// `η`, or NaN for NULL.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_plan_eta(plan: *const AtPlan) -> f64 {
    plan.as_ref().map_or(f64::NAN, |p| p.plan.eta)
}

/// Parameter-weighted sparsity realized by the integer keep counts, or NaN
/// for NULL.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_plan_achieved(plan: *const AtPlan) -> f64 {
    plan.as_ref().map_or(f64::NAN, |p| p.plan.achieved_s)
}

/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_plan_entry(plan: *const AtPlan, index: usize, out: *mut AtPlanEntry) -> AtStatus {
    guard(|| {
        let plan = handle(plan, "plan")?;
        let out = out_arg(out, "out")?;
        let e = plan.plan.entries.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *out = AtPlanEntry {
            layer: e.layer,
            proj: e.proj.into(),
            alpha: e.alpha.unwrap_or(f64::NAN),
            d_in: e.d_in,
            params: e.params,
            s: e.s,
            k: e.k,
        };
        Ok(())
    })
}

/// Plan as pretty JSON; free with [`at_string_free`]. NULL on failure.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_plan_to_json(plan: *const AtPlan) -> *mut c_char {
    let mut result = ptr::null_mut();
    guard(|| {
        let plan = handle(plan, "plan")?;
        let json = plan.plan.to_json_pretty()?;
        result = CString::new(json).map_err(|_| invalid("JSON contains NUL"))?.into_raw();
        Ok(())
    });
    result
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_plan_from_json(json: *const c_char, out: *mut *mut AtPlan) -> AtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| invalid("`json` is not UTF-8"))?;
        let plan = AllocationPlan::from_json(text)?;
        *out = Box::into_raw(Box::new(AtPlan { plan }));
        Ok(())
    })
}

/// # Safety
/// `plan` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_plan_free(plan: *mut AtPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Hill exponent from `n` ascending positive eigenvalues using the top `k`.
///
/// # Safety
/// `eigenvalues` must point to `n` readable doubles; `alpha` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn at_hill_alpha(eigenvalues: *const f64, n: usize, k: usize, alpha: *mut f64) -> AtStatus {
    guard(|| {
        let eigs = slice_arg(eigenvalues, n, "eigenvalues")?;
        let alpha = out_arg(alpha, "alpha")?;
        *alpha = hill_alpha(eigs, k)?.alpha;
        Ok(())
    })
}

/// Keeps the `k` largest-magnitude entries of `h`. Writes the kept indices
/// in ascending order to `kept` (room for `k`) and, if `sparse` is not
/// NULL, the masked vector (room for `n`).
///
/// # Safety
/// `h` must point to `n` readable doubles, `kept` to `k` writable slots and
/// `sparse` to NULL or `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn at_topk_mask(h: *const f64, n: usize, k: usize, kept: *mut usize, sparse: *mut f64) -> AtStatus {
    guard(|| {
        let h = slice_arg(h, n, "h")?;
        let r = topk_mask(h, k)?;
        if k > 0 {
            if kept.is_null() {
                return Err(null("kept"));
            }
            std::slice::from_raw_parts_mut(kept, k).copy_from_slice(&r.kept_indices);
        }
        if !sparse.is_null() && n > 0 {
            std::slice::from_raw_parts_mut(sparse, n).copy_from_slice(&r.sparse_input);
        }
        Ok(())
    })
}

/// `W·T_k(h)` for matrix `index` of `set`. `h` has the matrix's input width
/// and `out` room for its output width.
///
/// # Safety
/// `set` must be a live handle; `h` must point to `n` readable doubles and
/// `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn at_masked_project(
    set: *const AtMatrixSet,
    index: usize,
    h: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
    out_len: usize,
) -> AtStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let w = set.matrices.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        let h = slice_arg(h, n, "h")?;
        if out_len != w.rows() {
            return Err(invalid(format!("out_len {out_len} does not match output width {}", w.rows())));
        }
        let y = masked_project(w, &topk_mask(h, k)?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&y);
        Ok(())
    })
}

/// Keep count guaranteeing truncation error at most `epsilon` with
/// probability `1 − delta`, capped at `d_out`.
///
/// # Safety
/// `k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_theoretical_k(alpha: f64, epsilon: f64, d_out: usize, delta: f64, k: *mut usize) -> AtStatus {
    guard(|| {
        let k = out_arg(k, "k")?;
        *k = theoretical_k(alpha, epsilon, d_out, delta)?;
        Ok(())
    })
}
