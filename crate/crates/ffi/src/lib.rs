//! C ABI over the `compnet` library.
//!
//! Conventions:
//! - every fallible function returns a [`CnStatus`]; on failure a message is
//!   available from [`cn_last_error_message`] on the same thread
//! - objects cross the boundary as opaque handles created by `*_from_json` or
//!   `*_construct` and released by the matching `*_free`
//! - matrices are dense row-major `f64` buffers; component outputs are passed
//!   component-major (`K` rows of `N` values)
//! - strings returned by the library are released with [`cn_string_free`]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use compnet::data_io::{knn_impute, Grid};
use compnet::linear_solver::{build_gram, check_assumptions, solve_theta_star};
use compnet::scaled_activation::{construct_wrapper_with, GammaRule, ScaledWrapper};
use compnet::{evaluate, Activation, CompositeNetwork, Error, Matrix, Registry};
use libc::size_t;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    DimensionMismatch = 4,
    SingularGram = 5,
    NonFinite = 6,
    InvalidNetwork = 7,
    UnresolvedComponent = 8,
    UnsupportedActivation = 9,
    Parse = 10,
    BufferTooSmall = 11,
    Panic = 12,
    Other = 13,
}

/// Component registry handle.
pub struct CnRegistry(Registry);

/// Composite network handle.
pub struct CnNetwork(CompositeNetwork);

/// Scaled-activation wrapper handle.
pub struct CnWrapper(ScaledWrapper);

/// Outcome of the assumption checks on a set of component outputs.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CnAssumptions {
    /// `[1, f_1, .., f_K]` has full column rank (relative singular value test).
    pub independent: bool,
    /// No component reproduces the labels exactly.
    pub no_perfect_component: bool,
    /// `K < 2 sqrt(N) - 1`; a warning only.
    pub within_budget: bool,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    /// Smallest L1 error of any component, or NaN when `K = 0`.
    pub min_l1_error: f64,
    pub budget_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CnStatus {
    match e {
        Error::DimensionMismatch { .. } => CnStatus::DimensionMismatch,
        Error::SingularGram { .. } => CnStatus::SingularGram,
        Error::NonFinite { .. } => CnStatus::NonFinite,
        Error::InvalidNetwork(_) | Error::InvalidComponent { .. } => CnStatus::InvalidNetwork,
        Error::UnresolvedComponent(_) => CnStatus::UnresolvedComponent,
        Error::NotC1Activation(_) | Error::VanishingDerivative(_) => CnStatus::UnsupportedActivation,
        Error::Json(_) | Error::Csv { .. } | Error::Config(_) => CnStatus::Parse,
        Error::InvalidInput(_) | Error::EmptySplit(_) | Error::Degenerate(_) => CnStatus::InvalidInput,
        _ => CnStatus::Other,
    }
}

struct Failure(CnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Outcome) -> CnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            CnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CnStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CnStatus::InvalidInput, msg.into())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CnStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn out_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn checked_len(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b).ok_or_else(|| invalid("buffer size overflows"))
}

unsafe fn component_outputs(outputs: *const f64, k: usize, n: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let flat = slice(outputs, checked_len(k, n)?, "outputs")?;
    Ok(if n == 0 {
        vec![Vec::new(); k]
    } else {
        flat.chunks(n).map(<[f64]>::to_vec).collect()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread. Valid until the next failing
/// call on the same thread; empty if nothing failed yet.
#[no_mangle]
pub extern "C" fn cn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a registry from `{"components": [...]}` or a bare component array.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cn_registry_from_json(json: *const c_char, out: *mut *mut CnRegistry) -> CnStatus {
    guard(|| {
        let s = text(json, "json")?;
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Failure(CnStatus::Parse, e.to_string()))?;
        let list = value.get("components").cloned().unwrap_or(value);
        let comps: Vec<compnet::Component> =
            serde_json::from_value(list).map_err(|e| Failure(CnStatus::Parse, e.to_string()))?;
        for c in &comps {
            c.validate()?;
        }
        out_handle(out, CnRegistry(Registry::from_components(comps)?))
    })
}

/// # Safety
/// `registry` must come from [`cn_registry_from_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cn_registry_free(registry: *mut CnRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}

/// Number of components in the registry.
///
/// # Safety
/// `registry` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cn_registry_len(registry: *const CnRegistry, out: *mut size_t) -> CnStatus {
    guard(|| {
        let r = handle(registry, "registry")?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.0.len();
        Ok(())
    })
}

/// Parses a composite network from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cn_network_from_json(json: *const c_char, out: *mut *mut CnNetwork) -> CnStatus {
    guard(|| {
        let s = text(json, "json")?;
        out_handle(out, CnNetwork(CompositeNetwork::from_json(s)?))
    })
}

/// # Safety
/// `network` must come from [`cn_network_from_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cn_network_free(network: *mut CnNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Evaluates `network` on `rows x cols` inputs. On success `*out_len` holds
/// the number of values written (`rows x output_dim`). If `capacity` is too
/// small nothing is written, `*out_len` holds the required size and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// Handles must be live; `inputs` must hold `rows * cols` values and `out`
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn cn_evaluate(
    network: *const CnNetwork,
    registry: *const CnRegistry,
    inputs: *const f64,
    rows: size_t,
    cols: size_t,
    out: *mut f64,
    capacity: size_t,
    out_len: *mut size_t,
) -> CnStatus {
    guard(|| {
        let net = handle(network, "network")?;
        let reg = handle(registry, "registry")?;
        let out_len = out_len.as_mut().ok_or_else(|| null("out_len"))?;
        let x = Matrix::from_vec(rows, cols, slice(inputs, checked_len(rows, cols)?, "inputs")?.to_vec())?;
        let y = evaluate(&net.0, &reg.0, &x)?;
        *out_len = y.as_slice().len();
        if y.as_slice().len() > capacity {
            return Err(Failure(
                CnStatus::BufferTooSmall,
                format!("output needs {} values, buffer holds {capacity}", y.as_slice().len()),
            ));
        }
        slice_mut(out, y.as_slice().len(), "out")?.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Optimal combination weights `[θ0, θ1, .., θK]` (bias first) for `k`
/// component outputs of length `n`.
///
/// # Safety
/// `outputs` must hold `k * n` values, `labels` `n` and `theta` `k + 1`.
#[no_mangle]
pub unsafe extern "C" fn cn_solve_theta_star(
    outputs: *const f64,
    k: size_t,
    n: size_t,
    labels: *const f64,
    ridge: f64,
    theta: *mut f64,
) -> CnStatus {
    guard(|| {
        let outs = component_outputs(outputs, k, n)?;
        let y = slice(labels, n, "labels")?;
        let sys = build_gram(&outs, y)?;
        let t = solve_theta_star(&sys, ridge)?;
        slice_mut(theta, k + 1, "theta")?.copy_from_slice(&t);
        Ok(())
    })
}

/// Evaluates the linear-independence, no-perfect-component and budget checks.
///
/// # Safety
/// `outputs` must hold `k * n` values, `labels` `n`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cn_check_assumptions(
    outputs: *const f64,
    k: size_t,
    n: size_t,
    labels: *const f64,
    out: *mut CnAssumptions,
) -> CnStatus {
    guard(|| {
        let outs = component_outputs(outputs, k, n)?;
        let y = slice(labels, n, "labels")?;
        let r = check_assumptions(&outs, y)?;
        *out.as_mut().ok_or_else(|| null("out"))? = CnAssumptions {
            independent: r.a1.holds,
            no_perfect_component: r.a2.holds,
            within_budget: r.a4.holds,
            min_singular_value: r.a1.min_singular_value,
            max_singular_value: r.a1.max_singular_value,
            min_l1_error: r.a2.min_l1_error.unwrap_or(f64::NAN),
            budget_bound: r.a4.bound,
        };
        Ok(())
    })
}

/// Builds the affine sandwich that lets `activation` (`"logistic"`, `"tanh"`,
/// `"sl"`, `"linear"`) emulate the combiner outputs `g_star` within
/// `epsilon`. A positive `gamma` fixes the neighbourhood half-width; zero or
/// negative selects it automatically.
///
/// # Safety
/// `g_star` must hold `n` values, `activation` be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cn_wrapper_construct(
    g_star: *const f64,
    n: size_t,
    activation: *const c_char,
    epsilon: f64,
    gamma: f64,
    out: *mut *mut CnWrapper,
) -> CnStatus {
    guard(|| {
        let g = slice(g_star, n, "g_star")?;
        let act: Activation = text(activation, "activation")?.parse()?;
        let rule = if gamma > 0.0 {
            GammaRule::Fixed(gamma)
        } else {
            GammaRule::Procedure
        };
        out_handle(out, CnWrapper(construct_wrapper_with(g, act, epsilon, rule)?))
    })
}

/// # Safety
/// `wrapper` must come from [`cn_wrapper_construct`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cn_wrapper_free(wrapper: *mut CnWrapper) {
    if !wrapper.is_null() {
        drop(Box::from_raw(wrapper));
    }
}

/// Applies the wrapped activation to `n` combiner values.
///
/// # Safety
/// `values` and `out` must each hold `n` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn cn_wrapper_apply(
    wrapper: *const CnWrapper,
    values: *const f64,
    n: size_t,
    out: *mut f64,
) -> CnStatus {
    guard(|| {
        let w = handle(wrapper, "wrapper")?;
        let v = slice(values, n, "values")?.to_vec();
        for (o, x) in slice_mut(out, n, "out")?.iter_mut().zip(v) {
            *o = w.0.apply(x);
        }
        Ok(())
    })
}

/// Guaranteed pointwise error bound of the wrapper.
///
/// # Safety
/// `wrapper` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cn_wrapper_error_bound(wrapper: *const CnWrapper, out: *mut f64) -> CnStatus {
    guard(|| {
        let w = handle(wrapper, "wrapper")?;
        *out.as_mut().ok_or_else(|| null("out"))? = w.0.error_bound();
        Ok(())
    })
}

/// Wrapper parameters as JSON; release with [`cn_string_free`].
///
/// # Safety
/// `wrapper` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cn_wrapper_to_json(wrapper: *const CnWrapper, out: *mut *mut c_char) -> CnStatus {
    guard(|| {
        let w = handle(wrapper, "wrapper")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = serde_json::to_string(&w.0).map_err(Error::from)?;
        *out = CString::new(s).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Fills cells whose `known` flag is 0 with the mean of the `k` nearest
/// known cells. `values`, `known` and `out` are `rows x cols` row-major.
///
/// # Safety
/// All buffers must hold `rows * cols` elements.
#[no_mangle]
pub unsafe extern "C" fn cn_knn_impute(
    values: *const f64,
    known: *const u8,
    rows: size_t,
    cols: size_t,
    k: size_t,
    out: *mut f64,
) -> CnStatus {
    guard(|| {
        let len = checked_len(rows, cols)?;
        let v = slice(values, len, "values")?;
        let mask: &[u8] = if len == 0 {
            &[]
        } else if known.is_null() {
            return Err(null("known"));
        } else {
            std::slice::from_raw_parts(known, len)
        };
        let cells = v.iter().zip(mask).map(|(&x, &m)| (m != 0).then_some(x)).collect();
        let filled = knn_impute(&Grid::new(rows, cols, cells)?, k)?;
        slice_mut(out, len, "out")?.copy_from_slice(filled.as_slice());
        Ok(())
    })
}
