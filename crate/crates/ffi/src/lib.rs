//! C ABI for the geoworld engine.
//!
//! Every function returns a [`GwStatus`]. On failure the message is kept per
//! thread and can be read with [`gw_last_error`]. Objects are opaque handles
//! created by `*_new`/constructor calls and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use geoworld::envs::{make_grid_orient, make_passage, make_torus, TabularMdp, WallMode};
use geoworld::eval::{hits_at_k, mrr};
use geoworld::geometry::{wrap, FactorSpec, LatentPoint, LatentSpaceSpec, Metric};
use geoworld::model::{MaskTable, ModelBundle, ModelConfig};
use geoworld::Error;

/// Result codes. `GW_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStatus {
    Ok = 0,
    InvalidArgument = 1,
    Contract = 2,
    Numerical = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    NullPointer = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwMetric {
    L1 = 0,
    L2 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwFactorKind {
    /// A circle `R / kZ`; the parameter is `k`.
    Circle = 0,
    /// A Euclidean block; the parameter is its dimension.
    Euclidean = 1,
}

/// Opaque latent space handle.
pub struct GwLatentSpace(LatentSpaceSpec);

/// Opaque environment handle.
pub struct GwMdp(TabularMdp);

/// Opaque world model handle.
pub struct GwModel(ModelBundle);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GwStatus {
    match e {
        Error::InvalidArgument(_) => GwStatus::InvalidArgument,
        Error::Contract(_) => GwStatus::Contract,
        Error::Numerical { .. } | Error::Diverged { .. } => GwStatus::Numerical,
        Error::Config { .. } => GwStatus::Config,
        Error::Io { .. } => GwStatus::Io,
        Error::Format(_) => GwStatus::Format,
    }
}

enum Fail {
    Null(&'static str),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GwStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            GwStatus::NullPointer
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            GwStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn boxed<T>(value: T, dst: &mut *mut T) {
    *dst = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reduce `x` into `[0, k)`.
///
/// # Safety
/// `result` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn gw_wrap(x: f64, k: f64, result: *mut f64) -> GwStatus {
    guard(|| {
        *out(result, "result")? = wrap(x, k)?;
        Ok(())
    })
}

/// Build a latent space from `n` factors.
///
/// # Safety
/// `kinds` and `params` must point to `n` elements; `space` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gw_space_new(
    kinds: *const GwFactorKind,
    params: *const f64,
    n: usize,
    space: *mut *mut GwLatentSpace,
) -> GwStatus {
    guard(|| {
        let kinds = slice(kinds, n, "kinds")?;
        let params = slice(params, n, "params")?;
        let dst = out(space, "space")?;
        let mut factors = Vec::with_capacity(n);
        for (&k, &p) in kinds.iter().zip(params) {
            factors.push(match k {
                GwFactorKind::Circle => FactorSpec::Circle(p),
                GwFactorKind::Euclidean => {
                    if !(p >= 1.0 && p.fract() == 0.0) {
                        return Err(Error::InvalidArgument(format!("euclidean dimension must be a positive integer, got {p}")).into());
                    }
                    FactorSpec::Euclidean(p as usize)
                }
            });
        }
        boxed(GwLatentSpace(LatentSpaceSpec::new(factors)?), dst);
        Ok(())
    })
}

/// # Safety
/// `space` must come from `gw_space_new` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gw_space_free(space: *mut GwLatentSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// # Safety
/// `space` must be a live handle and `dim` writable.
#[no_mangle]
pub unsafe extern "C" fn gw_space_dim(space: *const GwLatentSpace, dim: *mut usize) -> GwStatus {
    guard(|| {
        *out(dim, "dim")? = obj(space, "space")?.0.total_dim();
        Ok(())
    })
}

fn point(space: &LatentSpaceSpec, z: &[f64]) -> Result<LatentPoint, Fail> {
    Ok(space.point(z.to_vec())?)
}

/// `result = z ⊕ delta`; all arrays have the space's dimension.
///
/// # Safety
/// Arrays must hold `gw_space_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_space_oplus(
    space: *const GwLatentSpace,
    z: *const f64,
    delta: *const f64,
    result: *mut f64,
) -> GwStatus {
    guard(|| {
        let s = &obj(space, "space")?.0;
        let d = s.total_dim();
        let p = point(s, slice(z, d, "z")?)?;
        let r = s.oplus(&p, slice(delta, d, "delta")?)?;
        slice_mut(result, d, "result")?.copy_from_slice(r.coords());
        Ok(())
    })
}

/// `a - b` per coordinate, circular coordinates reduced to `[-k/2, k/2)`.
///
/// # Safety
/// Arrays must hold `gw_space_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn gw_space_signed_diff(
    space: *const GwLatentSpace,
    a: *const f64,
    b: *const f64,
    result: *mut f64,
) -> GwStatus {
    guard(|| {
        let s = &obj(space, "space")?.0;
        let d = s.total_dim();
        let r = s.signed_diff(&point(s, slice(a, d, "a")?)?, &point(s, slice(b, d, "b")?)?)?;
        slice_mut(result, d, "result")?.copy_from_slice(&r);
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must hold `gw_space_dim` doubles; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gw_space_distance(
    space: *const GwLatentSpace,
    a: *const f64,
    b: *const f64,
    metric: GwMetric,
    result: *mut f64,
) -> GwStatus {
    guard(|| {
        let s = &obj(space, "space")?.0;
        let d = s.total_dim();
        let m = match metric {
            GwMetric::L1 => Metric::L1,
            GwMetric::L2 => Metric::L2,
        };
        *out(result, "result")? = s.distance(&point(s, slice(a, d, "a")?)?, &point(s, slice(b, d, "b")?)?, m)?;
        Ok(())
    })
}

/// # Safety
/// `mdp` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gw_mdp_passage(n: usize, mdp: *mut *mut GwMdp) -> GwStatus {
    guard(|| {
        boxed(GwMdp(make_passage(n)?), out(mdp, "mdp")?);
        Ok(())
    })
}

/// # Safety
/// `mdp` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gw_mdp_torus(n: usize, mdp: *mut *mut GwMdp) -> GwStatus {
    guard(|| {
        boxed(GwMdp(make_torus(n)?), out(mdp, "mdp")?);
        Ok(())
    })
}

/// Orientation gridworld; `exclude_walls` nonzero marks wall bumps invalid.
///
/// # Safety
/// `mdp` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gw_mdp_grid(n: usize, exclude_walls: i32, mdp: *mut *mut GwMdp) -> GwStatus {
    guard(|| {
        let mode = if exclude_walls != 0 { WallMode::Exclude } else { WallMode::Selfloop };
        boxed(GwMdp(make_grid_orient(n, None, mode)?), out(mdp, "mdp")?);
        Ok(())
    })
}

/// # Safety
/// `mdp` must come from a `gw_mdp_*` constructor. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gw_mdp_free(mdp: *mut GwMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gw_mdp_sizes(mdp: *const GwMdp, n_states: *mut usize, n_actions: *mut usize) -> GwStatus {
    guard(|| {
        let m = &obj(mdp, "mdp")?.0;
        *out(n_states, "n_states")? = m.n_states();
        *out(n_actions, "n_actions")? = m.n_actions();
        Ok(())
    })
}

fn check_pair(m: &TabularMdp, s: usize, a: usize) -> Result<(), Fail> {
    if s >= m.n_states() || a >= m.n_actions() {
        return Err(Error::Contract(format!("state {s} / action {a} out of range")).into());
    }
    Ok(())
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gw_mdp_step(
    mdp: *const GwMdp,
    s: usize,
    a: usize,
    next: *mut usize,
    reward: *mut f64,
) -> GwStatus {
    guard(|| {
        let m = &obj(mdp, "mdp")?.0;
        check_pair(m, s, a)?;
        *out(next, "next")? = m.next_state(s, a);
        if !reward.is_null() {
            *reward = m.reward(s, a);
        }
        Ok(())
    })
}

/// Untrained world model for `mdp` over `space`, without masks.
///
/// # Safety
/// Handles must be live and `model` writable.
#[no_mangle]
pub unsafe extern "C" fn gw_model_new(
    mdp: *const GwMdp,
    space: *const GwLatentSpace,
    seed: u64,
    model: *mut *mut GwModel,
) -> GwStatus {
    guard(|| {
        let m = &obj(mdp, "mdp")?.0;
        let s = obj(space, "space")?.0.clone();
        let bundle = ModelBundle::for_mdp(m, s, MaskTable::empty(m.n_actions()), ModelConfig::default(), seed)?;
        boxed(GwModel(bundle), out(model, "model")?);
        Ok(())
    })
}

/// Replace the model's parameters with a checkpoint written by the CLI.
///
/// # Safety
/// `model` must be live; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gw_model_load(model: *mut GwModel, path: *const c_char) -> GwStatus {
    guard(|| {
        let b = &mut out(model, "model")?.0;
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        b.load_params(p)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from `gw_model_new`. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gw_model_free(model: *mut GwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent of state `s`; `z` receives the latent dimension.
///
/// # Safety
/// Handles must be live; `z` must hold the model's latent dimension.
#[no_mangle]
pub unsafe extern "C" fn gw_model_encode(model: *const GwModel, mdp: *const GwMdp, s: usize, z: *mut f64) -> GwStatus {
    guard(|| {
        let b = &obj(model, "model")?.0;
        let m = &obj(mdp, "mdp")?.0;
        check_pair(m, s, 0)?;
        if m.encoding_dim() != b.input_dim() {
            return Err(Error::Contract("model and environment disagree on input size".into()).into());
        }
        let p = b.encode(m.encode(s))?;
        slice_mut(z, b.latent_dim(), "z")?.copy_from_slice(p.coords());
        Ok(())
    })
}

/// `next = z ⊕ Δ(z, a)`.
///
/// # Safety
/// `z` and `next` must hold the model's latent dimension.
#[no_mangle]
pub unsafe extern "C" fn gw_model_predict_next(
    model: *const GwModel,
    z: *const f64,
    a: usize,
    next: *mut f64,
) -> GwStatus {
    guard(|| {
        let b = &obj(model, "model")?.0;
        if a >= b.n_actions() {
            return Err(Error::Contract(format!("action {a} out of range")).into());
        }
        let d = b.latent_dim();
        let p = point(b.space(), slice(z, d, "z")?)?;
        let r = b.predict_next(&p, a)?;
        slice_mut(next, d, "next")?.copy_from_slice(r.coords());
        Ok(())
    })
}

/// Fraction of `ranks` at most `k`.
///
/// # Safety
/// `ranks` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn gw_hits_at_k(ranks: *const usize, n: usize, k: usize, result: *mut f64) -> GwStatus {
    guard(|| {
        *out(result, "result")? = hits_at_k(slice(ranks, n, "ranks")?, k)?;
        Ok(())
    })
}

/// Mean reciprocal rank.
///
/// # Safety
/// `ranks` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn gw_mrr(ranks: *const usize, n: usize, result: *mut f64) -> GwStatus {
    guard(|| {
        *out(result, "result")? = mrr(slice(ranks, n, "ranks")?)?;
        Ok(())
    })
}
