//! C interface to `nmg`.
//!
//! Networks are opaque handles created by `nmg_network_build` or
//! `nmg_network_load` and released with `nmg_network_free`. Every fallible
//! function returns an [`NmgStatus`]; the message of the most recent failure
//! on the calling thread is available from `nmg_last_error_message`.
//! Fields are square, row-major arrays of `side * side` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nmg::checkpoint::Checkpoint;
use nmg::loss::{loss, LossConfig};
use nmg::train::{train, TrainConfig};
use nmg::{Error, GridField, MgNetwork, ModelKind, ProblemSpec};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    NotTrainable = 6,
    Diverged = 7,
    Numerical = 8,
    Panic = 9,
}

/// Opaque network handle.
pub struct NmgNetwork {
    net: MgNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> NmgStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::EmptyOutput { .. } => NmgStatus::ShapeMismatch,
        Error::Io(_) => NmgStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => NmgStatus::Checkpoint,
        Error::NotTrainable(_) => NmgStatus::NotTrainable,
        Error::Diverged { .. } => NmgStatus::Diverged,
        Error::NonFiniteGradient | Error::NonPositiveDiagonal { .. } | Error::Singular | Error::NoConvergence => {
            NmgStatus::Numerical
        }
        _ => NmgStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), NmgStatus>) -> NmgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NmgStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            NmgStatus::Panic
        }
    }
}

fn fail(err: Error) -> NmgStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(what: &str) -> NmgStatus {
    set_error(format!("{what} is null"));
    NmgStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, NmgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        NmgStatus::InvalidArgument
    })
}

unsafe fn handle<'a>(p: *const NmgNetwork) -> Result<&'a NmgNetwork, NmgStatus> {
    p.as_ref().ok_or_else(|| null("network"))
}

unsafe fn field_arg(p: *const f64, len: usize, side: usize) -> Result<GridField, NmgStatus> {
    if p.is_null() {
        return Err(null("input field"));
    }
    if len != side * side {
        set_error(format!("field has {len} values, expected {side}x{side}"));
        return Err(NmgStatus::ShapeMismatch);
    }
    let values = std::slice::from_raw_parts(p, len).to_vec();
    GridField::new(side, side, values).map_err(fail)
}

unsafe fn write_field(out: *mut f64, f: &GridField) -> Result<(), NmgStatus> {
    if out.is_null() {
        return Err(null("output field"));
    }
    std::slice::from_raw_parts_mut(out, f.len()).copy_from_slice(f.values());
    Ok(())
}

unsafe fn store_handle(out: *mut *mut NmgNetwork, net: MgNetwork) {
    *out = Box::into_raw(Box::new(NmgNetwork { net }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nmg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nmg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds an untrained model, e.g. `"lmg"` or `"s3mg_s"`, for a problem such
/// as `"p5"` on a grid of side `2^depth - 1`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_build(
    model: *const c_char,
    problem: *const c_char,
    depth: u32,
    out: *mut *mut NmgNetwork,
) -> NmgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: ModelKind = str_arg(model, "model")?.parse().map_err(fail)?;
        let problem = ProblemSpec::by_name(str_arg(problem, "problem")?).map_err(fail)?;
        let net = MgNetwork::build(kind, depth, &problem).map_err(fail)?;
        store_handle(out, net);
        Ok(())
    })
}

/// Loads a checkpoint and lays the model out for `depth`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_load(path: *const c_char, depth: u32, out: *mut *mut NmgNetwork) -> NmgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?)).map_err(fail)?;
        let net = ck.network(depth).map_err(fail)?;
        store_handle(out, net);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_free(net: *mut NmgNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Side length of the network's fine grid.
///
/// # Safety
/// `net` must be a live handle and `side` writable.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_fine_side(net: *const NmgNetwork, side: *mut usize) -> NmgStatus {
    guard(|| {
        let h = handle(net)?;
        if side.is_null() {
            return Err(null("side"));
        }
        *side = h.net.fine_side();
        Ok(())
    })
}

/// `out = N r`, the approximate inverse applied to a residual.
///
/// # Safety
/// `r` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_apply_n(
    net: *const NmgNetwork,
    r: *const f64,
    len: usize,
    out: *mut f64,
) -> NmgStatus {
    guard(|| {
        let h = handle(net)?;
        let r = field_arg(r, len, h.net.fine_side())?;
        write_field(out, &h.net.apply_n(&r).map_err(fail)?)
    })
}

/// `out = (I - N A) z`.
///
/// # Safety
/// `z` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_error_propagation(
    net: *const NmgNetwork,
    z: *const f64,
    len: usize,
    out: *mut f64,
) -> NmgStatus {
    guard(|| {
        let h = handle(net)?;
        let z = field_arg(z, len, h.net.fine_side())?;
        write_field(out, &h.net.apply_error_propagation(&z).map_err(fail)?)
    })
}

/// Stochastic spectral radius estimate of `I - N A`. A divergent model
/// yields a value `>= 1` or infinity, not an error.
///
/// # Safety
/// `net` must be a live handle and `rho` writable.
#[no_mangle]
pub unsafe extern "C" fn nmg_network_rho1(
    net: *const NmgNetwork,
    power_k: usize,
    n_batch: usize,
    seed: u64,
    rho: *mut f64,
) -> NmgStatus {
    guard(|| {
        let h = handle(net)?;
        if rho.is_null() {
            return Err(null("rho"));
        }
        *rho = loss(&h.net, &LossConfig { power_k, n_batch, seed }).map_err(fail)?;
        Ok(())
    })
}

/// Trains `model` on `problem` at depth `train_j` with the model's default
/// optimizer and writes a checkpoint to `path`. A non-positive
/// `learning_rate` selects the default rate. `final_loss` may be null.
///
/// # Safety
/// String arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nmg_train(
    model: *const c_char,
    problem: *const c_char,
    train_j: u32,
    steps: usize,
    learning_rate: f64,
    seed: u64,
    path: *const c_char,
    final_loss: *mut f64,
) -> NmgStatus {
    guard(|| {
        let kind: ModelKind = str_arg(model, "model")?.parse().map_err(fail)?;
        let problem = ProblemSpec::by_name(str_arg(problem, "problem")?).map_err(fail)?;
        let path = str_arg(path, "path")?;
        let base = TrainConfig::for_model(kind);
        let cfg = TrainConfig {
            steps,
            train_j,
            seed,
            learning_rate: if learning_rate > 0.0 { learning_rate } else { base.learning_rate },
            ..base
        };
        let outcome = train(kind, &problem, &cfg).map_err(fail)?;
        outcome.checkpoint.save(path).map_err(fail)?;
        if !final_loss.is_null() {
            *final_loss = outcome.checkpoint.final_loss().unwrap_or(f64::INFINITY);
        }
        if let Some(step) = outcome.diverged_at {
            set_error(format!("training diverged at step {step}"));
            return Err(NmgStatus::Diverged);
        }
        Ok(())
    })
}
