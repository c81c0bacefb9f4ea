//! C ABI over the `ohprl` crate: environments, trained policies and the
//! training entry point.
//!
//! Every function returns an [`OhprlStatus`]. On failure the message is
//! kept per thread and read back with [`ohprl_last_error`]. Handles are
//! opaque; each `*_new`/`*_load` has a matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ohprl::envs::{Env, EnvId, EnvParams, ACTION_DIM};
use ohprl::nets::{deterministic_action, ParamSet};
use ohprl::runtime::{checkpoint, train, RunConfig, TrainHooks};
use ohprl::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OhprlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    NonFinite = 5,
    Io = 6,
    Checkpoint = 7,
    EpisodeOver = 8,
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs replaced"));
}

fn status_of(err: &Error) -> OhprlStatus {
    match err {
        Error::Config(_) | Error::Validation(_) => OhprlStatus::Config,
        Error::Shape(_) => OhprlStatus::Shape,
        Error::NonFinite { .. } => OhprlStatus::NonFinite,
        Error::Io { .. } => OhprlStatus::Io,
        Error::Checkpoint(_) | Error::Schema(_) | Error::Json(_) => OhprlStatus::Checkpoint,
        Error::Protocol(_) => OhprlStatus::InvalidArgument,
        _ => OhprlStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard<F>(f: F) -> OhprlStatus
where
    F: FnOnce() -> Result<(), (OhprlStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OhprlStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ohprl");
            OhprlStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (OhprlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (OhprlStatus, String) {
    (OhprlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (OhprlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (OhprlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], (OhprlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        return Err((OhprlStatus::Shape, format!("{what} has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], (OhprlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < want {
        return Err((OhprlStatus::Shape, format!("{what} holds {len} values, needs {want}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next ohprl call on the same thread.
#[no_mangle]
pub extern "C" fn ohprl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Width of the action vector for every environment.
#[no_mangle]
pub extern "C" fn ohprl_action_dim() -> usize {
    ACTION_DIM
}

/// Opaque environment instance.
pub struct OhprlEnv {
    env: Env,
    obs: Vec<f64>,
}

/// Creates `press_button` or `push_ball` with default geometry, reset on `seed`.
///
/// # Safety
/// `env_id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ohprl_env_new(env_id: *const c_char, seed: u64, out: *mut *mut OhprlEnv) -> OhprlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let id: EnvId = str_arg(env_id, "env_id")?.parse().map_err(lib_err)?;
        let (env, first) = Env::reset(id, &EnvParams::default(), seed);
        *out = Box::into_raw(Box::new(OhprlEnv {
            env,
            obs: first.observation,
        }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`ohprl_env_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ohprl_env_free(env: *mut OhprlEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ohprl_env_obs_dim(env: *const OhprlEnv) -> usize {
    env.as_ref().map_or(0, |e| e.obs.len())
}

/// Starts a new episode on `seed`.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ohprl_env_reset(env: *mut OhprlEnv, seed: u64) -> OhprlStatus {
    guard(|| {
        let e = env.as_mut().ok_or_else(|| null("env"))?;
        e.obs = e.env.reset_in_place(seed).observation;
        Ok(())
    })
}

/// Copies the current observation into `out` (capacity `len`).
///
/// # Safety
/// `env` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ohprl_env_observe(env: *const OhprlEnv, out: *mut f64, len: usize) -> OhprlStatus {
    guard(|| {
        let e = env.as_ref().ok_or_else(|| null("env"))?;
        out_slice(out, len, e.obs.len(), "out")?.copy_from_slice(&e.obs);
        Ok(())
    })
}

/// Result flags of one step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OhprlStepInfo {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub unsafe_contact: bool,
    pub truncated: bool,
}

/// Executes `action` (length [`ohprl_action_dim`]); the next observation is
/// readable with [`ohprl_env_observe`]. Stepping a finished episode
/// returns `OHPRL_STATUS_EPISODE_OVER`.
///
/// # Safety
/// `env` must be a live handle, `action` must hold `len` doubles, `info`
/// must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn ohprl_env_step(
    env: *mut OhprlEnv,
    action: *const f64,
    len: usize,
    info: *mut OhprlStepInfo,
) -> OhprlStatus {
    guard(|| {
        let e = env.as_mut().ok_or_else(|| null("env"))?;
        let a = slice_arg(action, len, ACTION_DIM, "action")?;
        if !e.env.is_active() {
            return Err((OhprlStatus::EpisodeOver, "episode is over; reset first".into()));
        }
        let r = e.env.step(a).map_err(lib_err)?;
        e.obs = r.observation;
        if let Some(out) = info.as_mut() {
            *out = OhprlStepInfo {
                reward: r.reward,
                done: r.done,
                success: r.info.success,
                unsafe_contact: r.info.unsafe_contact,
                truncated: r.info.truncated,
            };
        }
        Ok(())
    })
}

/// Opaque trained policy.
pub struct OhprlPolicy {
    params: ParamSet,
}

/// Loads the policy from a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ohprl_policy_load(dir: *const c_char, out: *mut *mut OhprlPolicy) -> OhprlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(dir, "dir")?);
        let ckpt = checkpoint::load(&path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(OhprlPolicy {
            params: ckpt.nets.policy,
        }));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`ohprl_policy_load`]. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ohprl_policy_free(policy: *mut OhprlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ohprl_policy_obs_dim(policy: *const OhprlPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.params.input_width())
}

/// Deterministic action `tanh(mean)` for one observation.
///
/// # Safety
/// `policy` must be a live handle; `obs` holds `obs_len` doubles and
/// `action` holds `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ohprl_policy_act(
    policy: *const OhprlPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    action_len: usize,
) -> OhprlStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let s = slice_arg(obs, obs_len, p.params.input_width(), "obs")?;
        let a = deterministic_action(&p.params, s).map_err(lib_err)?;
        out_slice(action, action_len, a.len(), "action")?.copy_from_slice(&a);
        Ok(())
    })
}

/// Trains with the configuration file at `config_path` (null for
/// defaults) plus `n_overrides` `key=value` strings, then writes the run
/// directory named by `run.out_dir`.
///
/// # Safety
/// `config_path` is null or a NUL-terminated path; `overrides` points to
/// `n_overrides` NUL-terminated strings (may be null when zero).
#[no_mangle]
pub unsafe extern "C" fn ohprl_train(
    config_path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    lockstep: bool,
) -> OhprlStatus {
    guard(|| {
        let mut config = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?)).map_err(lib_err)?
        };
        if n_overrides > 0 {
            if overrides.is_null() {
                return Err(null("overrides"));
            }
            let items: Vec<&str> = std::slice::from_raw_parts(overrides, n_overrides)
                .iter()
                .map(|&p| str_arg(p, "override"))
                .collect::<Result<_, _>>()?;
            config.apply_overrides(&items).map_err(lib_err)?;
        }
        train(&config, lockstep, TrainHooks::default()).map_err(lib_err)?;
        Ok(())
    })
}
