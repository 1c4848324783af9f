//! C ABI over `mspr`.
//!
//! Every fallible call returns an [`MsprStatus`]; on failure the message is
//! kept per thread and read with [`mspr_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_load`/`*_collect`/`mspr_train` and released
//! with the matching `*_free`. States are flat `double` arrays of
//! [`mspr_env_state_len`] values, goals and actions are 2 doubles.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mspr::agent::{act, load_checkpoint, q_value, save_checkpoint, train, Checkpoint, TrainConfig};
use mspr::datagen::{self, collect, CollectConfig, CollectMode, OfflineDataset};
use mspr::evalkit::evaluate;
use mspr::gcenv::{state_len, EnvId, EnvSpec, EnvState, Goal, NUM_EVAL_TASKS};
use mspr::ndmath::Tensor;
use mspr::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numeric = 4,
    Format = 5,
    Io = 6,
    Dataset = 7,
    Contract = 8,
    Panic = 9,
}

/// Environment handle.
pub struct MsprEnv {
    spec: EnvSpec,
}

/// Offline dataset handle.
pub struct MsprDataset {
    ds: OfflineDataset,
}

/// Trained representation and agent bound to an environment.
pub struct MsprPolicy {
    ck: Checkpoint,
    spec: EnvSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MsprStatus {
    match e {
        Error::Dimension { .. } => MsprStatus::Dimension,
        Error::Contract(_) => MsprStatus::Contract,
        Error::Parameter(_) => MsprStatus::InvalidArgument,
        Error::Numeric { .. } => MsprStatus::Numeric,
        Error::Format { .. } => MsprStatus::Format,
        Error::Dataset(_) => MsprStatus::Dataset,
        Error::Io(_) => MsprStatus::Io,
    }
}

enum Fail {
    Status(MsprStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(MsprStatus::NullPointer, format!("`{what}` is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail::Status(MsprStatus::InvalidArgument, msg.into())
}

/// Runs `f`, mapping errors and panics to a status and the last-error slot.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsprStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MsprStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad(format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn state_arg(spec: &EnvSpec, p: *const f64) -> Result<EnvState, Fail> {
    let v = slice_arg(p, state_len(spec.id), "state")?;
    Ok(EnvState::from_values(spec.id, v)?)
}

unsafe fn goal_arg(p: *const f64) -> Result<Goal, Fail> {
    let v = slice_arg(p, 2, "goal")?;
    Ok(Goal([v[0], v[1]]))
}

unsafe fn write_state(s: &EnvState, out: *mut f64) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out_state"));
    }
    let v = s.values();
    ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn mspr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mspr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Number of fixed evaluation tasks per environment.
#[no_mangle]
pub extern "C" fn mspr_num_eval_tasks() -> usize {
    NUM_EVAL_TASKS
}

/// `name` is one of `pointmaze_medium`, `pointmaze_large`, `pushbox`.
#[no_mangle]
pub unsafe extern "C" fn mspr_env_new(name: *const c_char, out: *mut *mut MsprEnv) -> MsprStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let id: EnvId = str_arg(name, "name")?.parse()?;
        *out = Box::into_raw(Box::new(MsprEnv { spec: EnvSpec::new(id) }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mspr_env_free(env: *mut MsprEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Values per state (2 for the mazes, 4 for the push arena); 0 for null.
#[no_mangle]
pub unsafe extern "C" fn mspr_env_state_len(env: *const MsprEnv) -> usize {
    env.as_ref().map_or(0, |e| state_len(e.spec.id))
}

/// Start state and goal of evaluation task `index`.
#[no_mangle]
pub unsafe extern "C" fn mspr_env_eval_task(
    env: *const MsprEnv,
    index: usize,
    out_state: *mut f64,
    out_goal: *mut f64,
) -> MsprStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let (s, g) = e.spec.sample_eval_task(index)?;
        if out_goal.is_null() {
            return Err(null("out_goal"));
        }
        write_state(&s, out_state)?;
        ptr::copy_nonoverlapping(g.0.as_ptr(), out_goal, 2);
        Ok(())
    })
}

/// One environment step; the action is clipped to `[-1, 1]²`.
#[no_mangle]
pub unsafe extern "C" fn mspr_env_step(
    env: *const MsprEnv,
    state: *const f64,
    action: *const f64,
    out_state: *mut f64,
) -> MsprStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let s = state_arg(&e.spec, state)?;
        let a = slice_arg(action, 2, "action")?;
        if !a.iter().all(|v| v.is_finite()) {
            return Err(bad("action must be finite"));
        }
        write_state(&e.spec.step(&s, [a[0], a[1]]), out_state)
    })
}

#[no_mangle]
pub unsafe extern "C" fn mspr_env_is_success(
    env: *const MsprEnv,
    state: *const f64,
    goal: *const f64,
    out: *mut bool,
) -> MsprStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let s = state_arg(&e.spec, state)?;
        let g = goal_arg(goal)?;
        *out_arg(out, "out")? = e.spec.is_success(&s, &g);
        Ok(())
    })
}

/// Collects `transitions` transitions with the scripted expert. `mode` is
/// `navigate` or `stitch`; `fragment_cells` only matters for `stitch`.
#[no_mangle]
pub unsafe extern "C" fn mspr_dataset_collect(
    env: *const MsprEnv,
    mode: *const c_char,
    sigma: f64,
    transitions: usize,
    fragment_cells: usize,
    seed: u64,
    out: *mut *mut MsprDataset,
) -> MsprStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let out = out_arg(out, "out")?;
        let mode: CollectMode = str_arg(mode, "mode")?.parse()?;
        let cfg = CollectConfig { mode, sigma, target_transitions: transitions, fragment_cells, seed };
        let ds = collect(&e.spec, &cfg)?;
        *out = Box::into_raw(Box::new(MsprDataset { ds }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mspr_dataset_load(path: *const c_char, out: *mut *mut MsprDataset) -> MsprStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = datagen::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MsprDataset { ds }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mspr_dataset_save(ds: *const MsprDataset, path: *const c_char) -> MsprStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        datagen::save(&d.ds, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of transitions, 0 for null.
#[no_mangle]
pub unsafe extern "C" fn mspr_dataset_num_transitions(ds: *const MsprDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.ds.num_transitions())
}

#[no_mangle]
pub unsafe extern "C" fn mspr_dataset_free(ds: *mut MsprDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains on `ds`. `config` holds `key=value` lines (the training keys of a
/// `config.resolved` file); null or empty means defaults.
#[no_mangle]
pub unsafe extern "C" fn mspr_train(
    ds: *const MsprDataset,
    config: *const c_char,
    out: *mut *mut MsprPolicy,
) -> MsprStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        let out = out_arg(out, "out")?;
        let mut cfg = TrainConfig::default();
        if !config.is_null() {
            for (i, line) in str_arg(config, "config")?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("config line {}: expected key=value", i + 1)))?;
                cfg.set(k.trim(), v)?;
            }
        }
        let (state, _) = train(&d.ds, &cfg)?;
        let spec = EnvSpec::new(d.ds.env);
        *out = Box::into_raw(Box::new(MsprPolicy { ck: Checkpoint::new(state, &cfg), spec }));
        Ok(())
    })
}

/// Loads a checkpoint written by `mspr train` or [`mspr_policy_save`] for
/// use in `env`.
#[no_mangle]
pub unsafe extern "C" fn mspr_policy_load(
    path: *const c_char,
    env: *const MsprEnv,
    out: *mut *mut MsprPolicy,
) -> MsprStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let out = out_arg(out, "out")?;
        let ck = load_checkpoint(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MsprPolicy { ck, spec: e.spec.clone() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mspr_policy_save(policy: *const MsprPolicy, path: *const c_char) -> MsprStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        save_checkpoint(&p.ck, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Deterministic action in `[-1, 1]²` for `state` towards `goal`.
#[no_mangle]
pub unsafe extern "C" fn mspr_policy_act(
    policy: *const MsprPolicy,
    state: *const f64,
    goal: *const f64,
    out_action: *mut f64,
) -> MsprStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let s = state_arg(&p.spec, state)?;
        let g = goal_arg(goal)?;
        let a = act(&p.spec, &p.ck.state.repr, &p.ck.state.agent, &s, &g)?;
        if out_action.is_null() {
            return Err(null("out_action"));
        }
        ptr::copy_nonoverlapping(a.as_ptr(), out_action, 2);
        Ok(())
    })
}

/// Critic estimate of the policy's own action.
#[no_mangle]
pub unsafe extern "C" fn mspr_policy_q(
    policy: *const MsprPolicy,
    state: *const f64,
    goal: *const f64,
    out: *mut f64,
) -> MsprStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let s = state_arg(&p.spec, state)?;
        let g = goal_arg(goal)?;
        let out = out_arg(out, "out")?;
        let sf = Tensor::from_rows(&[p.spec.state_features(&s)])?;
        let gf = Tensor::from_rows(&[p.spec.goal_features(&g)])?;
        *out = q_value(&p.ck.state.repr, &p.ck.state.agent, &sf, &gf)?.item();
        Ok(())
    })
}

/// Mean success over the fixed tasks, `episodes` per task.
#[no_mangle]
pub unsafe extern "C" fn mspr_policy_evaluate(
    policy: *const MsprPolicy,
    episodes: usize,
    seed: u64,
    out_success: *mut f64,
) -> MsprStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let out = out_arg(out_success, "out_success")?;
        *out = evaluate(&p.ck.state.repr, &p.ck.state.agent, &p.spec, episodes, seed)?.mean_success;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mspr_policy_free(policy: *mut MsprPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
