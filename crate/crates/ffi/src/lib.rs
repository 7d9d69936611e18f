//! C ABI over scenarios, channels, the secrecy reward, the grid oracle and
//! trained policies.
//!
//! Objects are opaque handles created by the `_default`, `_load`, `_mean`
//! and `_realize` functions and released with the matching `_free`. Fallible calls return
//! an [`MjStatus`]; on failure `moejam_last_error` describes the most recent
//! error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moejam::channel::{mean_channel, realize_channel, ChannelRealization, Fading, ScenarioConfig};
use moejam::config::RunConfig;
use moejam::oracle::{grid_search, OracleError, DEFAULT_BUDGET};
use moejam::policy::{Checkpoint, Policy};
use moejam::secrecy::{reward, PowerAllocation};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MjStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A value outside the model's domain, e.g. a bad geometry.
    Domain = 3,
    Io = 4,
    /// The grid would exceed the evaluation budget.
    Budget = 5,
    Panic = 6,
}

pub struct MjScenario {
    cfg: ScenarioConfig,
}

pub struct MjChannel {
    ch: ChannelRealization,
}

pub struct MjPolicy {
    policy: Policy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: MjStatus, msg: impl Into<String>) -> MjStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MjStatus) -> MjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MjStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, MjStatus> {
    if path.is_null() {
        return Err(fail(MjStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(MjStatus::InvalidArgument, "path is not UTF-8"))
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next call on this thread.
#[no_mangle]
pub extern "C" fn moejam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The default three-AP scenario. Never null.
#[no_mangle]
pub extern "C" fn moejam_scenario_default() -> *mut MjScenario {
    Box::into_raw(Box::new(MjScenario { cfg: ScenarioConfig::default() }))
}

/// Loads the `[scenario]` section of a run configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moejam_scenario_load(path: *const c_char, out: *mut *mut MjScenario) -> MjStatus {
    guard(|| {
        if out.is_null() {
            return fail(MjStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RunConfig::load(path) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(MjScenario { cfg: cfg.scenario }));
                MjStatus::Ok
            }
            Err(moejam::config::ConfigError::Io { .. }) => fail(MjStatus::Io, format!("cannot read {}", path.display())),
            Err(e) => fail(MjStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moejam_scenario_free(scenario: *mut MjScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of APs, which is also the action length. Zero for null.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moejam_scenario_n_aps(scenario: *const MjScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.cfg.n_aps())
}

/// Receivers per AP: users then eavesdroppers. Zero for null.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moejam_scenario_n_receivers(scenario: *const MjScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.cfg.n_receivers())
}

/// Pure path-loss channel (unit fading).
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moejam_channel_mean(scenario: *const MjScenario, out: *mut *mut MjChannel) -> MjStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(MjStatus::NullPointer, "null argument");
        };
        match mean_channel(&s.cfg) {
            Ok(ch) => {
                *out = Box::into_raw(Box::new(MjChannel { ch }));
                MjStatus::Ok
            }
            Err(e) => fail(MjStatus::Domain, e.to_string()),
        }
    })
}

/// One Rayleigh block-fading draw, reproducible from `seed`.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moejam_channel_realize(scenario: *const MjScenario, seed: u64, out: *mut *mut MjChannel) -> MjStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(MjStatus::NullPointer, "null argument");
        };
        match realize_channel(&s.cfg, Fading::Rayleigh, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(ch) => {
                *out = Box::into_raw(Box::new(MjChannel { ch }));
                MjStatus::Ok
            }
            Err(e) => fail(MjStatus::Domain, e.to_string()),
        }
    })
}

/// # Safety
/// `channel` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moejam_channel_free(channel: *mut MjChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Linear power gain from `ap` to `receiver`.
///
/// # Safety
/// `channel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moejam_channel_gain(channel: *const MjChannel, ap: usize, receiver: usize, out: *mut f64) -> MjStatus {
    guard(|| {
        let (Some(c), false) = (channel.as_ref(), out.is_null()) else {
            return fail(MjStatus::NullPointer, "null argument");
        };
        if ap >= c.ch.n_aps() || receiver >= c.ch.n_receivers() {
            return fail(MjStatus::InvalidArgument, format!("link ({ap}, {receiver}) out of range"));
        }
        *out = c.ch.gain(ap, receiver);
        MjStatus::Ok
    })
}

fn check_pair(s: &MjScenario, c: &MjChannel) -> Result<(), MjStatus> {
    if s.cfg.n_aps() != c.ch.n_aps() || s.cfg.n_receivers() != c.ch.n_receivers() {
        return Err(fail(MjStatus::InvalidArgument, "channel does not match scenario"));
    }
    Ok(())
}

/// Sum of secrecy rates plus `weight` times the sum of secure energy
/// efficiencies, for per-AP `powers` in watts.
///
/// # Safety
/// `powers` must point to `n_powers` doubles; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn moejam_reward(
    scenario: *const MjScenario,
    channel: *const MjChannel,
    powers: *const f64,
    n_powers: usize,
    weight: f64,
    out: *mut f64,
) -> MjStatus {
    guard(|| {
        let (Some(s), Some(c), false, false) = (scenario.as_ref(), channel.as_ref(), powers.is_null(), out.is_null()) else {
            return fail(MjStatus::NullPointer, "null argument");
        };
        if let Err(e) = check_pair(s, c) {
            return e;
        }
        if n_powers != s.cfg.n_aps() {
            return fail(MjStatus::InvalidArgument, format!("expected {} powers, got {n_powers}", s.cfg.n_aps()));
        }
        if !weight.is_finite() {
            return fail(MjStatus::InvalidArgument, "weight must be finite");
        }
        let p = std::slice::from_raw_parts(powers, n_powers).to_vec();
        match PowerAllocation::new(p, &s.cfg) {
            Ok(p) => {
                *out = reward(&p, &c.ch, &s.cfg, weight).reward;
                MjStatus::Ok
            }
            Err(e) => fail(MjStatus::Domain, e.to_string()),
        }
    })
}

/// Exhaustive search over `resolution` power levels per AP. Writes the best
/// allocation (watts) to `out_powers` and its reward to `out_reward`.
///
/// # Safety
/// `out_powers` must hold `n_powers` doubles; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn moejam_grid_search(
    scenario: *const MjScenario,
    channel: *const MjChannel,
    weight: f64,
    resolution: usize,
    out_powers: *mut f64,
    n_powers: usize,
    out_reward: *mut f64,
) -> MjStatus {
    guard(|| {
        let (Some(s), Some(c), false, false) = (scenario.as_ref(), channel.as_ref(), out_powers.is_null(), out_reward.is_null()) else {
            return fail(MjStatus::NullPointer, "null argument");
        };
        if let Err(e) = check_pair(s, c) {
            return e;
        }
        if n_powers != s.cfg.n_aps() {
            return fail(MjStatus::InvalidArgument, format!("expected room for {} powers, got {n_powers}", s.cfg.n_aps()));
        }
        match grid_search(&c.ch, &s.cfg, weight, resolution, DEFAULT_BUDGET) {
            Ok(r) => {
                std::slice::from_raw_parts_mut(out_powers, n_powers).copy_from_slice(r.best_allocation.powers());
                *out_reward = r.best_reward;
                MjStatus::Ok
            }
            Err(e @ OracleError::Budget { .. }) => fail(MjStatus::Budget, e.to_string()),
            Err(e) => fail(MjStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Loads the policy half of a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moejam_policy_load(path: *const c_char, out: *mut *mut MjPolicy) -> MjStatus {
    guard(|| {
        if out.is_null() {
            return fail(MjStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(MjPolicy { policy: c.policy }));
                MjStatus::Ok
            }
            Err(moejam::policy::CheckpointError::Io(e)) => fail(MjStatus::Io, e.to_string()),
            Err(e) => fail(MjStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `policy` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moejam_policy_free(policy: *mut MjPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Normalized action in `[0, 1]^n` for `state`, sampled with a stream seeded
/// by `seed`. `out_expert` receives the routed expert, or -1 for policies
/// without experts; it may be null.
///
/// # Safety
/// Buffers must hold the stated lengths; `policy` must be live.
#[no_mangle]
pub unsafe extern "C" fn moejam_policy_act(
    policy: *const MjPolicy,
    state: *const f64,
    state_len: usize,
    seed: u64,
    out_action: *mut f64,
    action_len: usize,
    out_expert: *mut i32,
) -> MjStatus {
    guard(|| {
        let (Some(p), false, false) = (policy.as_ref(), state.is_null(), out_action.is_null()) else {
            return fail(MjStatus::NullPointer, "null argument");
        };
        let state = std::slice::from_raw_parts(state, state_len);
        match p.policy.act(state, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok((a, expert)) => {
                if a.len() != action_len {
                    return fail(MjStatus::InvalidArgument, format!("action has {} entries, buffer holds {action_len}", a.len()));
                }
                std::slice::from_raw_parts_mut(out_action, action_len).copy_from_slice(&a);
                if let Some(e) = out_expert.as_mut() {
                    *e = expert.map_or(-1, |k| k as i32);
                }
                MjStatus::Ok
            }
            Err(e) => fail(MjStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Clears the thread's error message.
#[no_mangle]
pub extern "C" fn moejam_clear_error() {
    set_error("");
}
