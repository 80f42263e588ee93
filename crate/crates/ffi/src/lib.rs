//! C ABI over the `rlvr_forge` library.
//!
//! Conventions:
//! * every fallible call returns an [`RfStatus`] and writes results through
//!   out-pointers, which are left untouched on failure;
//! * on failure, [`rf_last_error`] describes the error for the calling
//!   thread until its next call into this library;
//! * strings are NUL-terminated UTF-8; strings returned by the library are
//!   owned by the caller and released with [`rf_string_free`];
//! * graphs and policies are opaque handles released with their `_free`
//!   function. Passing NULL to a `_free` function is a no-op.
//!
//! Option labels are ASCII capitals starting at `A`; an absent label is
//! reported as `0`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rlvr_forge::evalharness::{macro_average, ModelAdapter, PolicyAdapter};
use rlvr_forge::kgstore::{ingest_graph, Graph};
use rlvr_forge::reward::{self, RewardWeights};
use rlvr_forge::synth::{generate_corpus, SynthConfig};
use rlvr_forge::{grpo, jsonl, Error};

/// Bumped on any incompatible change to this interface.
pub const RF_ABI_VERSION: u32 = 1;

/// Largest option count accepted at the boundary.
pub const RF_MAX_OPTIONS: usize = 26;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument or configuration value is out of range.
    InvalidArgument = 3,
    /// A referenced file does not exist.
    FileNotFound = 4,
    /// Malformed input data or a violated precondition.
    DataError = 5,
    /// A remote model, validator or teacher could not be reached.
    ExternalError = 6,
    /// A panic was caught at the boundary.
    Internal = 7,
}

/// Reward breakdown for one completion.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RfReward {
    pub format_ok: bool,
    pub correct: bool,
    /// Extracted label, or 0 when none.
    pub extracted: u8,
    pub total: f64,
}

/// Loaded knowledge graph.
pub struct RfGraph(Graph);

/// Trained policy restored from a checkpoint.
pub struct RfPolicy(PolicyAdapter);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(RfStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ConfigInvalid(_) => RfStatus::InvalidArgument,
            Error::FileNotFound(_) => RfStatus::FileNotFound,
            _ if e.exit_code() == 4 => RfStatus::ExternalError,
            _ => RfStatus::DataError,
        };
        set_error(format!("{}: {e}", e.name()));
        Fail(status)
    }
}

fn fail<T>(status: RfStatus, msg: &str) -> Result<T, Fail> {
    set_error(msg.to_string());
    Err(Fail(status))
}

/// Runs `body`, clearing the last error first and mapping panics.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> RfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic".into());
            RfStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(RfStatus::NullArgument, &format!("{what} is NULL"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s),
        Err(_) => fail(RfStatus::InvalidUtf8, &format!("{what} is not UTF-8")),
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(RfStatus::NullArgument, &format!("{what} is NULL"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(RfStatus::NullArgument, &format!("{what} is NULL")),
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(RfStatus::NullArgument, &format!("{what} is NULL")),
    }
}

fn option_labels(n_options: usize) -> Result<Vec<char>, Fail> {
    if !(2..=RF_MAX_OPTIONS).contains(&n_options) {
        return fail(RfStatus::InvalidArgument, "n_options must be in 2..=26");
    }
    Ok(reward::labels(n_options))
}

fn owned_string(s: String) -> Result<*mut c_char, Fail> {
    match CString::new(s) {
        Ok(c) => Ok(c.into_raw()),
        Err(_) => fail(RfStatus::DataError, "result contains a NUL byte"),
    }
}

#[no_mangle]
pub extern "C" fn rf_abi_version() -> u32 {
    RF_ABI_VERSION
}

/// Message for the calling thread's most recent failure, or NULL. Valid
/// until the thread's next call into the library.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be NULL or a pointer returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn rf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Whether `completion` holds exactly one well-formed answer tag pair.
///
/// # Safety
/// `completion` must be a NUL-terminated string; `out_ok` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_check_format(completion: *const c_char, out_ok: *mut bool) -> RfStatus {
    guard(|| {
        let t = text(completion, "completion")?;
        *out(out_ok, "out_ok")? = reward::check_format(t);
        Ok(())
    })
}

/// Extracts the answer label, writing 0 when there is none.
///
/// # Safety
/// `completion` must be a NUL-terminated string; `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_extract_answer(
    completion: *const c_char,
    n_options: usize,
    out_label: *mut u8,
) -> RfStatus {
    guard(|| {
        let t = text(completion, "completion")?;
        let labels = option_labels(n_options)?;
        let o = out(out_label, "out_label")?;
        *o = reward::extract_answer(t, &labels).map_or(0, |c| c as u8);
        Ok(())
    })
}

/// Scores a completion against the answer key `key` (an ASCII label).
///
/// # Safety
/// `completion` must be a NUL-terminated string; `out_reward` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rf_compute_reward(
    completion: *const c_char,
    key: u8,
    n_options: usize,
    w_correct: f64,
    w_format: f64,
    out_reward: *mut RfReward,
) -> RfStatus {
    guard(|| {
        let t = text(completion, "completion")?;
        let labels = option_labels(n_options)?;
        let key = key as char;
        if !labels.contains(&key) {
            return fail(RfStatus::InvalidArgument, "key is not a valid label");
        }
        let weights = RewardWeights { w_correct, w_format };
        weights.validate()?;
        let o = out(out_reward, "out_reward")?;
        let r = reward::compute_reward(t, key, &labels, &weights);
        *o = RfReward {
            format_ok: r.format_ok,
            correct: r.correct,
            extracted: r.extracted.map_or(0, |c| c as u8),
            total: r.total,
        };
        Ok(())
    })
}

/// Group-relative advantages of `n` rewards, written to `out_adv[0..n]`.
///
/// # Safety
/// `rewards` and `out_adv` must each address `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_group_advantages(rewards: *const f64, n: usize, out_adv: *mut f64) -> RfStatus {
    guard(|| {
        let r = slice(rewards, n, "rewards")?;
        let adv = grpo::advantages(r)?;
        if out_adv.is_null() {
            return fail(RfStatus::NullArgument, "out_adv is NULL");
        }
        std::slice::from_raw_parts_mut(out_adv, n).copy_from_slice(&adv);
        Ok(())
    })
}

/// Unweighted mean of `n` benchmark accuracies.
///
/// # Safety
/// `accuracies` must address `n` doubles; `out_mean` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_macro_average(accuracies: *const f64, n: usize, out_mean: *mut f64) -> RfStatus {
    guard(|| {
        let a = slice(accuracies, n, "accuracies")?;
        let m = macro_average(a)?;
        *out(out_mean, "out_mean")? = m;
        Ok(())
    })
}

/// Loads a JSON-Lines knowledge graph.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_graph` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_graph_load(path: *const c_char, out_graph: *mut *mut RfGraph) -> RfStatus {
    guard(|| {
        let p = text(path, "path")?;
        let o = out(out_graph, "out_graph")?;
        let g = ingest_graph(Path::new(p))?.graph;
        *o = Box::into_raw(Box::new(RfGraph(g)));
        Ok(())
    })
}

/// # Safety
/// `graph` must be NULL or a handle from [`rf_graph_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn rf_graph_free(graph: *mut RfGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_graph_entity_count(graph: *const RfGraph, out_count: *mut usize) -> RfStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        *out(out_count, "out_count")? = g.0.entity_count();
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_graph_edge_count(graph: *const RfGraph, out_count: *mut usize) -> RfStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        *out(out_count, "out_count")? = g.0.edge_count();
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle, `entity_id` a NUL-terminated string and
/// `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_graph_rarity_score(
    graph: *const RfGraph,
    entity_id: *const c_char,
    out_score: *mut f64,
) -> RfStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let id = text(entity_id, "entity_id")?;
        let o = out(out_score, "out_score")?;
        *o = g.0.rarity_score(id)?;
        Ok(())
    })
}

/// Generates `count` questions with `n_options` options each and returns
/// them as JSON Lines. The result is released with [`rf_string_free`].
///
/// # Safety
/// `graph` must be a live handle; `out_jsonl` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_synth_generate_jsonl(
    graph: *const RfGraph,
    count: usize,
    n_options: usize,
    seed: u64,
    out_jsonl: *mut *mut c_char,
) -> RfStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let o = out(out_jsonl, "out_jsonl")?;
        let config = SynthConfig {
            n_options,
            ..SynthConfig::default()
        };
        let items = generate_corpus(&g.0, &config, count, seed)?;
        let mut buf = Vec::new();
        jsonl::write_all(&mut buf, &items)?;
        *o = owned_string(String::from_utf8(buf).expect("serde_json emits UTF-8"))?;
        Ok(())
    })
}

/// Restores a policy from a checkpoint written by `rlvr-forge train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_policy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_policy_load(path: *const c_char, out_policy: *mut *mut RfPolicy) -> RfStatus {
    guard(|| {
        let p = text(path, "path")?;
        let o = out(out_policy, "out_policy")?;
        let adapter = PolicyAdapter::load(Path::new(p))?;
        *o = Box::into_raw(Box::new(RfPolicy(adapter)));
        Ok(())
    })
}

/// # Safety
/// `policy` must be NULL or a handle from [`rf_policy_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn rf_policy_free(policy: *mut RfPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Greedy completion for a question whose options are labelled `A`, `B`,
/// ... in order. The result is released with [`rf_string_free`].
///
/// # Safety
/// `policy` must be a live handle, `stem` a NUL-terminated string, `options`
/// an array of `n_options` NUL-terminated strings and `out_completion`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rf_policy_respond(
    policy: *const RfPolicy,
    stem: *const c_char,
    options: *const *const c_char,
    n_options: usize,
    out_completion: *mut *mut c_char,
) -> RfStatus {
    guard(|| {
        let pol = handle(policy, "policy")?;
        let stem = text(stem, "stem")?;
        let labels = option_labels(n_options)?;
        let raw = slice(options, n_options, "options")?;
        let mut map = BTreeMap::new();
        for (label, &p) in labels.iter().zip(raw) {
            map.insert(label.to_string(), text(p, "option")?.to_string());
        }
        let o = out(out_completion, "out_completion")?;
        *o = owned_string(pol.0.respond(stem, &map)?)?;
        Ok(())
    })
}
