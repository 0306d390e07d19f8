//! C ABI for the coalition engine.
//!
//! Conventions:
//! - every fallible function returns a [`CoalStatus`]; on failure a message
//!   is available from [`coal_last_error`] on the same thread;
//! - strings going in are NUL-terminated UTF-8 and are only borrowed;
//! - strings coming out through `char **` parameters are owned by the caller
//!   and must be released with [`coal_string_free`];
//! - plans cross the boundary as JSON arrays of `{"tool", "intent"}`
//!   objects, JSON paths as arrays of path strings such as `"a.b[0]"`.
//!
//! Handles ([`CoalCatalog`], [`CoalSession`]) are opaque. A catalog may be
//! shared between threads for reading; a session may be used from several
//! threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use coalition::catalog::ToolCatalog;
use coalition::config::LoadedConfig;
use coalition::eval::eval_plan;
use coalition::eval::rouge::rouge_l;
use coalition::jsonpath::JsonPath;
use coalition::pipeline::{CritiqueSource, Engine};
use coalition::planner::{parse_plan, sanitize_plan, Plan};
use coalition::rag::{project, reduce_with_selection};
use serde_json::{json, Value};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoalStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An input string was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An input string was not the expected JSON.
    InvalidJson = 3,
    /// Well-formed input the operation rejects (unknown path, empty golden
    /// plan, unparseable plan text, ...).
    InvalidInput = 4,
    /// Configuration or catalog could not be loaded.
    Config = 5,
    /// A pipeline run failed; the trace is still returned when requested.
    Pipeline = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// ROUGE-L precision, recall and F1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoalRouge {
    pub pre: f64,
    pub rec: f64,
    pub f: f64,
}

/// Opaque tool catalog.
pub struct CoalCatalog(ToolCatalog);

/// Opaque loaded configuration ready to run queries.
pub struct CoalSession {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CoalStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CoalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CoalStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CoalStatus::Panic
        }
    }
}

fn fail<T>(status: CoalStatus, message: impl ToString) -> FfiResult<T> {
    Err(Failure(status, message.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(CoalStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(CoalStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .map_or_else(|| fail(CoalStatus::NullArgument, format!("{name} is null")), Ok)
}

fn parse_json<T: serde::de::DeserializeOwned>(raw: &str, what: &str) -> FfiResult<T> {
    serde_json::from_str(raw).or_else(|e| fail(CoalStatus::InvalidJson, format!("{what}: {e}")))
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\u{FFFD}")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread, or null after a
/// successful call. The pointer stays valid until the next call on this
/// thread; do not free it.
#[no_mangle]
pub extern "C" fn coal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned through an out-parameter. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn coal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn coal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// ROUGE-L between a candidate and a reference text.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must point
/// to writable memory.
#[no_mangle]
pub unsafe extern "C" fn coal_rouge_l(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut CoalRouge,
) -> CoalStatus {
    guard(|| {
        let r = rouge_l(str_arg(candidate, "candidate")?, str_arg(reference, "reference")?);
        *out_arg(out, "out")? = CoalRouge {
            pre: r.pre,
            rec: r.rec,
            f: r.f,
        };
        Ok(())
    })
}

/// Whether the candidate plan ends with the golden plan's tool sequence.
///
/// # Safety
/// See [`coal_rouge_l`].
#[no_mangle]
pub unsafe extern "C" fn coal_eval_plan(
    candidate_json: *const c_char,
    golden_json: *const c_char,
    out_pass: *mut bool,
) -> CoalStatus {
    guard(|| {
        let candidate: Plan = parse_json(str_arg(candidate_json, "candidate_json")?, "candidate plan")?;
        let golden: Plan = parse_json(str_arg(golden_json, "golden_json")?, "golden plan")?;
        let pass = eval_plan(&candidate, &golden).or_else(|e| fail(CoalStatus::InvalidInput, e))?;
        *out_arg(out_pass, "out_pass")? = pass;
        Ok(())
    })
}

/// Parses planner output text (`1. tool: intent` lines) into plan JSON.
///
/// # Safety
/// See [`coal_rouge_l`]; free `*out_json` with [`coal_string_free`].
#[no_mangle]
pub unsafe extern "C" fn coal_plan_parse(text: *const c_char, out_json: *mut *mut c_char) -> CoalStatus {
    guard(|| {
        let plan = parse_plan(str_arg(text, "text")?).or_else(|e| fail(CoalStatus::InvalidInput, e))?;
        *out_arg(out_json, "out_json")? = owned(serde_json::to_string(&plan).expect("plan serialises"));
        Ok(())
    })
}

/// Loads a catalog file.
///
/// # Safety
/// `path` must be a valid string; free the handle with [`coal_catalog_free`].
#[no_mangle]
pub unsafe extern "C" fn coal_catalog_load(path: *const c_char, out: *mut *mut CoalCatalog) -> CoalStatus {
    guard(|| {
        let catalog = ToolCatalog::load(Path::new(str_arg(path, "path")?)).or_else(|e| fail(CoalStatus::Config, e))?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(CoalCatalog(catalog)));
        Ok(())
    })
}

/// Builds a catalog from JSON text.
///
/// # Safety
/// See [`coal_catalog_load`].
#[no_mangle]
pub unsafe extern "C" fn coal_catalog_from_json(json: *const c_char, out: *mut *mut CoalCatalog) -> CoalStatus {
    guard(|| {
        let catalog = ToolCatalog::from_json_str(str_arg(json, "json")?).or_else(|e| fail(CoalStatus::Config, e))?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(CoalCatalog(catalog)));
        Ok(())
    })
}

/// Number of tools in the catalog; 0 for null.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coal_catalog_tool_count(catalog: *const CoalCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.0.tools().len())
}

/// # Safety
/// `catalog` must be null or a live handle, which becomes invalid.
#[no_mangle]
pub unsafe extern "C" fn coal_catalog_free(catalog: *mut CoalCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Removes and repairs out-of-catalog steps. Writes
/// `{"plan": [...], "removed": [...], "replaced": [...]}`.
///
/// # Safety
/// `catalog` must be a live handle; see also [`coal_plan_parse`].
#[no_mangle]
pub unsafe extern "C" fn coal_plan_sanitize(
    catalog: *const CoalCatalog,
    plan_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CoalStatus {
    guard(|| {
        let Some(catalog) = catalog.as_ref() else {
            return fail(CoalStatus::NullArgument, "catalog is null");
        };
        let plan: Plan = parse_json(str_arg(plan_json, "plan_json")?, "plan")?;
        let (clean, log) = sanitize_plan(&plan, &catalog.0);
        let result = json!({"plan": clean, "removed": log.removed, "replaced": log.replaced});
        *out_arg(out_json, "out_json")? = owned(result.to_string());
        Ok(())
    })
}

fn paths_arg(raw: &str) -> FfiResult<Vec<JsonPath>> {
    let texts: Vec<String> = parse_json(raw, "paths")?;
    texts
        .iter()
        .map(|t| t.parse().or_else(|e| fail(CoalStatus::InvalidInput, e)))
        .collect()
}

/// Minimal sub-document holding the given paths.
///
/// # Safety
/// See [`coal_plan_parse`].
#[no_mangle]
pub unsafe extern "C" fn coal_json_project(
    document_json: *const c_char,
    paths_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CoalStatus {
    guard(|| {
        let doc: Value = parse_json(str_arg(document_json, "document_json")?, "document")?;
        let paths = paths_arg(str_arg(paths_json, "paths_json")?)?;
        let projected = project(&doc, &paths).or_else(|e| fail(CoalStatus::InvalidInput, e))?;
        *out_arg(out_json, "out_json")? = owned(projected.to_string());
        Ok(())
    })
}

/// Projection onto the given paths, then shrunk to at most `budget`
/// serialized characters.
///
/// # Safety
/// See [`coal_plan_parse`].
#[no_mangle]
pub unsafe extern "C" fn coal_json_reduce(
    document_json: *const c_char,
    paths_json: *const c_char,
    budget: usize,
    out_json: *mut *mut c_char,
) -> CoalStatus {
    guard(|| {
        let doc: Value = parse_json(str_arg(document_json, "document_json")?, "document")?;
        let paths = paths_arg(str_arg(paths_json, "paths_json")?)?;
        let reduced = reduce_with_selection(&doc, &paths, budget).or_else(|e| fail(CoalStatus::InvalidInput, e))?;
        *out_arg(out_json, "out_json")? = owned(reduced.to_string());
        Ok(())
    })
}

/// Loads a run configuration file and everything it references.
///
/// # Safety
/// `config_path` must be a valid string; free the handle with
/// [`coal_session_free`].
#[no_mangle]
pub unsafe extern "C" fn coal_session_open(config_path: *const c_char, out: *mut *mut CoalSession) -> CoalStatus {
    guard(|| {
        let loaded = LoadedConfig::load(Path::new(str_arg(config_path, "config_path")?))
            .or_else(|e| fail(CoalStatus::Config, e))?;
        let engine = loaded.engine().or_else(|e| fail(CoalStatus::Config, e))?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(CoalSession { engine }));
        Ok(())
    })
}

/// Answers one query. On success `*out_response` holds the response text.
/// When `out_trace` is non-null it receives the JSON-lines trace, also on
/// [`CoalStatus::Pipeline`] failures.
///
/// # Safety
/// `session` must be a live handle; free returned strings with
/// [`coal_string_free`].
#[no_mangle]
pub unsafe extern "C" fn coal_session_run(
    session: *const CoalSession,
    query: *const c_char,
    out_response: *mut *mut c_char,
    out_trace: *mut *mut c_char,
) -> CoalStatus {
    guard(|| {
        let Some(session) = session.as_ref() else {
            return fail(CoalStatus::NullArgument, "session is null");
        };
        let query = str_arg(query, "query")?;
        let response_slot = out_arg(out_response, "out_response")?;
        *response_slot = ptr::null_mut();
        let record = session.engine.run(query, &CritiqueSource::None);
        if let Some(trace_slot) = out_trace.as_mut() {
            let mut buf = Vec::new();
            record.trace.write_jsonl(&mut buf).expect("writing to memory");
            *trace_slot = owned(String::from_utf8(buf).expect("trace is UTF-8"));
        }
        match (record.response, record.error) {
            (Some(response), None) => {
                *response_slot = owned(response.text);
                Ok(())
            }
            (_, Some(e)) => fail(CoalStatus::Pipeline, e),
            (None, None) => fail(CoalStatus::Pipeline, "run produced no response"),
        }
    })
}

/// # Safety
/// `session` must be null or a live handle, which becomes invalid.
#[no_mangle]
pub unsafe extern "C" fn coal_session_free(session: *mut CoalSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
