//! C interface to the stepwise engine.
//!
//! Handles are opaque pointers created by `sra_*_new` and released by the
//! matching `sra_*_free`. Every fallible call returns an [`SraStatus`];
//! on failure, [`sra_last_error`] describes the most recent error on the
//! calling thread. Strings returned through `char **` out-parameters are
//! owned by the caller and must be released with [`sra_string_free`].
//!
//! Protocol requests go through [`sra_session_request`], which takes one
//! request line and returns every output line (events, then the
//! response) joined by `\n`. A session may be used from several threads:
//! while one thread is inside a generating request, `cancel` and
//! `get_status` requests from other threads are answered immediately and
//! any other request gets a `busy` response.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, TryLockError};

use serde_json::json;
use stepwise::protocol::{codes, parse_request, Connection, Op, Response};
use stepwise::session::{Engine, EngineConfig, SessionControl};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SraStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The engine configuration could not be parsed or applied.
    ConfigError = 3,
    /// Knowledge-base load or search failed.
    KbError = 4,
    /// An argument was out of range or malformed.
    InvalidArgument = 5,
    /// The engine panicked; the handle may still be used.
    Panic = 6,
}

/// Shared engine: configuration, providers and knowledge base.
pub struct SraEngine {
    engine: Arc<Engine>,
}

/// One protocol session.
pub struct SraSession {
    conn: Mutex<Connection>,
    control: SessionControl,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg.into()));
}

fn fail(status: SraStatus, msg: impl Into<String>) -> SraStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into [`SraStatus::Panic`].
fn guard(f: impl FnOnce() -> SraStatus) -> SraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SraStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, SraStatus> {
    if p.is_null() {
        return Err(fail(SraStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SraStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn into_c(s: String) -> *mut c_char {
    // interior NULs cannot come from serde_json output; strip defensively
    CString::new(s.replace('\0', ""))
        .expect("NULs removed")
        .into_raw()
}

/// Creates an engine from a JSON config (the same fields as the TOML
/// config file). Pass null or `"{}"` for defaults: mock provider, test
/// embedder, no knowledge base. Relative paths are resolved against the
/// current directory.
///
/// # Safety
/// `config_json` must be null or a valid C string; `out` must be a valid
/// pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sra_engine_new(config_json: *const c_char, out: *mut *mut SraEngine) -> SraStatus {
    guard(|| {
        if out.is_null() {
            return fail(SraStatus::NullArgument, "out is null");
        }
        *out = std::ptr::null_mut();
        let cfg = if config_json.is_null() {
            EngineConfig::default()
        } else {
            let text = match read_str(config_json, "config_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match EngineConfig::from_json_str(text) {
                Ok(c) => c,
                Err(e) => return fail(SraStatus::ConfigError, e.to_string()),
            }
        };
        match Engine::from_config(cfg) {
            Ok(engine) => {
                *out = Box::into_raw(Box::new(SraEngine {
                    engine: Arc::new(engine),
                }));
                SraStatus::Ok
            }
            Err(e) => {
                let status = match e {
                    stepwise::session::EngineError::Kb(_) => SraStatus::KbError,
                    _ => SraStatus::ConfigError,
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// Releases an engine. Sessions created from it stay valid.
///
/// # Safety
/// `engine` must be null or a handle from [`sra_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sra_engine_free(engine: *mut SraEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Opens a new session on `engine`. `session_id` names the session in
/// event messages; null gives `"ffi"`.
///
/// # Safety
/// `engine` must be a live engine handle; `session_id` null or a valid C
/// string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sra_session_new(
    engine: *const SraEngine,
    session_id: *const c_char,
    out: *mut *mut SraSession,
) -> SraStatus {
    guard(|| {
        if engine.is_null() || out.is_null() {
            return fail(SraStatus::NullArgument, "engine or out is null");
        }
        *out = std::ptr::null_mut();
        let id = if session_id.is_null() {
            "ffi"
        } else {
            match read_str(session_id, "session_id") {
                Ok(s) => s,
                Err(s) => return s,
            }
        };
        let session = (*engine).engine.new_session(id);
        let control = session.control();
        *out = Box::into_raw(Box::new(SraSession {
            conn: Mutex::new(Connection::new(session)),
            control,
        }));
        SraStatus::Ok
    })
}

/// # Safety
/// `session` must be null or a handle from [`sra_session_new`] not yet
/// freed, with no call on it in progress.
#[no_mangle]
pub unsafe extern "C" fn sra_session_free(session: *mut SraSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Handles one protocol request line. On [`SraStatus::Ok`], `*out_lines`
/// receives all output lines joined by `\n` (possibly empty for a blank
/// input line). Protocol-level failures such as malformed JSON are
/// reported inside the response line, not through the status.
///
/// # Safety
/// `session` must be a live session handle; `line` a valid C string;
/// `out_lines` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sra_session_request(
    session: *const SraSession,
    line: *const c_char,
    out_lines: *mut *mut c_char,
) -> SraStatus {
    guard(|| {
        if session.is_null() || out_lines.is_null() {
            return fail(SraStatus::NullArgument, "session or out_lines is null");
        }
        *out_lines = std::ptr::null_mut();
        let line = match read_str(line, "line") {
            Ok(l) => l,
            Err(s) => return s,
        };
        let s = &*session;
        let lines: Vec<String> = match parse_request(line) {
            Ok(None) => Vec::new(),
            Err(resp) => vec![resp.to_line()],
            Ok(Some(req)) if req.op == Op::Cancel => {
                vec![Response::ok(req.id, Op::Cancel, json!({ "cancelled": s.control.cancel() })).to_line()]
            }
            Ok(Some(req)) if req.op == Op::GetStatus => vec![Response::ok(
                req.id,
                Op::GetStatus,
                serde_json::to_value(s.control.status()).expect("status serializes"),
            )
            .to_line()],
            Ok(Some(req)) => match s.conn.try_lock() {
                Ok(mut conn) => {
                    let mut out = Vec::new();
                    conn.handle_request(req, &mut |l| out.push(l));
                    out
                }
                Err(TryLockError::Poisoned(p)) => {
                    let mut conn = p.into_inner();
                    let mut out = Vec::new();
                    conn.handle_request(req, &mut |l| out.push(l));
                    out
                }
                Err(TryLockError::WouldBlock) => vec![Response::err(
                    req.id,
                    Some(req.op.as_str()),
                    codes::BUSY,
                    "a response is already being generated",
                )
                .to_line()],
            },
        };
        *out_lines = into_c(lines.join("\n"));
        SraStatus::Ok
    })
}

/// Cancels the session's in-flight generation, if any. Safe to call from
/// any thread. `*out_cancelled` (if not null) is set to 1 when a
/// generation was cancelled.
///
/// # Safety
/// `session` must be a live session handle; `out_cancelled` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sra_session_cancel(session: *const SraSession, out_cancelled: *mut u8) -> SraStatus {
    guard(|| {
        if session.is_null() {
            return fail(SraStatus::NullArgument, "session is null");
        }
        let c = (*session).control.cancel();
        if !out_cancelled.is_null() {
            *out_cancelled = c as u8;
        }
        SraStatus::Ok
    })
}

/// Searches the engine's knowledge base. `*out_json` receives a JSON
/// array of `{chunk_id, score, best_variant_id, title, content}` in rank
/// order.
///
/// # Safety
/// `engine` must be a live engine handle; `query` a valid C string;
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sra_engine_search(
    engine: *const SraEngine,
    query: *const c_char,
    k: usize,
    use_hyde: bool,
    out_json: *mut *mut c_char,
) -> SraStatus {
    guard(|| {
        if engine.is_null() || out_json.is_null() {
            return fail(SraStatus::NullArgument, "engine or out_json is null");
        }
        *out_json = std::ptr::null_mut();
        let query = match read_str(query, "query") {
            Ok(q) => q,
            Err(s) => return s,
        };
        if k == 0 {
            return fail(SraStatus::InvalidArgument, "k must be at least 1");
        }
        let e = &(*engine).engine;
        let hits = match e.search(query, k, use_hyde) {
            Ok(h) => h,
            Err(err) => return fail(SraStatus::KbError, err.to_string()),
        };
        let kb = e.kb().expect("search succeeded, so a knowledge base is loaded");
        let rows: Vec<_> = hits
            .iter()
            .map(|h| {
                let c = kb.chunk(h.chunk_id);
                json!({
                    "chunk_id": h.chunk_id,
                    "score": h.score,
                    "best_variant_id": h.best_variant_id,
                    "title": c.map(|c| c.title()),
                    "content": c.map(|c| c.content.clone()),
                })
            })
            .collect();
        *out_json = into_c(serde_json::Value::Array(rows).to_string());
        SraStatus::Ok
    })
}

/// Message for the last failed call on this thread, or null. The caller
/// owns the returned string.
#[no_mangle]
pub extern "C" fn sra_last_error() -> *mut c_char {
    LAST_ERROR
        .with(|e| e.borrow().clone())
        .map(into_c)
        .unwrap_or(std::ptr::null_mut())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sra_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn sra_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
