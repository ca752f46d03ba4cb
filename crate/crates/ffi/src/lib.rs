//! C ABI over the kgtune library.
//!
//! Every fallible call returns a status code and writes its result through an
//! out-pointer. On failure the message is available from
//! [`kgt_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::Arc;

use kgtune::backend::llvm::{self, LlvmConfig};
use kgtune::backend::{Backend, Evaluator, LlvmBackend, SyntheticBackend, SyntheticSuite};
use kgtune::evolve::{self, GaConfig};
use kgtune::knowledge::{load_kb, PassKnowledgeBase};
use kgtune::model::{PassId, ProgramUnit};
use kgtune::Error;

pub const KGT_OK: i32 = 0;
pub const KGT_USAGE: i32 = 1;
pub const KGT_BACKEND: i32 = 2;
pub const KGT_DATA: i32 = 3;
pub const KGT_NULL: i32 = 4;
pub const KGT_PANIC: i32 = 5;

/// A loaded knowledge base.
pub struct KgtKb {
    kb: PassKnowledgeBase,
}

/// A backend with its own evaluation cache.
pub struct KgtBackend {
    evaluator: Evaluator,
    suite: Option<SyntheticSuite>,
}

impl KgtBackend {
    fn program(&self, reference: &str) -> kgtune::Result<ProgramUnit> {
        match &self.suite {
            Some(s) => s
                .program(reference)
                .map(|p| p.unit())
                .ok_or_else(|| Error::usage(format!("no program `{reference}` in the suite"))),
            None => llvm::load_ir_file(Path::new(reference)),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

impl From<kgtune::BackendError> for Fail {
    fn from(e: kgtune::BackendError) -> Self {
        Fail::Lib(e.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KGT_OK,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            KGT_NULL
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            e.exit_code()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KGT_PANIC
        }
    }
}

/// # Safety
/// `s` is null or a valid nul-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail::Lib(Error::usage(format!("{what} is not valid UTF-8"))))
}

fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: callers pass a writable pointer or null, checked here.
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

fn parse_sequence(backend: &dyn Backend, text: &str) -> Result<Vec<PassId>, Fail> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|name| {
            backend
                .universe()
                .get(name)
                .cloned()
                .ok_or_else(|| Fail::Lib(Error::usage(format!("unknown pass `{name}`"))))
        })
        .collect()
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next `kgt_*` call on this thread.
#[no_mangle]
pub extern "C" fn kgt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` is null or was returned by a `kgt_*` function and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads and validates a knowledge-base file.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_kb_load(path: *const c_char, out: *mut *mut KgtKb) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let kb = load_kb(Path::new(path))?;
        *out = Box::into_raw(Box::new(KgtKb { kb }));
        Ok(())
    })
}

/// # Safety
/// `kb` is null or came from [`kgt_kb_load`] and was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgt_kb_free(kb: *mut KgtKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Number of program prototypes in the knowledge base.
///
/// # Safety
/// `kb` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_kb_num_prototypes(kb: *const KgtKb, out: *mut usize) -> i32 {
    guard(|| {
        let kb = kb.as_ref().ok_or(Fail::Null("kb"))?;
        *out_arg(out, "out")? = kb.kb.num_prototypes();
        Ok(())
    })
}

/// Opens a synthetic backend from a suite file. Programs are referenced by id.
///
/// # Safety
/// `suite_path` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_backend_synthetic_from_file(suite_path: *const c_char, out: *mut *mut KgtBackend) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let suite = SyntheticSuite::load(Path::new(str_arg(suite_path, "suite_path")?))?;
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::new(&suite)?);
        let evaluator = Evaluator::new(backend, 1)?;
        *out = Box::into_raw(Box::new(KgtBackend {
            evaluator,
            suite: Some(suite),
        }));
        Ok(())
    })
}

/// Opens an LLVM backend with the default pass list. Programs are `.ll` paths.
///
/// `opt_path` may be null to use `$KGTUNE_OPT` or `opt` from `PATH`.
///
/// # Safety
/// `opt_path` is null or a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_backend_llvm_new(opt_path: *const c_char, timeout_secs: u64, out: *mut *mut KgtBackend) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let explicit = if opt_path.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(opt_path, "opt_path")?))
        };
        let config = LlvmConfig {
            opt_path: llvm::resolve_opt(explicit.as_deref()),
            timeout_secs: if timeout_secs == 0 { LlvmConfig::default().timeout_secs } else { timeout_secs },
            ..LlvmConfig::default()
        };
        let backend: Arc<dyn Backend> = Arc::new(LlvmBackend::new(config)?);
        let evaluator = Evaluator::new(backend, 1)?;
        *out = Box::into_raw(Box::new(KgtBackend { evaluator, suite: None }));
        Ok(())
    })
}

/// # Safety
/// `backend` is null or came from a `kgt_backend_*` constructor and was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgt_backend_free(backend: *mut KgtBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

/// Instruction count of `program` after `sequence` (pass names separated by
/// commas or whitespace; empty means no passes).
///
/// # Safety
/// `backend` is a live handle; strings are nul-terminated; `out_count` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_evaluate(
    backend: *const KgtBackend,
    program: *const c_char,
    sequence: *const c_char,
    out_count: *mut u64,
) -> i32 {
    guard(|| {
        let b = backend.as_ref().ok_or(Fail::Null("backend"))?;
        let out = out_arg(out_count, "out_count")?;
        let unit = b.program(str_arg(program, "program")?)?;
        let seq = parse_sequence(b.evaluator.backend(), str_arg(sequence, "sequence")?)?;
        *out = b.evaluator.evaluate(&unit, &seq)?;
        Ok(())
    })
}

/// Baseline instruction count of `program`.
///
/// # Safety
/// `backend` is a live handle; `program` is nul-terminated; `out_count` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_baseline(backend: *const KgtBackend, program: *const c_char, out_count: *mut u64) -> i32 {
    guard(|| {
        let b = backend.as_ref().ok_or(Fail::Null("backend"))?;
        let out = out_arg(out_count, "out_count")?;
        let unit = b.program(str_arg(program, "program")?)?;
        *out = b.evaluator.baseline(&unit)?;
        Ok(())
    })
}

/// Tunes `program` and returns the JSON report in `out_report`; free it with [`kgt_string_free`].
///
/// `ga_config_json` may be null for defaults; missing fields take defaults.
///
/// # Safety
/// Handles are live; strings are null (where allowed) or nul-terminated; `out_report` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_tune(
    backend: *const KgtBackend,
    kb: *const KgtKb,
    program: *const c_char,
    ga_config_json: *const c_char,
    out_report: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let b = backend.as_ref().ok_or(Fail::Null("backend"))?;
        let kb = kb.as_ref().ok_or(Fail::Null("kb"))?;
        let out = out_arg(out_report, "out_report")?;
        let config: GaConfig = if ga_config_json.is_null() {
            GaConfig::default()
        } else {
            serde_json::from_str(str_arg(ga_config_json, "ga_config_json")?)
                .map_err(|e| Error::usage(format!("GA config: {e}")))?
        };
        let unit = b.program(str_arg(program, "program")?)?;
        let report = evolve::tune(&unit, &kb.kb, &b.evaluator, &config)?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        *out = CString::new(json).expect("json has no nul").into_raw();
        Ok(())
    })
}

/// Percent reduction of `count` relative to `baseline`.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kgt_fitness(baseline: u64, count: u64, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = evolve::fitness(baseline, count)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitness_and_errors() {
        let mut v = 0.0;
        assert_eq!(unsafe { kgt_fitness(200, 178, &mut v) }, KGT_OK);
        assert!((v - 11.0).abs() < 1e-12);
        assert!(kgt_last_error_message().is_null());
        assert_eq!(unsafe { kgt_fitness(0, 1, &mut v) }, KGT_DATA);
        let msg = unsafe { CStr::from_ptr(kgt_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("degenerate baseline"));
        assert_eq!(unsafe { kgt_fitness(1, 1, ptr::null_mut()) }, KGT_NULL);
    }

    #[test]
    fn null_handles() {
        let mut out = 0u64;
        let prog = CString::new("x").unwrap();
        assert_eq!(
            unsafe { kgt_evaluate(ptr::null(), prog.as_ptr(), prog.as_ptr(), &mut out) },
            KGT_NULL
        );
        let mut kb = ptr::null_mut();
        assert_eq!(unsafe { kgt_kb_load(ptr::null(), &mut kb) }, KGT_NULL);
        unsafe {
            kgt_kb_free(ptr::null_mut());
            kgt_backend_free(ptr::null_mut());
            kgt_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        let path = CString::new("/nonexistent/kb.json").unwrap();
        let mut kb = ptr::null_mut();
        assert_eq!(unsafe { kgt_kb_load(path.as_ptr(), &mut kb) }, KGT_DATA);
        assert!(kb.is_null());
    }
}
