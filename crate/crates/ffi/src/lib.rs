//! C ABI over the index codec and the fault-space search.
//!
//! Every function returns a [`DexiStatus`]; results come back through out
//! pointers. Objects are opaque and owned by the caller once returned, and
//! must be released with the matching `*_free`. On failure,
//! [`dexi_last_error`] describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use dexi::corpus::{self, Corpus};
use dexi::index::{decode, encode, Dei, InstantiationConfig};
use dexi::search::{completeness_check, explore_shared, SearchError, SearchOptions, SearchReport};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DexiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Decode = 3,
    UnknownConfig = 4,
    Corpus = 5,
    UnknownEntry = 6,
    Search = 7,
    BudgetExhausted = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// A distributed execution index.
pub struct DexiIndex(Dei);

/// A loaded corpus of applications.
pub struct DexiCorpus(Corpus);

/// Result of one exploration.
pub struct DexiReport {
    report: SearchReport,
    violations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(DexiStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DexiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DexiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DexiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(DexiStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(DexiStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(DexiStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(DexiStatus::NullArgument, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn config(s: &str) -> Result<InstantiationConfig, Fail> {
    s.parse().map_err(|e: dexi::index::IndexError| Fail(DexiStatus::UnknownConfig, e.to_string()))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn dexi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dexi_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses the wire form of an index.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_index_decode(text: *const c_char, out: *mut *mut DexiIndex) -> DexiStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let dei = decode(text).map_err(|e| Fail(DexiStatus::Decode, e.to_string()))?;
        put(out, Box::into_raw(Box::new(DexiIndex(dei))))
    })
}

/// Wire form of `index`; free with `dexi_string_free`.
///
/// # Safety
/// `index` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_index_encode(index: *const DexiIndex, out: *mut *mut c_char) -> DexiStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        put(out, c_string(encode(&index.0)))
    })
}

/// Number of entries in `index`.
///
/// # Safety
/// `index` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_index_len(index: *const DexiIndex, out: *mut usize) -> DexiStatus {
    guard(|| put(out, ref_arg(index, "index")?.0.len()))
}

/// Whether `prefix` is a (not necessarily strict) prefix of `index`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_index_is_prefix(
    prefix: *const DexiIndex,
    index: *const DexiIndex,
    out: *mut bool,
) -> DexiStatus {
    guard(|| {
        let (p, i) = (ref_arg(prefix, "prefix")?, ref_arg(index, "index")?);
        put(out, p.0.is_prefix_of(&i.0))
    })
}

/// Projects `index` under a config label such as `no-count`.
///
/// # Safety
/// `index` must be live, `config_label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_index_project(
    index: *const DexiIndex,
    config_label: *const c_char,
    out: *mut *mut DexiIndex,
) -> DexiStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let c = config(str_arg(config_label, "config")?)?;
        put(out, Box::into_raw(Box::new(DexiIndex(c.project(&index.0)))))
    })
}

/// # Safety
/// `index` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dexi_index_free(index: *mut DexiIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// The corpus compiled into the library.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_corpus_bundled(out: *mut *mut DexiCorpus) -> DexiStatus {
    guard(|| {
        let c = corpus::bundled().map_err(|e| Fail(DexiStatus::Corpus, e.to_string()))?;
        put(out, Box::into_raw(Box::new(DexiCorpus(c))))
    })
}

/// Loads a corpus directory or a single entry file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_corpus_load(path: *const c_char, out: *mut *mut DexiCorpus) -> DexiStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let c = corpus::load_corpus(Path::new(path)).map_err(|e| Fail(DexiStatus::Corpus, e.to_string()))?;
        put(out, Box::into_raw(Box::new(DexiCorpus(c))))
    })
}

/// # Safety
/// `corpus` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_corpus_len(corpus: *const DexiCorpus, out: *mut usize) -> DexiStatus {
    guard(|| put(out, ref_arg(corpus, "corpus")?.0.len()))
}

/// Name of entry `i`; free with `dexi_string_free`.
///
/// # Safety
/// `corpus` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_corpus_entry_name(
    corpus: *const DexiCorpus,
    i: usize,
    out: *mut *mut c_char,
) -> DexiStatus {
    guard(|| {
        let c = ref_arg(corpus, "corpus")?;
        let e = c.0.entries().get(i).ok_or_else(|| Fail(DexiStatus::OutOfRange, format!("no entry {i}")))?;
        put(out, c_string(e.name.clone()))
    })
}

/// # Safety
/// `corpus` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dexi_corpus_free(corpus: *mut DexiCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Explores entry `name` under `config_label` with the virtual scheduler
/// and seed 0. When the execution budget runs out the status is
/// `DEXI_STATUS_BUDGET_EXHAUSTED` and `out` still receives the partial
/// report.
///
/// # Safety
/// `corpus` must be live, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_explore(
    corpus: *const DexiCorpus,
    name: *const c_char,
    config_label: *const c_char,
    reduction: bool,
    budget: usize,
    out: *mut *mut DexiReport,
) -> DexiStatus {
    guard(|| {
        let c = ref_arg(corpus, "corpus")?;
        let name = str_arg(name, "name")?;
        let config = config(str_arg(config_label, "config")?)?;
        if out.is_null() {
            return Err(Fail(DexiStatus::NullArgument, "output pointer is null".into()));
        }
        let e = c.0.get(name).ok_or_else(|| Fail(DexiStatus::UnknownEntry, format!("unknown entry `{name}`")))?;
        let mut opts = SearchOptions::default().with_config(config).with_reduction(reduction);
        opts.budget = budget;
        opts.label = name.to_string();
        let wrap = |report: SearchReport| {
            let violations = completeness_check(&report, &e.catalog, None).len();
            Box::into_raw(Box::new(DexiReport { report, violations }))
        };
        match explore_shared(&Arc::new(e.app.clone()), &e.entry, &e.catalog, &opts) {
            Ok(r) => put(out, wrap(r)),
            Err(SearchError::BudgetExhausted { budget, partial, .. }) => {
                put(out, wrap(*partial))?;
                Err(Fail(DexiStatus::BudgetExhausted, format!("execution budget of {budget} exhausted")))
            }
            Err(err) => Err(Fail(DexiStatus::Search, err.to_string())),
        }
    })
}

/// # Safety
/// `report` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_report_total_executed(report: *const DexiReport, out: *mut usize) -> DexiStatus {
    guard(|| put(out, ref_arg(report, "report")?.report.total_executed))
}

/// Number of completeness violations found in the report.
///
/// # Safety
/// `report` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_report_violations(report: *const DexiReport, out: *mut usize) -> DexiStatus {
    guard(|| put(out, ref_arg(report, "report")?.violations))
}

/// The report as JSON; free with `dexi_string_free`.
///
/// # Safety
/// `report` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dexi_report_json(report: *const DexiReport, out: *mut *mut c_char) -> DexiStatus {
    guard(|| put(out, c_string(ref_arg(report, "report")?.report.to_json())))
}

/// # Safety
/// `report` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dexi_report_free(report: *mut DexiReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
