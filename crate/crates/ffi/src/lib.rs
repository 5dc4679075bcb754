//! C interface to the sweepherd workbench.
//!
//! Every fallible call returns a [`SweepherdStatus`]; on failure the message
//! is available from [`sweepherd_last_error`] on the same thread. Strings
//! handed out by the library are NUL-terminated UTF-8 and must be released
//! with [`sweepherd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sweepherd::experiment::{
    fork_indices, parse_descriptor, resolve_unit, serialize_descriptor, unit_id, unit_seed, DescriptorError, ExperimentDescriptor, ExperimentalUnit,
};
use sweepherd::reports::{emit_plot, emit_table, load_experiment, run_query, PlotStyle, ReportQuery};
use sweepherd::runner::{run_local, CancelRegistry, ProgressReport};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepherdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidDescriptor = 3,
    OutOfRange = 4,
    Io = 5,
    BadQuery = 6,
    RunFailed = 7,
    Panic = 8,
}

/// A parsed experiment descriptor.
pub struct SweepherdDescriptor {
    inner: ExperimentDescriptor,
}

/// Cancellation flags shared with a running [`sweepherd_run_local`].
pub struct SweepherdCancel {
    inner: CancelRegistry,
}

/// Receives one progress report as a JSON object. May be called from
/// several threads at once.
pub type SweepherdProgressFn = Option<unsafe extern "C" fn(report_json: *const c_char, user_data: *mut c_void)>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SweepherdStatus, String);

impl From<DescriptorError> for Failure {
    fn from(e: DescriptorError) -> Self {
        let detail = serde_json::to_string(&e.violations()).unwrap_or_default();
        Failure(SweepherdStatus::InvalidDescriptor, format!("{e}; violations: {detail}"))
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SweepherdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SweepherdStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            SweepherdStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SweepherdStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(SweepherdStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(SweepherdStatus::NullArgument, format!("{what} is NULL")))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SweepherdStatus::NullArgument, format!("{what} is NULL")));
    }
    out.write(v);
    Ok(())
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NULs replaced").into_raw()
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn sweepherd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn sweepherd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// JSON schema of every environment and agent class.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_schema_json(out: *mut *mut c_char) -> SweepherdStatus {
    guard(|| put(out, owned(sweepherd::schema::schema_json()), "out"))
}

/// Parses and validates a descriptor. On `InvalidDescriptor` the last error
/// includes the violations as a JSON array.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_descriptor_parse(json: *const c_char, out: *mut *mut SweepherdDescriptor) -> SweepherdStatus {
    guard(|| {
        let d = parse_descriptor(text(json, "json")?)?;
        put(out, Box::into_raw(Box::new(SweepherdDescriptor { inner: d })), "out")
    })
}

/// # Safety
/// `d` must come from [`sweepherd_descriptor_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_descriptor_free(d: *mut SweepherdDescriptor) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Canonical JSON form of the descriptor.
///
/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_descriptor_to_json(d: *const SweepherdDescriptor, out: *mut *mut c_char) -> SweepherdStatus {
    guard(|| put(out, owned(serialize_descriptor(&handle(d, "descriptor")?.inner)), "out"))
}

/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_descriptor_unit_count(d: *const SweepherdDescriptor, out: *mut u64) -> SweepherdStatus {
    guard(|| {
        let n = handle(d, "descriptor")?.inner.unit_count();
        put(out, u64::try_from(n).unwrap_or(u64::MAX), "out")
    })
}

/// Unit `index` as JSON: `unit_id`, `index`, `seed`, `assignments` and the
/// fully `resolved` descriptor.
///
/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_descriptor_unit(d: *const SweepherdDescriptor, index: u64, out: *mut *mut c_char) -> SweepherdStatus {
    guard(|| {
        let d = &handle(d, "descriptor")?.inner;
        if u128::from(index) >= d.unit_count() {
            return Err(Failure(SweepherdStatus::OutOfRange, format!("unit {index} of {}", d.unit_count())));
        }
        let assignments = fork_indices(d, index).into_iter().zip(&d.forks).map(|(i, f)| (f.path.clone(), f.values[i].clone())).collect();
        let unit = ExperimentalUnit {
            unit_id: unit_id(&d.name, index),
            index,
            resolved: resolve_unit(d, &assignments)?,
            assignments,
            seed: unit_seed(d.run.seed, index),
        };
        let json = serde_json::to_string(&unit).map_err(|e| Failure(SweepherdStatus::Panic, e.to_string()))?;
        put(out, owned(json), "out")
    })
}

#[no_mangle]
pub extern "C" fn sweepherd_cancel_new() -> *mut SweepherdCancel {
    Box::into_raw(Box::new(SweepherdCancel { inner: CancelRegistry::new() }))
}

/// # Safety
/// `c` must come from [`sweepherd_cancel_new`], not have been freed, and no
/// run may still be using it.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_cancel_free(c: *mut SweepherdCancel) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Cancels every unit. Safe to call from any thread while a run is active.
///
/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_cancel_all(c: *const SweepherdCancel) -> SweepherdStatus {
    guard(|| {
        handle(c, "cancel")?.inner.cancel_all();
        Ok(())
    })
}

/// # Safety
/// `c` must be a live handle and `unit_id` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_cancel_unit(c: *const SweepherdCancel, unit_id: *const c_char) -> SweepherdStatus {
    guard(|| {
        let id = text(unit_id, "unit_id")?;
        handle(c, "cancel")?.inner.cancel_unit(id);
        Ok(())
    })
}

struct Callback {
    f: SweepherdProgressFn,
    user: *mut c_void,
}

// The caller promises the callback and its user data tolerate concurrent calls.
unsafe impl Sync for Callback {}

impl Callback {
    fn call(&self, r: &ProgressReport) {
        let Some(f) = self.f else { return };
        let Ok(json) = serde_json::to_string(r).map(|s| CString::new(s).expect("JSON has no NUL")) else { return };
        unsafe { f(json.as_ptr(), self.user) };
    }
}

/// Runs every unit of `d` under `root` with `jobs` worker threads and blocks
/// until all are final. `progress` and `cancel` may be NULL. On success
/// `statuses_json` (if not NULL) receives a JSON object mapping unit ids to
/// final statuses.
///
/// # Safety
/// `d` must be a live handle, `root` a NUL-terminated string, `cancel` NULL or
/// a live handle, and `progress` safe to call concurrently with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_run_local(
    d: *const SweepherdDescriptor,
    root: *const c_char,
    jobs: u32,
    progress: SweepherdProgressFn,
    user_data: *mut c_void,
    cancel: *const SweepherdCancel,
    statuses_json: *mut *mut c_char,
) -> SweepherdStatus {
    guard(|| {
        let d = &handle(d, "descriptor")?.inner;
        let root = Path::new(text(root, "root")?);
        let fallback = CancelRegistry::new();
        let cancel = cancel.as_ref().map_or(&fallback, |c| &c.inner);
        let cb = Callback { f: progress, user: user_data };
        let statuses = run_local(d, root, jobs.max(1) as usize, &|r| cb.call(r), cancel)
            .map_err(|e| Failure(SweepherdStatus::RunFailed, format!("{e:#}")))?;
        if !statuses_json.is_null() {
            let json = serde_json::to_string(&statuses).map_err(|e| Failure(SweepherdStatus::Panic, e.to_string()))?;
            statuses_json.write(owned(json));
        }
        Ok(())
    })
}

/// Aggregates the logs in `experiment_dir` according to `query_json` and
/// writes an SVG plot to `svg_path` and, if `csv_path` is not NULL, a CSV
/// table. `title` may be NULL.
///
/// # Safety
/// All non-NULL pointers must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sweepherd_report(
    experiment_dir: *const c_char,
    query_json: *const c_char,
    title: *const c_char,
    svg_path: *const c_char,
    csv_path: *const c_char,
) -> SweepherdStatus {
    guard(|| {
        let dir = Path::new(text(experiment_dir, "experiment_dir")?);
        let query: ReportQuery =
            serde_json::from_str(text(query_json, "query_json")?).map_err(|e| Failure(SweepherdStatus::BadQuery, e.to_string()))?;
        let svg = Path::new(text(svg_path, "svg_path")?);
        let csv = if csv_path.is_null() { None } else { Some(Path::new(text(csv_path, "csv_path")?)) };
        let title = if title.is_null() { String::new() } else { text(title, "title")?.to_string() };

        let bad = |e: sweepherd::reports::ReportError| Failure(SweepherdStatus::BadQuery, e.to_string());
        let results = load_experiment(dir).map_err(|e| Failure(SweepherdStatus::Io, e.to_string()))?;
        let series = run_query(&results, &query).map_err(bad)?;
        let style = PlotStyle { title, group_by: query.group_by.clone(), ..PlotStyle::default() };
        emit_plot(&series, &style, svg).map_err(bad)?;
        if let Some(csv) = csv {
            emit_table(&series, csv).map_err(bad)?;
        }
        Ok(())
    })
}
