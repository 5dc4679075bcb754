use std::ffi::{c_char, c_void, CStr, CString};
use std::ptr;
use std::sync::atomic::{AtomicUsize, Ordering};

use sweepherd_ffi::*;

const DESCRIPTOR: &str = r#"{"name": "ffi", "environment": {"class": "mountain-car"},
    "agent": {"class": "q-learning", "alpha": {"$fork": [0.1, 0.5]}, "gamma": {"$fork": [0.9, 0.99]}},
    "run": {"num_episodes": 4, "eval_every": 2, "episode_max_steps": 100, "seed": 3}}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    sweepherd_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = sweepherd_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

unsafe fn parse(text: &str) -> *mut SweepherdDescriptor {
    let mut d = ptr::null_mut();
    assert_eq!(sweepherd_descriptor_parse(c(text).as_ptr(), &mut d), SweepherdStatus::Ok);
    d
}

#[test]
fn version_and_schema() {
    unsafe {
        assert_eq!(CStr::from_ptr(sweepherd_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
        let mut out = ptr::null_mut();
        assert_eq!(sweepherd_schema_json(&mut out), SweepherdStatus::Ok);
        let schema = take(out);
        assert!(schema.contains("mountain-car"));
        assert!(sweepherd_last_error().is_null());
    }
}

#[test]
fn parse_expand_and_free() {
    unsafe {
        let d = parse(DESCRIPTOR);
        let mut n = 0u64;
        assert_eq!(sweepherd_descriptor_unit_count(d, &mut n), SweepherdStatus::Ok);
        assert_eq!(n, 4);

        let mut out = ptr::null_mut();
        assert_eq!(sweepherd_descriptor_unit(d, 1, &mut out), SweepherdStatus::Ok);
        let unit = take(out);
        assert!(unit.contains(r#""unit_id":"ffi/000001""#), "{unit}");

        assert_eq!(sweepherd_descriptor_unit(d, 4, &mut out), SweepherdStatus::OutOfRange);
        assert!(last_error().contains("unit 4"));

        assert_eq!(sweepherd_descriptor_to_json(d, &mut out), SweepherdStatus::Ok);
        let text = take(out);
        let again = parse(&text);
        assert_eq!(sweepherd_descriptor_to_json(again, &mut out), SweepherdStatus::Ok);
        assert_eq!(take(out), text);
        sweepherd_descriptor_free(again);
        sweepherd_descriptor_free(d);
        sweepherd_descriptor_free(ptr::null_mut());
    }
}

#[test]
fn errors_have_codes_and_messages() {
    unsafe {
        let mut d = ptr::null_mut();
        let bad = c(r#"{"name": "x", "environment": {"class": "nope"}, "agent": {"class": "q-learning"}}"#);
        assert_eq!(sweepherd_descriptor_parse(bad.as_ptr(), &mut d), SweepherdStatus::InvalidDescriptor);
        assert!(d.is_null());
        assert!(last_error().contains("violations"));

        assert_eq!(sweepherd_descriptor_parse(ptr::null(), &mut d), SweepherdStatus::NullArgument);
        let invalid = [0xffu8, 0];
        assert_eq!(sweepherd_descriptor_parse(invalid.as_ptr().cast(), &mut d), SweepherdStatus::InvalidUtf8);
        assert_eq!(sweepherd_descriptor_unit_count(ptr::null(), ptr::null_mut()), SweepherdStatus::NullArgument);
        assert_eq!(sweepherd_cancel_all(ptr::null()), SweepherdStatus::NullArgument);
    }
}

unsafe extern "C" fn count_reports(json: *const c_char, user: *mut c_void) {
    let s = CStr::from_ptr(json).to_str().unwrap();
    assert!(s.contains("unit_id"));
    (*(user as *const AtomicUsize)).fetch_add(1, Ordering::SeqCst);
}

#[test]
fn run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let d = parse(DESCRIPTOR);
        let root = c(dir.path().to_str().unwrap());
        let counter = AtomicUsize::new(0);
        let mut statuses = ptr::null_mut();
        let rc = sweepherd_run_local(d, root.as_ptr(), 2, Some(count_reports), &counter as *const _ as *mut c_void, ptr::null(), &mut statuses);
        assert_eq!(rc, SweepherdStatus::Ok, "{}", last_error());
        let statuses = take(statuses);
        assert_eq!(statuses.matches(r#""state":"finished""#).count(), 4, "{statuses}");
        assert!(counter.load(Ordering::SeqCst) >= 4);

        let exp = c(dir.path().join("ffi").to_str().unwrap());
        let query = c(r#"{"variables": ["reward"], "group_by": "agent/alpha", "episode_kind": "train", "resample_points": 5}"#);
        let svg = dir.path().join("r.svg");
        let csv = dir.path().join("r.csv");
        let (svg_c, csv_c) = (c(svg.to_str().unwrap()), c(csv.to_str().unwrap()));
        let rc = sweepherd_report(exp.as_ptr(), query.as_ptr(), c("ffi").as_ptr(), svg_c.as_ptr(), csv_c.as_ptr());
        assert_eq!(rc, SweepherdStatus::Ok, "{}", last_error());
        let first = std::fs::read(&svg).unwrap();
        assert!(first.starts_with(b"<svg"));
        assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 5);
        assert_eq!(sweepherd_report(exp.as_ptr(), query.as_ptr(), c("ffi").as_ptr(), svg_c.as_ptr(), ptr::null()), SweepherdStatus::Ok);
        assert_eq!(std::fs::read(&svg).unwrap(), first);

        let bad = c(r#"{"variables": ["nope"]}"#);
        assert_ne!(sweepherd_report(exp.as_ptr(), bad.as_ptr(), ptr::null(), svg_c.as_ptr(), ptr::null()), SweepherdStatus::Ok);
        sweepherd_descriptor_free(d);
    }
}

#[test]
fn cancelled_run_ends_cancelled() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let d = parse(&DESCRIPTOR.replace(r#""num_episodes": 4"#, r#""num_episodes": 100000"#));
        let cancel = sweepherd_cancel_new();
        assert_eq!(sweepherd_cancel_unit(cancel, c("ffi/000002").as_ptr()), SweepherdStatus::Ok);
        assert_eq!(sweepherd_cancel_all(cancel), SweepherdStatus::Ok);
        let root = c(dir.path().to_str().unwrap());
        let mut statuses = ptr::null_mut();
        let rc = sweepherd_run_local(d, root.as_ptr(), 4, None, ptr::null_mut(), cancel, &mut statuses);
        assert_eq!(rc, SweepherdStatus::Ok);
        assert_eq!(take(statuses).matches(r#""state":"cancelled""#).count(), 4);
        sweepherd_cancel_free(cancel);
        sweepherd_descriptor_free(d);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/sweepherd.h");
    for lang in ["c", "c++"] {
        let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header]).output() else {
            eprintln!("no C compiler; skipped");
            return;
        };
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
