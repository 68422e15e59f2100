use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dexi_ffi::*;

fn s(text: &str) -> CString {
    CString::new(text).unwrap()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(p).to_str().unwrap().to_string();
    dexi_string_free(p);
    out
}

unsafe fn last_error() -> String {
    CStr::from_ptr(dexi_last_error()).to_string_lossy().into_owned()
}

unsafe fn cinema_index() -> String {
    let mut corpus = ptr::null_mut();
    assert_eq!(dexi_corpus_bundled(&mut corpus), DexiStatus::Ok);
    let mut report = ptr::null_mut();
    assert_eq!(
        dexi_explore(corpus, s("cinema-10").as_ptr(), s("full").as_ptr(), false, 100, &mut report),
        DexiStatus::Ok
    );
    let mut json = ptr::null_mut();
    assert_eq!(dexi_report_json(report, &mut json), DexiStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
    dexi_report_free(report);
    dexi_corpus_free(corpus);
    v["discovered_deis"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["dei"].as_str().unwrap().to_string())
        .max_by_key(|d| d.len())
        .unwrap()
}

#[test]
fn index_round_trip_and_prefix() {
    unsafe {
        let text = cinema_index();
        let mut idx = ptr::null_mut();
        assert_eq!(dexi_index_decode(s(&text).as_ptr(), &mut idx), DexiStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(dexi_index_encode(idx, &mut out), DexiStatus::Ok);
        assert_eq!(take(out), text);
        let mut len = 0;
        assert_eq!(dexi_index_len(idx, &mut len), DexiStatus::Ok);
        assert_eq!(len, 2);

        let mut last = ptr::null_mut();
        assert_eq!(dexi_index_project(idx, s("no-path-count-stack").as_ptr(), &mut last), DexiStatus::Ok);
        let mut n = 0;
        dexi_index_len(last, &mut n);
        assert_eq!(n, 1);
        let mut is_prefix = true;
        assert_eq!(dexi_index_is_prefix(last, idx, &mut is_prefix), DexiStatus::Ok);
        assert!(!is_prefix);
        assert_eq!(dexi_index_is_prefix(idx, idx, &mut is_prefix), DexiStatus::Ok);
        assert!(is_prefix);

        let mut bad = ptr::null_mut();
        assert_eq!(dexi_index_project(idx, s("nope").as_ptr(), &mut bad), DexiStatus::UnknownConfig);
        assert!(last_error().contains("nope"));
        dexi_index_free(last);
        dexi_index_free(idx);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut idx = ptr::null_mut();
        assert_eq!(dexi_index_decode(ptr::null(), &mut idx), DexiStatus::NullArgument);
        assert_eq!(dexi_index_decode(s("[x").as_ptr(), &mut idx), DexiStatus::Decode);
        assert!(idx.is_null());
        assert!(!last_error().is_empty());

        let mut corpus = ptr::null_mut();
        assert_eq!(dexi_corpus_load(s("/no/such/dir").as_ptr(), &mut corpus), DexiStatus::Corpus);
        assert_eq!(dexi_corpus_bundled(&mut corpus), DexiStatus::Ok);
        let mut name = ptr::null_mut();
        assert_eq!(dexi_corpus_entry_name(corpus, 99, &mut name), DexiStatus::OutOfRange);
        let mut report = ptr::null_mut();
        assert_eq!(
            dexi_explore(corpus, s("missing").as_ptr(), s("full").as_ptr(), false, 10, &mut report),
            DexiStatus::UnknownEntry
        );
        assert_eq!(
            dexi_explore(corpus, s("cinema-3").as_ptr(), s("full").as_ptr(), false, 2, &mut report),
            DexiStatus::BudgetExhausted
        );
        let mut total = 0;
        assert_eq!(dexi_report_total_executed(report, &mut total), DexiStatus::Ok);
        assert_eq!(total, 2);
        dexi_report_free(report);
        dexi_corpus_free(corpus);
        dexi_index_free(ptr::null_mut());
        dexi_string_free(ptr::null_mut());
    }
}

#[test]
fn explores_the_corpus() {
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(
            dexi_corpus_load(s(dexi::corpus::bundled_dir().to_str().unwrap()).as_ptr(), &mut corpus),
            DexiStatus::Ok
        );
        let mut n = 0;
        dexi_corpus_len(corpus, &mut n);
        assert_eq!(n, 9);
        for (name, config, want) in
            [("cinema-3", "full", 7), ("cinema-3", "no-count", 4), ("cinema-9", "no-count-stack", 3)]
        {
            let mut report = ptr::null_mut();
            assert_eq!(
                dexi_explore(corpus, s(name).as_ptr(), s(config).as_ptr(), false, 100, &mut report),
                DexiStatus::Ok
            );
            let (mut total, mut violations) = (0, 1);
            dexi_report_total_executed(report, &mut total);
            dexi_report_violations(report, &mut violations);
            assert_eq!((total, violations), (want, 0), "{name} {config}");
            dexi_report_free(report);
        }
        let mut first = ptr::null_mut();
        assert_eq!(dexi_corpus_entry_name(corpus, 0, &mut first), DexiStatus::Ok);
        assert_eq!(take(first), "cinema-10");
        dexi_corpus_free(corpus);
    }
}

fn include_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = include_dir().join("dexi.h");
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status()
            .expect("C compiler available");
        assert!(status.success(), "{cc} rejected the header");
    }
}

#[test]
fn c_program_links_and_runs() {
    // The static library sits next to the deps directory of this test.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libdexi_ffi.a");
    if !lib.exists() {
        let status = Command::new(env!("CARGO")).args(["build", "-q", "-p", "dexi-ffi", "--lib"]).status().unwrap();
        assert!(status.success());
    }
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/smoke.c"))
        .arg("-I")
        .arg(include_dir())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "entries=9 total=4 violations=0");
}
