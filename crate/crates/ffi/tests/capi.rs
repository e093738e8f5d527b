use std::ffi::{c_char, CStr, CString};
use std::ptr;

use pse_ffi::*;

fn last_error() -> String {
    let n = unsafe { pse_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n.max(1)];
    unsafe { pse_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn scalar_share_matches_closed_form() {
    let mut out = 0.0;
    assert_eq!(unsafe { pse_share_of_engagement(0.6, 0.4, &mut out) }, PseStatus::Ok);
    assert!((out - 0.5).abs() < 1e-12);
    assert_eq!(unsafe { pse_mean_focal_iet(2, 1.0, 0.6, 0.4, &mut out) }, PseStatus::Ok);
    assert!((out - 4.0).abs() < 1e-12);
    assert_eq!(unsafe { pse_focal_iet_log_density(1.5, 2, 1.0, 0.6, 0.4, &mut out) }, PseStatus::Ok);
    assert!(out.is_finite() && out < 0.0);
}

#[test]
fn domain_errors_set_message() {
    let mut out = 0.0;
    assert_eq!(unsafe { pse_share_of_engagement(1.0, 0.4, &mut out) }, PseStatus::Domain);
    assert!(last_error().contains("(0,1)"));
    assert_eq!(unsafe { pse_mean_focal_iet(0, 1.0, 0.5, 0.5, &mut out) }, PseStatus::Domain);
    assert_eq!(unsafe { pse_share_of_engagement(0.5, 0.5, &mut out) }, PseStatus::Ok);
    assert_eq!(unsafe { pse_last_error(ptr::null_mut(), 0) }, 0);
}

#[test]
fn null_arguments_are_rejected() {
    assert_eq!(unsafe { pse_share_of_engagement(0.5, 0.5, ptr::null_mut()) }, PseStatus::NullPointer);
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pse_dataset_load(ptr::null(), ptr::null(), 0, &mut ds) }, PseStatus::NullPointer);
    assert!(ds.is_null());
    assert_eq!(unsafe { pse_dataset_user_count(ptr::null()) }, 0);
    unsafe { pse_dataset_free(ptr::null_mut()) };
    unsafe { pse_fit_free(ptr::null_mut()) };
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { pse_fit(ptr::null(), ptr::null(), PseSampler::Mcmc, 0, &mut fit) }, PseStatus::NullPointer);
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = cstr(&dir.path().join("nope.csv"));
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pse_dataset_load(e.as_ptr(), e.as_ptr(), 0, &mut ds) }, PseStatus::Io);
    assert!(ds.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = pse_core::sim::GeneratorSpec { n_users: 12, seed: 3, ..Default::default() };
    let bundle = pse_core::sim::generate(&spec).unwrap();
    pse_core::io::write_log(dir.path(), &bundle.observed).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[mcmc]\niterations = 300\nburn_in = 100\n").unwrap();

    let (e, f, c) = (cstr(&dir.path().join("events.csv")), cstr(&dir.path().join("features.csv")), cstr(&config));
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pse_dataset_load(e.as_ptr(), f.as_ptr(), 0, &mut ds) }, PseStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { pse_dataset_user_count(ds) }, bundle.observed.users.len());

    let mut fit = ptr::null_mut();
    let status = unsafe { pse_fit(ds, c.as_ptr(), PseSampler::Mcmc, 11, &mut fit) };
    assert_eq!(status, PseStatus::Ok, "{}", last_error());
    let n = unsafe { pse_fit_user_count(fit) };
    assert_eq!(n + unsafe { pse_fit_excluded_count(fit) }, bundle.observed.users.len());

    let mut s = PseUserSummary::default();
    for i in 0..n {
        assert_eq!(unsafe { pse_fit_user(fit, i, &mut s) }, PseStatus::Ok);
        assert!(s.pse_lower <= s.pse_mean && s.pse_mean <= s.pse_upper);
        assert!(s.pse_mean > 0.0 && s.pse_mean < 1.0);
        assert!(s.mean_focal_iet >= s.mean_iet);
    }
    assert_eq!(unsafe { pse_fit_user(fit, n, &mut s) }, PseStatus::OutOfRange);

    let mut needed = 0;
    assert_eq!(unsafe { pse_fit_user_id(fit, 0, ptr::null_mut(), 0, &mut needed) }, PseStatus::Ok);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { pse_fit_user_id(fit, 0, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, PseStatus::Ok);
    let id = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert!(bundle.observed.user(&id).is_some());

    let mut nll = 0.0;
    assert_eq!(unsafe { pse_fit_neg_log_lik(fit, &mut nll) }, PseStatus::Ok);
    assert!(nll.is_finite());

    let out = cstr(&dir.path().join("fit"));
    assert_eq!(unsafe { pse_fit_write(fit, out.as_ptr(), false) }, PseStatus::Ok, "{}", last_error());
    let (_, summary) = pse_core::samplers::read_summary(&dir.path().join("fit")).unwrap();
    assert_eq!(summary.users.len(), n);

    unsafe {
        pse_fit_free(fit);
        pse_dataset_free(ds);
    }
}

#[test]
fn bad_config_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = pse_core::sim::generate(&pse_core::sim::GeneratorSpec { n_users: 4, ..Default::default() }).unwrap();
    pse_core::io::write_log(dir.path(), &bundle.observed).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "iterations = 5\n").unwrap();
    let (e, f, c) = (cstr(&dir.path().join("events.csv")), cstr(&dir.path().join("features.csv")), cstr(&config));
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pse_dataset_load(e.as_ptr(), f.as_ptr(), 0, &mut ds) }, PseStatus::Ok);
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { pse_fit(ds, c.as_ptr(), PseSampler::FromConfig, 0, &mut fit) }, PseStatus::Config);
    assert!(fit.is_null());
    unsafe { pse_dataset_free(ds) };
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pse.h")).unwrap();
    for sym in ["pse_last_error", "pse_dataset_load", "pse_fit", "pse_fit_user", "pse_fit_free", "PSE_STATUS_OK", "typedef struct PseFit PseFit"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(pse_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
