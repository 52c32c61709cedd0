use nlcf_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nlcf_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn kernel_and_ball_curvature() {
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(nlcf_kernel_from_json(c(r#"{"type":"fractional","s":0.5}"#).as_ptr(), &mut k), NlcfStatus::Ok);
        let mut v = 0.0;
        assert_eq!(nlcf_ball_curvature(k, 1.0, &mut v), NlcfStatus::Ok);
        assert!((v - 14.83259741841098).abs() < 1e-3 * 14.83259741841098);
        assert_eq!(nlcf_psi(k, 1.0, &mut v), NlcfStatus::Ok);
        assert!((v - 0.04925201224964966).abs() < 1e-6);
        assert_eq!(nlcf_ball_curvature(k, -1.0, &mut v), NlcfStatus::Parameter);
        nlcf_kernel_free(k);
    }
}

#[test]
fn errors_are_reported() {
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(nlcf_kernel_from_json(c("{").as_ptr(), &mut k), NlcfStatus::Parse);
        assert!(!last_error().is_empty());
        assert_eq!(nlcf_kernel_from_json(c(r#"{"type":"fractional","s":1.5}"#).as_ptr(), &mut k), NlcfStatus::Parameter);
        assert_eq!(nlcf_kernel_from_json(ptr::null(), &mut k), NlcfStatus::NullPointer);
        assert_eq!(nlcf_kernel_from_json(c("{}").as_ptr(), ptr::null_mut()), NlcfStatus::NullPointer);
        nlcf_kernel_free(ptr::null_mut());
        nlcf_shape_free(ptr::null_mut());
        nlcf_trace_free(ptr::null_mut());
        nlcf_string_free(ptr::null_mut());
    }
}

#[test]
fn shape_distance_and_curvature() {
    let (mut k, mut s) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(nlcf_kernel_from_json(c(r#"{"type":"fractional","s":0.5}"#).as_ptr(), &mut k), NlcfStatus::Ok);
        assert_eq!(nlcf_shape_from_json(c(r#"{"shape":"ball","radius":2.0}"#).as_ptr(), &mut s), NlcfStatus::Ok);
        let mut d = 0.0;
        assert_eq!(nlcf_signed_distance(s, 0.5, 0.0, &mut d), NlcfStatus::Ok);
        assert!((d - 1.5).abs() < 1e-12);
        let (mut v, mut bar) = (0.0, 0.0);
        assert_eq!(nlcf_curvature(s, k, 2.0, 0.0, &mut v, &mut bar), NlcfStatus::Ok);
        let c2 = 14.83259741841098 * 2f64.powf(-0.5);
        assert!((v - c2).abs() <= 1e-3 * c2 + bar, "{v} vs {c2}");
        assert_eq!(nlcf_curvature(s, k, 0.0, 0.0, &mut v, &mut bar), NlcfStatus::Numerical);
        nlcf_shape_free(s);
        nlcf_kernel_free(k);
    }
}

#[test]
fn ball_evolution_trace() {
    let (mut k, mut s, mut t) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(nlcf_kernel_from_json(c(r#"{"type":"fractional","s":0.5}"#).as_ptr(), &mut k), NlcfStatus::Ok);
        assert_eq!(nlcf_shape_from_json(c(r#"{"shape":"ball","radius":1.0}"#).as_ptr(), &mut s), NlcfStatus::Ok);
        assert_eq!(nlcf_evolve(s, k, 0.05, 1.6, 96, 4, &mut t), NlcfStatus::Ok);
        let mut n = 0;
        assert_eq!(nlcf_trace_len(t, &mut n), NlcfStatus::Ok);
        assert_eq!(n, 5);
        let (mut time, mut area) = (0.0, 0.0);
        assert_eq!(nlcf_trace_frame(t, 0, &mut time, &mut area), NlcfStatus::Ok);
        assert!(time == 0.0 && (area - std::f64::consts::PI).abs() < 0.05);
        assert_eq!(nlcf_trace_frame(t, 5, &mut time, &mut area), NlcfStatus::OutOfRange);
        let mut te = 0.0;
        assert_eq!(nlcf_trace_extinction_time(t, &mut te), NlcfStatus::Ok);
        let oracle = 1.0 / (14.83259741841098 * 1.5);
        assert!((te - oracle).abs() < 0.08 * oracle, "{te} vs {oracle}");
        nlcf_trace_free(t);
        nlcf_shape_free(s);
        nlcf_kernel_free(k);
    }
}

#[test]
fn scenario_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(r#"{{"scenario":"kernel-info","output":{:?}}}"#, dir.path().join("k").to_str().unwrap());
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(nlcf_run_scenario(c(&cfg).as_ptr(), &mut out), NlcfStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        assert_eq!(v["pass"], true);
        nlcf_string_free(out);
        assert_eq!(nlcf_run_scenario(c(r#"{"scenario":"ball","bogus":1}"#).as_ptr(), &mut out), NlcfStatus::Parse);
        assert!(out.is_null());
    }
    assert!(dir.path().join("k/summary.json").exists());
}

#[test]
fn header_compiles_as_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nlcf.h");
    let text = std::fs::read_to_string(&header).unwrap();
    assert!(text.contains("NLCF_STATUS_OK = 0"));
    assert!(text.contains("nlcf_run_scenario"));
    let Ok(out) = std::process::Command::new("cc").args(["-std=c99", "-fsyntax-only", "-x", "c"]).arg(&header).output() else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
