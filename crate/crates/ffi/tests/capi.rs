use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use miso_wpt_ffi::*;

fn last_error() -> String {
    let p = mw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn preset(name: &str, d: f64, theta: f64) -> *mut MwSystem {
    let name = CString::new(name).unwrap();
    let mut sys = ptr::null_mut();
    let st = unsafe { mw_system_from_preset(name.as_ptr(), d, theta, &mut sys) };
    assert_eq!(st, MwStatus::Ok);
    sys
}

#[test]
fn solve_constrained_preset() {
    let sys = preset("MISO-3c", 0.1, 18.0);
    assert_eq!(unsafe { mw_system_n_ports(sys) }, 4);
    let mode = CString::new("nonneg").unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { mw_solve(sys, 0.0, mode.as_ptr(), &mut res) }, MwStatus::Ok);

    let mut s = MwSummary::default();
    assert_eq!(unsafe { mw_result_summary(res, &mut s) }, MwStatus::Ok);
    assert!(s.efficiency > 0.0 && s.efficiency <= s.efficiency_unconstrained + 1e-12);
    assert!(!s.skipped && s.tight);
    assert!(s.tightness_error <= 1e-8);

    let mut written = 0;
    let mut small = [0.0; 1];
    let st = unsafe { mw_result_transmit_powers(res, small.as_mut_ptr(), small.len(), &mut written) };
    assert_eq!(st, MwStatus::BufferTooSmall);
    assert_eq!(written, 3);
    let mut p = [0.0; 3];
    assert_eq!(unsafe { mw_result_transmit_powers(res, p.as_mut_ptr(), 3, &mut written) }, MwStatus::Ok);
    assert!(p.iter().all(|&x| x >= -1e-9), "{p:?}");

    let (mut re, mut im) = ([0.0; 4], [0.0; 4]);
    assert_eq!(
        unsafe { mw_result_currents(res, re.as_mut_ptr(), im.as_mut_ptr(), 4, &mut written) },
        MwStatus::Ok
    );
    assert_eq!(written, 4);
    assert!(re[3] > 0.0);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { mw_result_json(res, &mut json) }, MwStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["n_ports"], 4);
    unsafe {
        mw_string_free(json);
        mw_result_free(res);
        mw_system_free(sys);
    }
}

#[test]
fn matrix_input_and_errors() {
    let re = [1.0, 0.2, 0.2, 1.5];
    let im = [30.0, 4.0, 4.0, 28.0];
    let mut sys = ptr::null_mut();
    let st = unsafe { mw_system_from_matrix(2, re.as_ptr(), im.as_ptr(), 1e7, &mut sys) };
    assert_eq!(st, MwStatus::Ok);
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { mw_solve(sys, 0.0, ptr::null(), &mut res) }, MwStatus::Ok);
    let mut s = MwSummary::default();
    unsafe { mw_result_summary(res, &mut s) };
    assert!(s.skipped);
    unsafe { mw_result_free(res) };

    let bad = CString::new("caps=").unwrap();
    assert_eq!(unsafe { mw_solve(sys, 0.0, bad.as_ptr(), &mut res) }, MwStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    unsafe { mw_system_free(sys) };

    let asym_re = [1.0, 0.2, 0.5, 1.5];
    let st = unsafe { mw_system_from_matrix(2, asym_re.as_ptr(), im.as_ptr(), 1e7, &mut sys) };
    assert_eq!(st, MwStatus::InvalidSystem);

    let unknown = CString::new("MISO-9").unwrap();
    let st = unsafe { mw_system_from_preset(unknown.as_ptr(), 0.1, 0.0, &mut sys) };
    assert_eq!(st, MwStatus::InvalidArgument);
    assert!(last_error().contains("MISO-9"));

    assert_eq!(unsafe { mw_solve(ptr::null(), 0.0, ptr::null(), &mut res) }, MwStatus::NullPointer);
    let missing = CString::new("/nonexistent/z.json").unwrap();
    assert_eq!(unsafe { mw_system_load(missing.as_ptr(), &mut sys) }, MwStatus::Io);
    unsafe {
        mw_system_free(ptr::null_mut());
        mw_result_free(ptr::null_mut());
    }
}

#[test]
fn infeasible_caps_are_reported() {
    let sys = preset("MISO-2p", 0.1, 30.0);
    let caps = CString::new("caps=0,0").unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { mw_solve(sys, 0.0, caps.as_ptr(), &mut res) }, MwStatus::Infeasible);
    assert!(res.is_null());
    unsafe { mw_system_free(sys) };
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mw_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/miso_wpt.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mw_solve", "mw_system_from_preset", "mw_result_summary", "MW_STATUS_INFEASIBLE", "mw_last_error"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax-check the header with a C compiler when one is installed.
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-fsyntax-only", "-x", "c", "-"])
        .arg("-include")
        .arg(&header)
        .arg("/dev/null")
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
