use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use compnet::{evaluate, rng, Activation, Component, ComponentKind, CompositeNetwork, Matrix, Registry, Role};
use compnet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cn_last_error_message()) }.to_string_lossy().into_owned()
}

fn pool() -> (Vec<Component>, CompositeNetwork) {
    let mut r = rng::seeded(3);
    let f1 = Component::mlp("f1", ComponentKind::PreTrained, Role::Base, &[2, 4, 1], Activation::Tanh, &mut r).unwrap();
    let f2 = Component::mlp("f2", ComponentKind::PreTrained, Role::Base, &[2, 1], Activation::Linear, &mut r).unwrap();
    let net = CompositeNetwork::combine(
        &[&CompositeNetwork::leaf("f1"), &CompositeNetwork::leaf("f2")],
        vec![0.5, 1.5, -0.25],
    )
    .unwrap();
    (vec![f1, f2], net)
}

#[test]
fn evaluate_matches_library() {
    let (comps, net) = pool();
    let reg_json = CString::new(serde_json::json!({ "components": comps }).to_string()).unwrap();
    let net_json = CString::new(net.to_json().unwrap()).unwrap();
    let inputs = [0.1, -0.3, 1.2, 0.4, -2.0, 0.7];
    let mut registry = ptr::null_mut();
    let mut network = ptr::null_mut();
    unsafe {
        assert_eq!(cn_registry_from_json(reg_json.as_ptr(), &mut registry), CnStatus::Ok);
        assert_eq!(cn_network_from_json(net_json.as_ptr(), &mut network), CnStatus::Ok);
        let mut len = 0;
        assert_eq!(cn_registry_len(registry, &mut len), CnStatus::Ok);
        assert_eq!(len, 2);

        let mut small = [0.0; 2];
        let status = cn_evaluate(network, registry, inputs.as_ptr(), 3, 2, small.as_mut_ptr(), 2, &mut len);
        assert_eq!(status, CnStatus::BufferTooSmall);
        assert_eq!(len, 3);

        let mut out = [0.0; 3];
        let status = cn_evaluate(network, registry, inputs.as_ptr(), 3, 2, out.as_mut_ptr(), 3, &mut len);
        assert_eq!(status, CnStatus::Ok, "{}", last_error());
        let expected = evaluate(
            &net,
            &Registry::from_components(comps).unwrap(),
            &Matrix::from_vec(3, 2, inputs.to_vec()).unwrap(),
        )
        .unwrap();
        assert_eq!(&out[..], expected.as_slice());

        let status = cn_evaluate(network, registry, inputs.as_ptr(), 2, 3, out.as_mut_ptr(), 3, &mut len);
        assert_eq!(status, CnStatus::DimensionMismatch);
        assert!(!last_error().is_empty());

        cn_network_free(network);
        cn_registry_free(registry);
    }
}

#[test]
fn theta_star_recovers_exact_combination() {
    let n = 50;
    let f1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let f2: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos() + 0.01 * i as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| 0.3 - 1.2 * f1[i] + 2.5 * f2[i]).collect();
    let flat: Vec<f64> = f1.iter().chain(&f2).copied().collect();
    let mut theta = [0.0; 3];
    let status = unsafe { cn_solve_theta_star(flat.as_ptr(), 2, n, y.as_ptr(), 0.0, theta.as_mut_ptr()) };
    assert_eq!(status, CnStatus::Ok, "{}", last_error());
    for (a, b) in theta.iter().zip([0.3, -1.2, 2.5]) {
        assert!((a - b).abs() < 1e-9, "{theta:?}");
    }

    let mut report = CnAssumptions::default();
    let status = unsafe { cn_check_assumptions(flat.as_ptr(), 2, n, y.as_ptr(), &mut report) };
    assert_eq!(status, CnStatus::Ok);
    assert!(report.independent && report.no_perfect_component && report.within_budget);

    // a duplicated column is singular
    let dup: Vec<f64> = f1.iter().chain(&f1).copied().collect();
    let status = unsafe { cn_solve_theta_star(dup.as_ptr(), 2, n, y.as_ptr(), 0.0, theta.as_mut_ptr()) };
    assert_eq!(status, CnStatus::SingularGram);
    let status = unsafe { cn_check_assumptions(dup.as_ptr(), 2, n, y.as_ptr(), &mut report) };
    assert_eq!(status, CnStatus::Ok);
    assert!(!report.independent);
}

#[test]
fn wrapper_round_trip() {
    let g: Vec<f64> = (0..40).map(|i| -900.0 + 45.0 * i as f64).collect();
    let act = CString::new("logistic").unwrap();
    let mut w = ptr::null_mut();
    unsafe {
        let status = cn_wrapper_construct(g.as_ptr(), g.len(), act.as_ptr(), 0.01, 1e-7, &mut w);
        assert_eq!(status, CnStatus::Ok, "{}", last_error());
        let mut out = vec![0.0; g.len()];
        assert_eq!(cn_wrapper_apply(w, g.as_ptr(), g.len(), out.as_mut_ptr()), CnStatus::Ok);
        let mut bound = 0.0;
        assert_eq!(cn_wrapper_error_bound(w, &mut bound), CnStatus::Ok);
        assert!(bound < 0.01);
        for (a, b) in out.iter().zip(&g) {
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
        let mut json = ptr::null_mut();
        assert_eq!(cn_wrapper_to_json(w, &mut json), CnStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        cn_string_free(json);
        assert!(text.contains("\"gamma\":1e-7"), "{text}");
        cn_wrapper_free(w);

        let relu = CString::new("relu").unwrap();
        let status = cn_wrapper_construct(g.as_ptr(), g.len(), relu.as_ptr(), 0.01, 0.0, &mut w);
        assert_eq!(status, CnStatus::UnsupportedActivation);
        let bogus = CString::new("softsign").unwrap();
        let status = cn_wrapper_construct(g.as_ptr(), g.len(), bogus.as_ptr(), 0.01, 0.0, &mut w);
        assert_eq!(status, CnStatus::InvalidInput);
    }
}

#[test]
fn knn_impute_through_abi() {
    let values = [1.0, 0.0, 3.0, 4.0, 5.0, 0.0, 7.0, 8.0, 9.0];
    let known = [1u8, 0, 1, 1, 1, 0, 1, 1, 1];
    let mut out = [0.0; 9];
    let status = unsafe { cn_knn_impute(values.as_ptr(), known.as_ptr(), 3, 3, 4, out.as_mut_ptr()) };
    assert_eq!(status, CnStatus::Ok, "{}", last_error());
    // nearest known cells of (0,1): (0,0), (0,2), (1,1) at distance 1, then (1,0)
    assert!((out[1] - (1.0 + 3.0 + 5.0 + 4.0) / 4.0).abs() < 1e-15);
    for i in [0, 2, 3, 4, 6, 7, 8] {
        assert_eq!(out[i], values[i]);
    }
}

#[test]
fn null_and_bad_input_codes() {
    unsafe {
        let mut reg = ptr::null_mut();
        assert_eq!(cn_registry_from_json(ptr::null(), &mut reg), CnStatus::NullPointer);
        let bad = CString::new("{not json").unwrap();
        assert_eq!(cn_registry_from_json(bad.as_ptr(), &mut reg), CnStatus::Parse);
        assert!(reg.is_null());
        let mut bound = 0.0;
        assert_eq!(cn_wrapper_error_bound(ptr::null(), &mut bound), CnStatus::NullPointer);
        assert!(last_error().contains("wrapper"));
        cn_wrapper_free(ptr::null_mut());
        cn_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(cn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/compnet.h")
}

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "cn_version",
        "cn_last_error_message",
        "cn_string_free",
        "cn_registry_from_json",
        "cn_registry_free",
        "cn_network_from_json",
        "cn_network_free",
        "cn_evaluate",
        "cn_solve_theta_star",
        "cn_check_assumptions",
        "cn_wrapper_construct",
        "cn_wrapper_apply",
        "cn_wrapper_error_bound",
        "cn_wrapper_to_json",
        "cn_wrapper_free",
        "cn_knn_impute",
        "CN_STATUS_SINGULAR_GRAM",
        "typedef struct CnRegistry CnRegistry",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the header and static library when
/// a C compiler is available.
#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libcompnet_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "compnet.h"
int main(void) {
    const double f[4] = {1, 2, 3, 4};
    const double y[4] = {2, 5, 7, 12};
    double theta[2];
    CnStatus s = cn_solve_theta_star(f, 1, 4, y, 0.0, theta);
    if (s != CN_STATUS_OK) { fprintf(stderr, "%s\n", cn_last_error_message()); return 1; }
    printf("%.12f %.12f\n", theta[0], theta[1]);
    s = cn_solve_theta_star(f, 1, 4, NULL, 0.0, theta);
    return s == CN_STATUS_NULL_POINTER ? 0 : 2;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("prog");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // least squares of y on [1, x] with x = 1..4, y = 2, 5, 7, 12
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "-1.500000000000 3.200000000000");
}
