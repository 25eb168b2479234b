use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sqbc::kernel_linear::{KernelPosterior, KernelSpec};
use sqbc_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { sqbc_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn label_posterior_matches_hand_computed_weights() {
    // Three structures over two items.
    let labels: [i64; 6] = [0, 1, 0, 0, 1, 1];
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(sqbc_label_posterior_new(labels.as_ptr(), 3, 2, &mut h), SqbcStatus::Ok);
        let mut n = 0;
        assert_eq!(sqbc_label_posterior_len(h, &mut n), SqbcStatus::Ok);
        assert_eq!(n, 3);

        let mut u = 0.0;
        assert_eq!(sqbc_label_posterior_uncertainty(h, 0, &mut u), SqbcStatus::Ok);
        // masses 2/3, 1/3
        assert!((u - (1.0 - 4.0 / 9.0 - 1.0 / 9.0)).abs() < 1e-12);

        let beta = 0.7;
        assert_eq!(sqbc_label_posterior_update(h, 1, 1, beta), SqbcStatus::Ok);
        let mut w = [0.0; 3];
        assert_eq!(sqbc_label_posterior_weights(h, w.as_mut_ptr(), 3), SqbcStatus::Ok);
        let e = (-beta).exp();
        let z = 2.0 + e;
        for (got, want) in w.iter().zip([1.0 / z, e / z, 1.0 / z]) {
            assert!((got - want).abs() < 1e-12, "{w:?}");
        }
        let mut s = 0.0;
        assert_eq!(sqbc_label_posterior_shrinkage(h, 0, &mut s), SqbcStatus::Ok);
        let m0 = (1.0 + e) / z;
        assert!((s - (1.0 - m0.max(1.0 - m0))).abs() < 1e-12);
        sqbc_label_posterior_free(h);
    }
}

#[test]
fn errors_report_status_and_message() {
    let labels: [i64; 2] = [0, 1];
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(sqbc_label_posterior_new(ptr::null(), 1, 2, &mut h), SqbcStatus::NullPointer);
        assert!(h.is_null());
        assert!(last_error().contains("labels"));
        assert_eq!(sqbc_label_posterior_new(labels.as_ptr(), 0, 2, &mut h), SqbcStatus::InvalidArgument);
        assert_eq!(sqbc_label_posterior_new(labels.as_ptr(), 1, 2, &mut h), SqbcStatus::Ok);
        assert_eq!(sqbc_label_posterior_update(h, 5, 0, 1.0), SqbcStatus::InvalidQuery);
        assert!(last_error().contains("item 5"));
        assert_eq!(sqbc_label_posterior_update(h, 0, 0, -1.0), SqbcStatus::InvalidArgument);
        let mut w = [0.0; 4];
        assert_eq!(sqbc_label_posterior_weights(h, w.as_mut_ptr(), 4), SqbcStatus::InvalidArgument);
        assert_eq!(sqbc_label_posterior_len(h, ptr::null_mut()), SqbcStatus::NullPointer);
        sqbc_label_posterior_free(h);
        sqbc_label_posterior_free(ptr::null_mut());

        let mut k = ptr::null_mut();
        assert_eq!(sqbc_kernel_new(1.0, 0.0, 1.0, 0, &mut k), SqbcStatus::InvalidArgument);
        assert!(k.is_null());
    }
}

#[test]
fn kernel_handle_agrees_with_library() {
    let xs = [[0.0, 1.0], [1.0, -0.5], [0.3, 0.3]];
    let ys = [1.0, -1.0, 0.5];
    let mut lib = KernelPosterior::new(KernelSpec::rbf(0.5).unwrap(), 2.0, 1.5).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(sqbc_kernel_new(0.5, 2.0, 1.5, 7, &mut h), SqbcStatus::Ok);
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(sqbc_kernel_update(h, x.as_ptr(), 2, y), SqbcStatus::Ok);
            lib.update(x, y).unwrap();
        }
        let mut n = 0;
        sqbc_kernel_len(h, &mut n);
        assert_eq!(n, 3);
        let q = [0.2, 0.1];
        let (mut m, mut v) = (0.0, 0.0);
        assert_eq!(sqbc_kernel_predict(h, q.as_ptr(), 2, &mut m, &mut v), SqbcStatus::Ok);
        let (lm, lv) = lib.predictive_scalar(&q).unwrap();
        assert_eq!((m, v), (lm, lv));

        let mut s = 0.0;
        assert_eq!(sqbc_kernel_sample(h, q.as_ptr(), 2, &mut s), SqbcStatus::Ok);
        assert!(s.is_finite());
        let bad = [1.0, 2.0, 3.0];
        assert_eq!(sqbc_kernel_update(h, bad.as_ptr(), 3, 0.0), SqbcStatus::InvalidArgument);
        sqbc_kernel_free(h);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(sqbc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include "sqbc.h"
int main(void) {
    int64_t labels[4] = {0, 1, 1, 1};
    SqbcLabelPosterior *p = NULL;
    if (sqbc_label_posterior_new(labels, 2, 2, &p) != SQBC_STATUS_OK) return 1;
    if (sqbc_label_posterior_update(p, 0, 1, 1.0) != SQBC_STATUS_OK) return 2;
    double w[2];
    sqbc_label_posterior_weights(p, w, 2);
    if (!(w[1] > w[0])) return 3;
    if (sqbc_label_posterior_update(p, 9, 1, 1.0) != SQBC_STATUS_INVALID_QUERY) return 4;
    char msg[128];
    if (sqbc_last_error(msg, sizeof msg) == 0) return 5;
    sqbc_label_posterior_free(p);
    puts("ok");
    return 0;
}
"#;

/// Compiles and links a C program against the header and the static library.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libsqbc_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
