//! Exercises the C ABI end to end from Rust and checks the generated
//! header stands alone as C99.

use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use lazydraw_ffi::*;

fn c_path(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0i8; 512];
    unsafe {
        ld_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

/// Deterministic pseudo-features without pulling in an RNG crate.
fn rows(n: usize, d: usize) -> Vec<f32> {
    (0..n * d)
        .map(|i| ((i * 2654435761) % 1000) as f32 / 1000.0 - 0.5)
        .collect()
}

#[test]
fn dataset_round_trip_and_handles() {
    unsafe {
        let feats = rows(50, 3);
        let mut ds: *mut LdDataset = ptr::null_mut();
        assert_eq!(
            ld_dataset_from_rows(50, 3, feats.as_ptr(), &mut ds),
            LdStatus::Ok
        );
        assert_eq!(ld_dataset_len(ds), 50);
        assert_eq!(ld_dataset_dim(ds), 3);

        let dir = tempfile::tempdir().unwrap();
        let path = c_path(&dir.path().join("ds.ldds"));
        assert_eq!(ld_dataset_save(ds, path.as_ptr()), LdStatus::Ok);

        let mut reloaded: *mut LdDataset = ptr::null_mut();
        assert_eq!(ld_dataset_load(path.as_ptr(), &mut reloaded), LdStatus::Ok);
        assert_eq!(ld_dataset_len(reloaded), 50);
        ld_dataset_free(reloaded);
        ld_dataset_free(ds);
        ld_dataset_free(ptr::null_mut());
    }
}

#[test]
fn sampling_matches_the_model() {
    unsafe {
        // Two states with scores ln 3 and 0: P(0) = 3/4.
        let feats = [3f32.ln(), 0.0];
        let mut ds: *mut LdDataset = ptr::null_mut();
        assert_eq!(
            ld_dataset_from_rows(2, 1, feats.as_ptr(), &mut ds),
            LdStatus::Ok
        );
        let theta = [1.0f64];
        let draws = 20_000usize;
        let mut ids = vec![0u32; draws];
        assert_eq!(
            ld_sample(
                ds,
                ptr::null(),
                0,
                theta.as_ptr(),
                1,
                1.0,
                1,
                f64::NAN,
                42,
                draws,
                ids.as_mut_ptr(),
            ),
            LdStatus::Ok
        );
        let zeros = ids.iter().filter(|&&id| id == 0).count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.75).abs() < 0.02, "freq = {freq}");
    }
}

#[test]
fn estimates_collapse_to_exact_at_full_k() {
    unsafe {
        let n = 120;
        let feats = rows(n, 4);
        let mut ds: *mut LdDataset = ptr::null_mut();
        assert_eq!(
            ld_dataset_from_rows(n as u64, 4, feats.as_ptr(), &mut ds),
            LdStatus::Ok
        );
        let theta = [1.5f64, -0.5, 0.25, 2.0];

        let mut exact = f64::NAN;
        let mut estimate = f64::NAN;
        assert_eq!(
            ld_log_partition_exact(ds, theta.as_ptr(), 4, 1.0, &mut exact),
            LdStatus::Ok
        );
        assert_eq!(
            ld_log_partition_estimate(
                ds,
                ptr::null(),
                0,
                theta.as_ptr(),
                4,
                1.0,
                n,
                3,
                7,
                &mut estimate,
            ),
            LdStatus::Ok
        );
        assert!((exact - estimate).abs() < 1e-12, "{exact} vs {estimate}");

        let f: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) - 0.5).collect();
        let mut exact_f = f64::NAN;
        let mut estimate_f = f64::NAN;
        assert_eq!(
            ld_expectation_exact(ds, theta.as_ptr(), 4, 1.0, f.as_ptr(), n, 1.0, &mut exact_f),
            LdStatus::Ok
        );
        assert_eq!(
            ld_expectation_estimate(
                ds,
                ptr::null(),
                0,
                theta.as_ptr(),
                4,
                1.0,
                f.as_ptr(),
                n,
                1.0,
                n,
                3,
                7,
                &mut estimate_f,
            ),
            LdStatus::Ok
        );
        assert!((exact_f - estimate_f).abs() < 1e-12);

        let mut bound = f64::NAN;
        assert_eq!(
            ld_tv_bound(ds, theta.as_ptr(), 4, 1.0, n, &mut bound),
            LdStatus::Ok
        );
        assert!(bound <= 1e-9, "full coverage bound = {bound}");
        ld_dataset_free(ds);
    }
}

#[test]
fn index_lifecycle_and_mismatch_detection() {
    unsafe {
        let feats = rows(200, 4);
        let mut ds: *mut LdDataset = ptr::null_mut();
        assert_eq!(
            ld_dataset_from_rows(200, 4, feats.as_ptr(), &mut ds),
            LdStatus::Ok
        );
        let mut index: *mut LdIndex = ptr::null_mut();
        assert_eq!(ld_index_build_ivf(ds, 8, 5, 1, &mut index), LdStatus::Ok);

        let dir = tempfile::tempdir().unwrap();
        let path = c_path(&dir.path().join("idx.ldix"));
        assert_eq!(ld_index_save(index, path.as_ptr()), LdStatus::Ok);

        let mut reloaded: *mut LdIndex = ptr::null_mut();
        assert_eq!(ld_index_load(path.as_ptr(), ds, &mut reloaded), LdStatus::Ok);

        // Sampling through the reloaded index with a gap allowance.
        let theta = [0.4f64, 0.1, -0.2, 0.3];
        let mut ids = vec![0u32; 64];
        assert_eq!(
            ld_sample(
                ds,
                reloaded,
                4,
                theta.as_ptr(),
                4,
                2.0,
                16,
                0.5,
                9,
                ids.len(),
                ids.as_mut_ptr(),
            ),
            LdStatus::Ok
        );
        assert!(ids.iter().all(|&id| id < 200));

        // A dataset of a different shape must be rejected at load.
        let other_feats = rows(10, 2);
        let mut other: *mut LdDataset = ptr::null_mut();
        assert_eq!(
            ld_dataset_from_rows(10, 2, other_feats.as_ptr(), &mut other),
            LdStatus::Ok
        );
        let mut bad: *mut LdIndex = ptr::null_mut();
        assert_eq!(
            ld_index_load(path.as_ptr(), other, &mut bad),
            LdStatus::DataError
        );
        assert!(last_error().contains("built for"), "message: {}", last_error());

        ld_index_free(reloaded);
        ld_index_free(index);
        ld_dataset_free(other);
        ld_dataset_free(ds);
    }
}

#[test]
fn error_reporting_contract() {
    unsafe {
        assert!(!ld_version().is_null());
        let version = CStr::from_ptr(ld_version()).to_str().unwrap();
        assert!(version.split('.').count() >= 2);

        let mut out: *mut LdDataset = ptr::null_mut();
        assert_eq!(
            ld_dataset_from_rows(4, 2, ptr::null(), &mut out),
            LdStatus::InvalidArgument
        );
        assert!(last_error().contains("null pointer"));

        let missing = CString::new("/definitely/not/here.ldds").unwrap();
        assert_eq!(
            ld_dataset_load(missing.as_ptr(), &mut out),
            LdStatus::IoError
        );

        // Needed length is reported even with no buffer.
        let needed = ld_last_error(ptr::null_mut(), 0);
        assert!(needed > 1);

        // Truncation keeps the terminator.
        let mut tiny = vec![0i8; 4];
        ld_last_error(tiny.as_mut_ptr(), tiny.len());
        assert_eq!(tiny[3], 0);

        // Success clears the message.
        let feats = rows(3, 2);
        assert_eq!(
            ld_dataset_from_rows(3, 2, feats.as_ptr(), &mut out),
            LdStatus::Ok
        );
        assert_eq!(ld_last_error(ptr::null_mut(), 0), 1);
        ld_dataset_free(out);
    }
}

#[test]
fn header_compiles_as_c99() {
    let include_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include_dir.join("lazydraw.h");
    assert!(header.exists(), "build.rs should generate {header:?}");

    let dir = tempfile::tempdir().unwrap();
    let main_c = dir.path().join("smoke.c");
    std::fs::write(
        &main_c,
        r#"
#include <lazydraw.h>
#include <stdio.h>

int main(void) {
    const float rows[4] = {1.0f, 0.0f, 0.0f, 1.0f};
    LdDataset *ds = NULL;
    LdStatus status = ld_dataset_from_rows(2, 2, rows, &ds);
    if (status != LD_STATUS_OK) return 1;
    printf("%s %llu\n", ld_version(), (unsigned long long)ld_dataset_len(ds));
    ld_dataset_free(ds);
    return 0;
}
"#,
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include_dir)
        .arg("-c")
        .arg(&main_c)
        .arg("-o")
        .arg(dir.path().join("smoke.o"))
        .output()
        .expect("cc runs");
    assert!(
        out.status.success(),
        "header failed to compile:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
