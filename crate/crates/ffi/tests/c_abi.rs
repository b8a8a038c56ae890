use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use auxlab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(auxlab_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn task_weights_round_trip() {
    unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(auxlab_task_weights_new(3, &mut w), AuxlabStatus::Ok);
        let mut alpha = [0.0; 3];
        assert_eq!(auxlab_task_weights_alpha(w, alpha.as_mut_ptr(), 3), AuxlabStatus::Ok);
        assert!(alpha.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        let align = [1.0, 0.0, -1.0];
        assert_eq!(auxlab_task_weights_update(w, align.as_ptr(), 3, 0.5), AuxlabStatus::Ok);
        auxlab_task_weights_alpha(w, alpha.as_mut_ptr(), 3);
        assert!(alpha[0] > alpha[1] && alpha[1] > alpha[2]);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(auxlab_task_weights_update(w, align.as_ptr(), 2, 0.5), AuxlabStatus::InvalidArgument);
        assert!(last_error().contains("2 alignments"));
        auxlab_task_weights_free(w);
        assert_eq!(auxlab_task_weights_new(0, &mut w), AuxlabStatus::InvalidArgument);
        assert_eq!(auxlab_task_weights_new(2, ptr::null_mut()), AuxlabStatus::NullPointer);
    }
}

#[test]
fn quadratic_oracle_matches_the_closed_form() {
    unsafe {
        let (a, b) = ([2.0, 2.0], [0.0, 2.0]);
        let mut q = ptr::null_mut();
        let st = auxlab_quadratic_new(1, 2, a.as_ptr(), b.as_ptr(), [2.0].as_ptr(), [2.0].as_ptr(), [0.5, 0.5].as_ptr(), &mut q);
        assert_eq!(st, AuxlabStatus::Ok, "{}", last_error());
        let (mut e, mut f, mut i) = (0.0, 0.0, 0.0);
        assert_eq!(auxlab_quadratic_exact(q, 1, &mut e), AuxlabStatus::Ok);
        assert_eq!(auxlab_quadratic_finite_difference(q, 1, 1e-5, &mut f), AuxlabStatus::Ok);
        assert_eq!(auxlab_quadratic_identity(q, 1, &mut i), AuxlabStatus::Ok);
        assert!((e + 0.5).abs() < 1e-8 && (f + 0.5).abs() < 1e-8);
        assert!(i < 0.0);
        assert_eq!(auxlab_quadratic_exact(q, 5, &mut e), AuxlabStatus::InvalidArgument);
        auxlab_quadratic_free(q);

        let sing = [1.0, 0.0, 0.0, 0.0];
        let st = auxlab_quadratic_new(2, 1, sing.as_ptr(), [0.0, 0.0].as_ptr(), sing.as_ptr(), [0.0, 0.0].as_ptr(), [1.0].as_ptr(), &mut q);
        assert_eq!(st, AuxlabStatus::NotPositiveDefinite);

        assert_eq!(auxlab_quadratic_random(3, 4, 2, 0.5, 2.0, &mut q), AuxlabStatus::Ok);
        auxlab_quadratic_exact(q, 2, &mut e);
        auxlab_quadratic_finite_difference(q, 2, 1e-5, &mut f);
        assert!((e - f).abs() <= 1e-6 * e.abs().max(1e-3));
        auxlab_quadratic_free(q);
    }
}

#[test]
fn permutation_test_values() {
    unsafe {
        let mut p = 0.0;
        let st = auxlab_permutation_test([1.0, 2.0].as_ptr(), 2, [3.0, 4.0].as_ptr(), 2, 0, 0, &mut p);
        assert_eq!(st, AuxlabStatus::Ok);
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        let st = auxlab_permutation_test(ptr::null(), 0, [3.0].as_ptr(), 1, 0, 0, &mut p);
        assert_eq!(st, AuxlabStatus::InvalidArgument);
    }
}

#[test]
fn experiment_runs_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(
        r#"{"benchmark": {"kind": "synth-helpful-harmful", "end_test": 32, "aux_train": 32},
            "strategy": "tartan_meta", "trainer": {"max_steps": 6, "val_period": 3, "batch_size": 8},
            "seeds": [0, 1]}"#,
    )
    .unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut summary = ptr::null_mut();
        let st = auxlab_run_experiment_json(cfg.as_ptr(), out.as_ptr(), &mut summary);
        assert_eq!(st, AuxlabStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(summary).to_str().unwrap().to_string();
        auxlab_string_free(summary);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["runs"].as_array().unwrap().len(), 2);
        assert!(dir.path().join("tartan_meta_seed1.csv").exists());

        let bad = CString::new("{").unwrap();
        let st = auxlab_run_experiment_json(bad.as_ptr(), ptr::null(), &mut summary);
        assert_eq!(st, AuxlabStatus::InvalidArgument);
        assert!(summary.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/auxlab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "auxlab_task_weights_new",
        "auxlab_quadratic_exact",
        "auxlab_permutation_test",
        "auxlab_run_experiment_json",
        "auxlab_string_free",
        "AUXLAB_STATUS_OK = 0",
        "typedef struct AuxlabQuadratic AuxlabQuadratic",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // syntax check with the system C compiler when one is present
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"auxlab.h\"\nint main(void) { AuxlabTaskWeights *w = 0; return auxlab_task_weights_new(3, &w); }\n").unwrap();
    let inc = header.parent().unwrap();
    if let Ok(out) = Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-I").arg(inc).arg(&src).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
