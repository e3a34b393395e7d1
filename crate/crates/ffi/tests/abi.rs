use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use perturbench::data::checkpoint_save;
use perturbench::model::{Model, ModelConfig};
use perturbench_ffi::*;

const CONFIG: &str = r#"{"family": "plain", "input_shape": [3, 16, 16], "num_classes": 3, "widths": [4, 8]}"#;
const LEN: usize = 3 * 16 * 16;

fn build() -> *mut PbModel {
    let json = CString::new(CONFIG).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pb_model_build(json.as_ptr(), 7, &mut m) }, PbStatus::Ok);
    assert!(!m.is_null());
    m
}

fn image() -> Vec<f64> {
    (0..LEN).map(|i| ((i * 31) % 101) as f64 / 100.0).collect()
}

fn last_error() -> String {
    let p = pb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn predict_matches_the_rust_model() {
    let m = build();
    let reference = Model::build(serde_json::from_str::<ModelConfig>(CONFIG).unwrap(), 7).unwrap();
    let x = image();
    let (mut class, mut conf) = (usize::MAX, 0.0);
    let mut probs = [0.0; 3];
    let status = unsafe { pb_predict(m, x.as_ptr(), LEN, &mut class, &mut conf, probs.as_mut_ptr(), 3) };
    assert_eq!(status, PbStatus::Ok);
    let want = reference
        .forward_infer(&perturbench::Tensor::new(vec![3, 16, 16], x).unwrap())
        .unwrap();
    assert_eq!(class, want.class);
    assert_eq!(conf, want.confidence);
    assert_eq!(probs.to_vec(), want.probabilities);
    unsafe { pb_model_free(m) };
}

#[test]
fn attacks_respect_the_budget() {
    let m = build();
    let x = image();
    let mut fgsm = vec![0.0; LEN];
    let mut bim = vec![0.0; LEN];
    unsafe {
        assert_eq!(pb_fgsm(m, x.as_ptr(), LEN, 1, 0.05, fgsm.as_mut_ptr()), PbStatus::Ok);
        assert_eq!(pb_bim(m, x.as_ptr(), LEN, 1, 0.05, 0.05, 1, bim.as_mut_ptr()), PbStatus::Ok);
    }
    for ((a, b), x) in fgsm.iter().zip(&bim).zip(&x) {
        assert!((a - x).abs() <= 0.05 + 1e-12 && (0.0..=1.0).contains(a));
        assert!((a - b).abs() <= 1e-12);
    }
    let mut same = vec![0.0; LEN];
    unsafe { assert_eq!(pb_fgsm(m, x.as_ptr(), LEN, 1, 0.0, same.as_mut_ptr()), PbStatus::Ok) };
    assert_eq!(same, x);
    unsafe { pb_model_free(m) };
}

#[test]
fn error_codes_and_messages() {
    let m = build();
    let x = image();
    let mut out = vec![0.0; LEN];
    unsafe {
        assert_eq!(pb_fgsm(ptr::null(), x.as_ptr(), LEN, 0, 0.1, out.as_mut_ptr()), PbStatus::NullPointer);
        assert!(last_error().contains("model"));
        assert_eq!(pb_fgsm(m, x.as_ptr(), LEN - 1, 0, 0.1, out.as_mut_ptr()), PbStatus::Dimension);
        assert_eq!(pb_fgsm(m, x.as_ptr(), LEN, 5, 0.1, out.as_mut_ptr()), PbStatus::Input);
        assert_eq!(pb_bim(m, x.as_ptr(), LEN, 0, 0.1, 0.2, 3, out.as_mut_ptr()), PbStatus::Config);
        assert!(last_error().contains("step_size"));
        let mut sum = [0 as std::ffi::c_char; 10];
        assert_eq!(pb_model_checksum(m, sum.as_mut_ptr(), sum.len()), PbStatus::BufferTooSmall);
        // success clears the message
        assert_eq!(pb_fgsm(m, x.as_ptr(), LEN, 0, 0.1, out.as_mut_ptr()), PbStatus::Ok);
        assert!(pb_last_error_message().is_null());

        let bad = CString::new(r#"{"family": "plain"}"#).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(pb_model_build(bad.as_ptr(), 0, &mut h), PbStatus::Serde);
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(pb_model_load(missing.as_ptr(), &mut h), PbStatus::Io);
        assert!(h.is_null());
        pb_model_free(m);
        pb_model_free(ptr::null_mut());
    }
}

#[test]
fn fooling_rate_and_gate() {
    let (mut rate, mut degenerate) = (0.0, true);
    unsafe {
        assert_eq!(pb_fooling_rate(1449, 1679, &mut rate, &mut degenerate), PbStatus::Ok);
        assert!((rate * 100.0 - 86.30).abs() < 0.01);
        assert!(!degenerate);
        assert_eq!(pb_fooling_rate(0, 0, &mut rate, &mut degenerate), PbStatus::Ok);
        assert_eq!((rate, degenerate), (0.0, true));
        assert_eq!(pb_fooling_rate(3, 2, &mut rate, &mut degenerate), PbStatus::Input);
    }
    assert!(pb_attack_success(2, 0.9981, 4, 0.9987, 2, 0.7));
    assert!(!pb_attack_success(2, 0.9, 4, 0.69, 2, 0.7));
    assert!(pb_attack_success(2, 0.9, 4, 0.71, 2, 0.7));
    let v = unsafe { CStr::from_ptr(pb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn checkpoint_round_trip_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::build(serde_json::from_str::<ModelConfig>(CONFIG).unwrap(), 7).unwrap();
    checkpoint_save(&model, None, &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pb_model_load(c.as_ptr(), &mut h) }, PbStatus::Ok);
    let mut buf = [0 as std::ffi::c_char; 65];
    assert_eq!(unsafe { pb_model_checksum(h, buf.as_mut_ptr(), 65) }, PbStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), model.checksum());
    let (mut k, mut shape) = (0, [0usize; 3]);
    assert_eq!(unsafe { pb_model_info(h, &mut k, shape.as_mut_ptr()) }, PbStatus::Ok);
    assert_eq!((k, shape), (3, [3, 16, 16]));
    unsafe { pb_model_free(h) };
}

/// Compiles `tests/c/smoke.c` against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // tests run from target/<profile>/deps; the static library sits one level up
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = lib_dir.join("libperturbench_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let model = Model::build(serde_json::from_str::<ModelConfig>(CONFIG).unwrap(), 3).unwrap();
    checkpoint_save(&model, None, &ckpt).unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).arg(&ckpt).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
