use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use covstream::recognizer::{train, RecognizerConfig};
use covstream::synth::{SynthConfig, SyntheticClasses};
use covstream_ffi::*;

fn last_error() -> String {
    let p = covstream_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn stein_hand_value() {
    let x = [1.0, 0.0, 0.0, 1.0];
    let y = [4.0, 0.0, 0.0, 4.0];
    let mut out = f64::NAN;
    let s = unsafe { covstream_stein_divergence(x.as_ptr(), y.as_ptr(), 2, &mut out) };
    assert_eq!(s, CovstreamStatus::Ok);
    assert!((out - (2.0 * 2.5f64.ln() - 4.0f64.ln())).abs() < 1e-12);
}

#[test]
fn stein_errors() {
    let x = [1.0, 0.0, 0.0, -1.0];
    let mut out = 0.0;
    let s = unsafe { covstream_stein_divergence(x.as_ptr(), x.as_ptr(), 2, &mut out) };
    assert_eq!(s, CovstreamStatus::NumericalError);
    assert!(last_error().contains("positive definite"));

    let s = unsafe { covstream_stein_divergence(ptr::null(), x.as_ptr(), 2, &mut out) };
    assert_eq!(s, CovstreamStatus::NullPointer);
    assert!(last_error().contains("x"));

    let s = unsafe { covstream_stein_divergence(x.as_ptr(), x.as_ptr(), 0, &mut out) };
    assert_eq!(s, CovstreamStatus::InvalidArgument);
}

#[test]
fn covariance_handle_lifecycle() {
    let frames = [0.0, 2.0];
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            covstream_covariance_new(frames.as_ptr(), ptr::null(), 2, 1, 1.0, &mut h),
            CovstreamStatus::Ok
        );
        assert_eq!(covstream_covariance_dim(h), 1);
        let mut c = [0.0];
        let mut m = [0.0];
        covstream_covariance_read(h, c.as_mut_ptr(), m.as_mut_ptr());
        assert!((c[0] - 2.0).abs() < 1e-12 && (m[0] - 1.0).abs() < 1e-12);

        let f = [4.0];
        assert_eq!(
            covstream_covariance_update(h, f.as_ptr(), 1, 1.0),
            CovstreamStatus::Ok
        );
        covstream_covariance_read(h, c.as_mut_ptr(), m.as_mut_ptr());
        assert!((c[0] - 4.0).abs() < 1e-12 && (m[0] - 2.0).abs() < 1e-12);
        assert_eq!(covstream_covariance_frame_count(h), 3);

        let bad = [f64::NAN];
        assert_eq!(
            covstream_covariance_update(h, bad.as_ptr(), 1, 1.0),
            CovstreamStatus::NumericalError
        );
        let two = [1.0, 2.0];
        assert_eq!(
            covstream_covariance_update(h, two.as_ptr(), 2, 1.0),
            CovstreamStatus::DataError
        );
        covstream_covariance_free(h);
        covstream_covariance_free(ptr::null_mut());
    }
}

#[test]
fn covariance_rejects_bad_input() {
    let mut h = ptr::null_mut();
    let one = [1.0];
    unsafe {
        assert_eq!(
            covstream_covariance_new(one.as_ptr(), ptr::null(), 1, 1, 0.9, &mut h),
            CovstreamStatus::DataError
        );
        assert!(h.is_null());
        assert_eq!(
            covstream_covariance_new(one.as_ptr(), ptr::null(), 1, 1, 1.5, &mut h),
            CovstreamStatus::InvalidArgument
        );
        assert_eq!(
            covstream_covariance_new(one.as_ptr(), ptr::null(), 1, 1, 0.9, ptr::null_mut()),
            CovstreamStatus::NullPointer
        );
    }
}

#[test]
fn recognizer_matches_library() {
    let synth = SyntheticClasses::new(SynthConfig::default()).unwrap();
    let config = RecognizerConfig {
        decay: 0.8,
        init_frames: 15,
        ..Default::default()
    };
    let (model, _) = train(
        &synth.training_set().unwrap(),
        synth.layout(),
        &synth.neutral(),
        &config,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    covstream::io::write_model(&path, &model).unwrap();

    let stream = synth.sample_mixed(4, 40, 99).unwrap();
    let frames: Vec<_> = stream.into_iter().flat_map(|i| i.frames).collect();
    let expected = model.recognize(&frames, false).unwrap().plain_events();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            covstream_recognizer_load(c_path.as_ptr(), &mut h),
            CovstreamStatus::Ok
        );
        assert_eq!(
            covstream_recognizer_joint_count(h),
            model.layout.joint_count()
        );
        assert_eq!(covstream_recognizer_class_count(h), 3);
        let mut labels = [0u32; 3];
        assert_eq!(covstream_recognizer_labels(h, labels.as_mut_ptr(), 3), 3);
        assert_eq!(labels, [1, 2, 3]);

        for pass in 0..2 {
            let mut got = Vec::new();
            for f in &frames {
                let flat: Vec<f64> = f.joints.iter().flatten().copied().collect();
                let mut ev = CovstreamEvent {
                    frame_index: 0,
                    label: 0,
                    kind: CovstreamEventKind::Continuation,
                };
                let mut has = -1;
                let s = covstream_recognizer_push_frame(
                    h,
                    flat.as_ptr(),
                    f.joints.len(),
                    &mut ev,
                    &mut has,
                );
                assert_eq!(s, CovstreamStatus::Ok);
                if has == 1 {
                    got.push((ev.frame_index, ev.label, ev.kind));
                }
            }
            assert_eq!(got.len(), expected.len(), "pass {pass}");
            for (g, e) in got.iter().zip(&expected) {
                assert_eq!(g.0, e.frame_index);
                assert_eq!(g.1, e.label);
                assert_eq!(format!("{:?}", g.2), format!("{:?}", e.kind));
            }
            covstream_recognizer_reset(h);
        }

        let short = [0.0; 6];
        let mut ev = CovstreamEvent {
            frame_index: 0,
            label: 0,
            kind: CovstreamEventKind::Continuation,
        };
        let mut has = 0;
        let s = covstream_recognizer_push_frame(h, short.as_ptr(), 2, &mut ev, &mut has);
        assert_eq!(s, CovstreamStatus::DataError);
        covstream_recognizer_free(h);
    }
}

#[test]
fn missing_model_file() {
    let path = CString::new("/nonexistent/model.txt").unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { covstream_recognizer_load(path.as_ptr(), &mut h) };
    assert_eq!(s, CovstreamStatus::DataError);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/model.txt"));
}

#[test]
fn header_declares_the_abi_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/covstream.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "covstream_last_error",
        "covstream_stein_divergence",
        "covstream_covariance_new",
        "covstream_covariance_update",
        "covstream_covariance_read",
        "covstream_covariance_free",
        "covstream_recognizer_load",
        "covstream_recognizer_push_frame",
        "covstream_recognizer_free",
        "typedef struct CovstreamCovariance CovstreamCovariance;",
        "typedef struct CovstreamRecognizer CovstreamRecognizer;",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }

    let Ok(status) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping compile check");
        return;
    };
    assert!(status.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"covstream.h\"\n\
         int main(void) {\n\
           double x[4] = {1, 0, 0, 1}, d = 0;\n\
           CovstreamCovariance *h = NULL;\n\
           if (covstream_stein_divergence(x, x, 2, &d) != COVSTREAM_STATUS_OK) return 1;\n\
           covstream_covariance_free(h);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
