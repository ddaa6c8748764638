use std::ffi::{CStr, CString};
use std::ptr;

use piml_aero::flight::FlightState;
use piml_aero::geometry::AircraftConfig;
use piml_aero::piml::Model;
use piml_aero_ffi::*;

const X: [f64; PA_INPUTS] = [24.0, 6.0, 7200.0, 5400.0, 25.0, 47.0, 4.0];

fn last_error() -> String {
    unsafe { CStr::from_ptr(pa_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn low_fidelity() -> *mut PaModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pa_model_new_low_fidelity(&mut m) }, PaStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn low_fidelity_prediction_matches_the_library() {
    let m = low_fidelity();
    let mut out = [0.0; 2 * PA_OUTPUTS];
    let inputs: Vec<f64> = X
        .iter()
        .chain(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        .copied()
        .collect();
    assert_eq!(
        unsafe { pa_model_predict(m, inputs.as_ptr(), 2, out.as_mut_ptr()) },
        PaStatus::Ok
    );
    let lib = Model::low_fidelity(AircraftConfig::default()).unwrap();
    let want = lib
        .predict(&FlightState::from_array(X))
        .unwrap()
        .coefficients
        .to_array();
    assert_eq!(&out[..PA_OUTPUTS], &want);
    assert!(out[PA_OUTPUTS..].iter().all(|v| v.is_finite()));
    let mut kind = PaModelKind::PureAnn;
    assert_eq!(unsafe { pa_model_kind(m, &mut kind) }, PaStatus::Ok);
    assert_eq!(kind, PaModelKind::LowFidelity);
    unsafe { pa_model_free(m) };
}

#[test]
fn jacobian_matches_central_differences() {
    let m = low_fidelity();
    let mut jac = [0.0; PA_OUTPUTS * PA_INPUTS];
    assert_eq!(
        unsafe { pa_low_fidelity_jacobian(m, X.as_ptr(), jac.as_mut_ptr()) },
        PaStatus::Ok
    );
    let f = |x: &[f64; PA_INPUTS]| {
        let mut y = [0.0; PA_OUTPUTS];
        assert_eq!(
            unsafe { pa_model_predict(m, x.as_ptr(), 1, y.as_mut_ptr()) },
            PaStatus::Ok
        );
        y
    };
    for k in 0..PA_INPUTS {
        let h = 1e-6 * X[k].abs().max(1.0);
        let (mut p, mut q) = (X, X);
        p[k] += h;
        q[k] -= h;
        let (fp, fm) = (f(&p), f(&q));
        for i in 0..PA_OUTPUTS {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            let ad = jac[i * PA_INPUTS + k];
            assert!(
                (ad - fd).abs() <= 1e-4 * fd.abs().max(1e-3),
                "d out{i}/d in{k}: {ad} vs {fd}"
            );
        }
    }
    unsafe { pa_model_free(m) };
}

#[test]
fn null_and_invalid_arguments_report_status_and_message() {
    assert_eq!(
        unsafe { pa_model_new_low_fidelity(ptr::null_mut()) },
        PaStatus::NullPointer
    );
    assert!(last_error().contains("out"));

    let mut out = [0.0; PA_OUTPUTS];
    assert_eq!(
        unsafe { pa_model_predict(ptr::null(), X.as_ptr(), 1, out.as_mut_ptr()) },
        PaStatus::NullPointer
    );

    let m = low_fidelity();
    assert_eq!(last_error(), "");
    let bad = [f64::NAN; PA_INPUTS];
    assert_eq!(
        unsafe { pa_model_predict(m, bad.as_ptr(), 1, out.as_mut_ptr()) },
        PaStatus::InvalidArgument
    );
    assert!(last_error().contains("non-finite"));
    unsafe { pa_model_free(m) };
    unsafe { pa_model_free(ptr::null_mut()) };
}

#[test]
fn checkpoint_loading_reports_io_and_parse_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let missing = CString::new(dir.path().join("missing.json").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { pa_model_load_checkpoint(missing.as_ptr(), &mut m) },
        PaStatus::Io
    );
    assert!(m.is_null());

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { pa_model_load_checkpoint(garbage.as_ptr(), &mut m) },
        PaStatus::Parse
    );
    assert!(!last_error().is_empty());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lf.json");
    let lib = Model::low_fidelity(AircraftConfig::default()).unwrap();
    lib.checkpoint().save(&path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { pa_model_load_checkpoint(c_path.as_ptr(), &mut m) },
        PaStatus::Ok,
        "{}",
        last_error()
    );
    let mut out = [0.0; PA_OUTPUTS];
    assert_eq!(
        unsafe { pa_model_predict(m, X.as_ptr(), 1, out.as_mut_ptr()) },
        PaStatus::Ok
    );
    let want = lib
        .predict(&FlightState::from_array(X))
        .unwrap()
        .coefficients
        .to_array();
    assert_eq!(out, want);
    unsafe { pa_model_free(m) };
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/piml_aero.h"))
            .unwrap();
    for name in [
        "pa_model_new_low_fidelity",
        "pa_model_load_checkpoint",
        "pa_model_predict",
        "pa_low_fidelity_jacobian",
        "pa_model_kind",
        "pa_model_free",
        "pa_last_error",
        "pa_version",
        "typedef struct PaModel PaModel",
        "PA_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let v = unsafe { CStr::from_ptr(pa_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
