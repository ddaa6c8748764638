//! C ABI over the piml-aero models.
//!
//! Handles are opaque and owned by the caller until passed to
//! `pa_model_free`. Every fallible call returns a `PaStatus`; on failure the
//! message is kept per thread and read with `pa_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use piml_aero::autodiff::Tape;
use piml_aero::checkpoint::Checkpoint;
use piml_aero::flight::FlightState;
use piml_aero::geometry::AircraftConfig;
use piml_aero::piml::{Model, ModelKind};
use piml_aero::Error;

/// Number of flight-state inputs `(v, α, rpm_tip, rpm_hover, θ_star, θ_port, θ_elev)`.
pub const PA_INPUTS: usize = 7;
/// Number of outputs `(C_L, C_D, C_l, C_m)`.
pub const PA_OUTPUTS: usize = 4;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaModelKind {
    LowFidelity = 0,
    PimlA = 1,
    PimlB = 2,
    PureAnn = 3,
}

impl From<ModelKind> for PaModelKind {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::LowFidelity => PaModelKind::LowFidelity,
            ModelKind::PimlA => PaModelKind::PimlA,
            ModelKind::PimlB => PaModelKind::PimlB,
            ModelKind::PureAnn => PaModelKind::PureAnn,
        }
    }
}

/// Opaque model handle.
pub struct PaModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> PaStatus {
    match err {
        Error::InvalidArgument(_) | Error::Dimension { .. } | Error::Config(_) => {
            PaStatus::InvalidArgument
        }
        Error::Io { .. } => PaStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Data(_) => PaStatus::Parse,
        _ => PaStatus::Numerical,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), (PaStatus, String)>) -> PaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside piml-aero");
            PaStatus::Panic
        }
    }
}

fn core(err: Error) -> (PaStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (PaStatus, String) {
    (PaStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn model_ref<'a>(model: *const PaModel) -> Result<&'a Model, (PaStatus, String)> {
    // SAFETY: non-null handles come from `pa_model_*` constructors.
    unsafe { model.as_ref() }
        .map(|m| &m.model)
        .ok_or_else(|| null("model"))
}

unsafe fn flight_at(inputs: *const f64) -> Result<FlightState, (PaStatus, String)> {
    if inputs.is_null() {
        return Err(null("inputs"));
    }
    let mut x = [0.0; PA_INPUTS];
    // SAFETY: caller provides PA_INPUTS readable doubles.
    unsafe { ptr::copy_nonoverlapping(inputs, x.as_mut_ptr(), PA_INPUTS) };
    if x.iter().any(|v| !v.is_finite()) {
        return Err((
            PaStatus::InvalidArgument,
            "flight state has non-finite entries".into(),
        ));
    }
    Ok(FlightState::from_array(x))
}

unsafe fn emit(out: *mut *mut PaModel, model: Model) -> Result<(), (PaStatus, String)> {
    let handle = Box::into_raw(Box::new(PaModel { model }));
    // SAFETY: `out` checked non-null by the caller of `emit`.
    unsafe { *out = handle };
    Ok(())
}

/// Creates the low-fidelity model on the default aircraft.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pa_model_new_low_fidelity(out: *mut *mut PaModel) -> PaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = Model::low_fidelity(AircraftConfig::default()).map_err(core)?;
        unsafe { emit(out, model) }
    })
}

/// Loads a trained checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pa_model_load_checkpoint(
    path: *const c_char,
    out: *mut *mut PaModel,
) -> PaStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller provides a NUL-terminated string.
        let path = unsafe { CStr::from_ptr(path) }.to_str().map_err(|_| {
            (
                PaStatus::InvalidArgument,
                "path is not valid UTF-8".to_string(),
            )
        })?;
        let ckpt = Checkpoint::load(path).map_err(core)?;
        let model = Model::from_checkpoint(ckpt).map_err(core)?;
        unsafe { emit(out, model) }
    })
}

/// Predicts `(C_L, C_D, C_l, C_m)` for `n` flight states stored row by row
/// in `inputs` (`n × PA_INPUTS`), writing `n × PA_OUTPUTS` values to `outputs`.
///
/// # Safety
/// `model` must be a live handle; `inputs` and `outputs` must hold `n` rows.
#[no_mangle]
pub unsafe extern "C" fn pa_model_predict(
    model: *const PaModel,
    inputs: *const f64,
    n: usize,
    outputs: *mut f64,
) -> PaStatus {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        if outputs.is_null() {
            return Err(null("outputs"));
        }
        if n == 0 {
            return Ok(());
        }
        let flights = (0..n)
            .map(|i| unsafe { flight_at(inputs.wrapping_add(i * PA_INPUTS)) })
            .collect::<Result<Vec<_>, _>>()?;
        let preds = model.predict_many(&flights).map_err(core)?;
        for (i, p) in preds.iter().enumerate() {
            let row = p.to_array();
            // SAFETY: caller provides n × PA_OUTPUTS writable doubles.
            unsafe {
                ptr::copy_nonoverlapping(row.as_ptr(), outputs.add(i * PA_OUTPUTS), PA_OUTPUTS)
            };
        }
        Ok(())
    })
}

/// Row-major `PA_OUTPUTS × PA_INPUTS` Jacobian of the low-fidelity pipeline
/// of the model's aircraft at one flight state.
///
/// # Safety
/// `model` must be a live handle; `inputs` must hold `PA_INPUTS` doubles and
/// `jacobian` room for `PA_OUTPUTS · PA_INPUTS`.
#[no_mangle]
pub unsafe extern "C" fn pa_low_fidelity_jacobian(
    model: *const PaModel,
    inputs: *const f64,
    jacobian: *mut f64,
) -> PaStatus {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        let flight = unsafe { flight_at(inputs) }?;
        if jacobian.is_null() {
            return Err(null("jacobian"));
        }
        let mut tape = Tape::new();
        let x = tape.vars(&flight.to_array());
        let (out, _) = model.aircraft().record_lf(&mut tape, &x).map_err(core)?;
        let jac = tape.jacobian(out, &x);
        debug_assert_eq!(jac.len(), PA_OUTPUTS * PA_INPUTS);
        // SAFETY: caller provides PA_OUTPUTS × PA_INPUTS writable doubles.
        unsafe { ptr::copy_nonoverlapping(jac.as_ptr(), jacobian, PA_OUTPUTS * PA_INPUTS) };
        Ok(())
    })
}

/// Writes the model kind to `kind`.
///
/// # Safety
/// `model` must be a live handle and `kind` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pa_model_kind(model: *const PaModel, kind: *mut PaModelKind) -> PaStatus {
    guard(|| {
        let model = unsafe { model_ref(model) }?;
        if kind.is_null() {
            return Err(null("kind"));
        }
        unsafe { *kind = model.kind().into() };
        Ok(())
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pa_model_free(model: *mut PaModel) {
    if !model.is_null() {
        // SAFETY: handles are created by Box::into_raw.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
