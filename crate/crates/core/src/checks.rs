//! Finite-difference checks of the composed gradients.

use crate::autodiff::{compare, GradCheck, Tape};
use crate::error::{Error, Result};
use crate::flight::{AeroCoefficients, FlightState, Sample, INPUT_NAMES};
use crate::geometry::AircraftConfig;
use crate::physics::Aircraft;
use crate::piml::{mse_loss, Model, ModelKind, TrainConfig};

/// Default pass bar for physics-composed gradients.
pub const PHYSICS_TOLERANCE: f64 = 1e-4;
/// Pass bar for pure network paths.
pub const NN_TOLERANCE: f64 = 1e-6;

/// Operating point of the pipeline checks: mid-envelope, asymmetric tips.
pub const CHECK_POINT: [f64; 7] = [24.0, 6.0, 7200.0, 5400.0, 25.0, 47.0, 4.0];

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub result: GradCheck,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.result.passed(self.threshold)
    }
}

/// Every check name, pipeline inputs first.
pub fn check_names() -> Vec<String> {
    INPUT_NAMES
        .iter()
        .map(|n| format!("pipeline-{}", n.replace('_', "-")))
        .chain(["loss-ann", "loss-piml-a", "loss-piml-b"].map(String::from))
        .collect()
}

/// Runs one named check. `threshold` overrides the default bar.
pub fn run_check(aircraft: &Aircraft, name: &str, threshold: Option<f64>) -> Result<CheckResult> {
    let (result, default) = if let Some(input) = name.strip_prefix("pipeline-") {
        let k = INPUT_NAMES
            .iter()
            .position(|n| n.replace('_', "-") == input)
            .ok_or_else(|| unknown(name))?;
        (
            pipeline_input_check(aircraft, &CHECK_POINT, k)?,
            PHYSICS_TOLERANCE,
        )
    } else {
        let kind = match name {
            "loss-ann" => ModelKind::PureAnn,
            "loss-piml-a" => ModelKind::PimlA,
            "loss-piml-b" => ModelKind::PimlB,
            _ => return Err(unknown(name)),
        };
        let tol = if kind == ModelKind::PureAnn {
            NN_TOLERANCE
        } else {
            PHYSICS_TOLERANCE
        };
        (loss_weight_check(&aircraft.config, kind)?, tol)
    };
    Ok(CheckResult {
        name: name.to_string(),
        result,
        threshold: threshold.unwrap_or(default),
    })
}

fn unknown(name: &str) -> Error {
    Error::InvalidArgument(format!(
        "unknown check `{name}` (known: {})",
        check_names().join(", ")
    ))
}

/// `∂(C_L, C_D, C_l, C_m)/∂x_k` of the low-fidelity pipeline against central
/// differences with step `1e-6 · max(1, |x_k|)`.
pub fn pipeline_input_check(aircraft: &Aircraft, x0: &[f64; 7], k: usize) -> Result<GradCheck> {
    let mut t = Tape::new();
    let x = t.vars(x0);
    let (out, _) = aircraft.record_lf(&mut t, &x)?;
    let jac = t.jacobian(out, &[x[k]]);
    let h = 1e-6 * x0[k].abs().max(1.0);
    let eval = |v: f64| -> Result<[f64; 4]> {
        let mut p = *x0;
        p[k] = v;
        Ok(aircraft
            .lf_forward(&FlightState::from_array(p))?
            .coefficients
            .to_array())
    };
    let (fp, fm) = (eval(x0[k] + h)?, eval(x0[k] - h)?);
    let numeric = (0..4).map(|i| (fp[i] - fm[i]) / (2.0 * h)).collect();
    Ok(compare(jac, numeric))
}

/// Two labelled samples used by the weight checks.
pub fn check_samples(aircraft: &Aircraft) -> Result<Vec<Sample>> {
    [
        [25.0, 4.0, 7000.0, 5000.0, 20.0, 40.0, 3.0],
        [12.0, -6.0, 5200.0, 8800.0, 75.0, 60.0, -8.0],
    ]
    .iter()
    .map(|x| {
        let f = FlightState::from_array(*x);
        let c = aircraft.lf_forward(&f)?.coefficients.to_array();
        Ok(Sample {
            flight: f,
            target: AeroCoefficients::from_array([0.9 * c[0], c[1] + 0.03, c[2], c[3] - 0.02]),
        })
    })
    .collect()
}

/// `∂L/∂W` for every weight of a 2 × 8 network of the given kind on a
/// 2-sample batch, against central differences with step `1e-6`.
pub fn loss_weight_check(config: &AircraftConfig, kind: ModelKind) -> Result<GradCheck> {
    let cfg = TrainConfig {
        hidden_width: Some(8),
        hidden_depth: Some(2),
        seed: 3,
        ..TrainConfig::default()
    };
    let base = Model::low_fidelity(config.clone())?;
    let samples = check_samples(base.aircraft())?;
    let mut model = Model::initialize(kind, config.clone(), &samples, &cfg)?;
    // Move off the zero heads so every weight carries gradient.
    let p0: Vec<f64> = model
        .params()
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.05 * (((i * 7919) % 13) as f64 / 6.0 - 1.0))
        .collect();
    model.set_params(&p0)?;
    let ys = model
        .checkpoint()
        .target_scaler
        .clone()
        .expect("trainable model");
    let rows: Vec<[f64; 4]> = samples.iter().map(|s| s.target.to_array()).collect();
    let targets = ys.transform_batch(&rows);
    let batch = model.prepare(&samples.iter().map(|s| s.flight).collect::<Vec<_>>())?;

    let mut tape = Tape::new();
    let rec = model.record(&mut tape, &batch, true)?;
    let loss = mse_loss(&mut tape, rec.output, &targets, &ys)?;
    let g = tape.backward(loss)?;
    let analytic: Vec<f64> = rec.nets.iter().flat_map(|v| v.gradient(&g)).collect();

    let mut probe = model.clone();
    let mut loss_at = |p: &[f64]| -> Result<f64> {
        probe.set_params(p)?;
        let mut t = Tape::no_grad();
        let r = probe.record(&mut t, &batch, false)?;
        let l = mse_loss(&mut t, r.output, &targets, &ys)?;
        Ok(t.scalar(l))
    };
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(p0.len());
    let mut p = p0.clone();
    for i in 0..p0.len() {
        p[i] = p0[i] + h;
        let fp = loss_at(&p)?;
        p[i] = p0[i] - h;
        let fm = loss_at(&p)?;
        p[i] = p0[i];
        numeric.push((fp - fm) / (2.0 * h));
    }
    Ok(compare(analytic, numeric))
}
