//! The four comparable models, their shared loss, training and evaluation.
//!
//! * Low fidelity: BEM → wash → VLM, no learned parts.
//! * PIML-A: a transfer network shifts `(v, α, θ_elev)` and supplies six
//!   group-level induced velocities that replace the BEM solve; a correction
//!   network adds to the VLM outputs.
//! * PIML-B: BEM as in the low-fidelity model plus a network adding bounded
//!   signed corrections to the group induced velocities.
//! * Pure ANN: direct `7 → 4` regression.
//!
//! Physics blocks run on a private tape per sample. Their `4 × k` Jacobians
//! enter the batch tape as one custom node, so `∂L/∂W` is the network
//! backward pass applied to `∂L/∂y · ∂y/∂(physics inputs)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Partials, Tape, Var};
use crate::checkpoint::{Checkpoint, TrainSummary};
use crate::error::{Error, Result};
use crate::flight::{AeroCoefficients, FlightState, Sample};
use crate::geometry::AircraftConfig;
use crate::nn::{Adam, Mlp, MlpVars, Scaler};
use crate::physics::{Aircraft, PimlBCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "low-fidelity")]
    LowFidelity,
    #[serde(rename = "piml-a")]
    PimlA,
    #[serde(rename = "piml-b")]
    PimlB,
    #[serde(rename = "ann")]
    PureAnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LowFidelity,
        ModelKind::PureAnn,
        ModelKind::PimlA,
        ModelKind::PimlB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LowFidelity => "low-fidelity",
            ModelKind::PimlA => "piml-a",
            ModelKind::PimlB => "piml-b",
            ModelKind::PureAnn => "ann",
        }
    }

    pub fn trainable(self) -> bool {
        self != ModelKind::LowFidelity
    }

    /// Network input width: raw inputs, plus BEM group means for PIML-B.
    pub fn feature_dim(self) -> usize {
        match self {
            ModelKind::PimlB => 13,
            _ => 7,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low-fidelity" | "lf" => Ok(ModelKind::LowFidelity),
            "piml-a" => Ok(ModelKind::PimlA),
            "piml-b" => Ok(ModelKind::PimlB),
            "ann" | "pure-ann" => Ok(ModelKind::PureAnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown model `{other}` (expected low-fidelity, piml-a, piml-b or ann)"
            ))),
        }
    }
}

/// Maps raw network outputs to physics inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConstants {
    /// PIML-A shift per unit output for `v` [m/s], `α` and `θ_elev` [deg].
    pub shift_scale: f64,
    /// PIML-A axial induced magnitude = `axial_scale · softplus(output)` [m/s].
    pub axial_scale: f64,
    /// PIML-A tangential induced magnitude = `tangential_scale · softplus(output)` [m/s].
    pub tangential_scale: f64,
    /// PIML-B correction = `correction_bound · tanh(output)` [m/s].
    pub correction_bound: f64,
}

impl Default for TransferConstants {
    fn default() -> Self {
        TransferConstants {
            shift_scale: 5.0,
            axial_scale: 15.0,
            tangential_scale: 3.0,
            correction_bound: 10.0,
        }
    }
}

impl TransferConstants {
    /// Transfer parameters `(v′, α′, θ′_elev, v_a,s, v_t,s, v_a,p, v_t,p, v_a,h, v_t,h)`
    /// and their derivatives with respect to the raw outputs.
    pub fn transfer(&self, flight: &FlightState, raw: &[f64; 9]) -> ([f64; 9], [f64; 9]) {
        let base = [flight.v, flight.alpha, flight.theta_elev];
        let mut p = [0.0; 9];
        let mut d = [0.0; 9];
        for k in 0..3 {
            p[k] = base[k] + self.shift_scale * raw[k];
            d[k] = self.shift_scale;
        }
        for k in 3..9 {
            let sc = if k % 2 == 1 {
                self.axial_scale
            } else {
                self.tangential_scale
            };
            p[k] = sc * softplus(raw[k]);
            d[k] = sc * sigmoid(raw[k]);
        }
        (p, d)
    }
}

/// Training hyperparameters. Missing hidden sizes default per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub patience: usize,
    pub seed: u64,
    pub hidden_width: Option<usize>,
    pub hidden_depth: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            max_epochs: 10_000,
            decay_every: 2000,
            decay_factor: 0.5,
            patience: 500,
            seed: 0,
            hidden_width: None,
            hidden_depth: None,
        }
    }
}

impl TrainConfig {
    /// `(width, depth)` of the hidden stack.
    pub fn architecture(&self, kind: ModelKind) -> (usize, usize) {
        let (w, d) = match kind {
            ModelKind::PureAnn => (150, 4),
            _ => (200, 6),
        };
        (
            self.hidden_width.unwrap_or(w),
            self.hidden_depth.unwrap_or(d),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs must be at least 1".into(),
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

/// A batch prepared for recording: flights, scaled features (`dim × B`,
/// feature-major) and, for PIML-B, per-sample BEM caches.
#[derive(Debug, Clone)]
pub struct Batch {
    pub flights: Vec<FlightState>,
    features: Vec<f64>,
    caches: Vec<PimlBCache>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.flights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flights.is_empty()
    }
}

/// Result of recording a model on a tape.
#[derive(Debug)]
pub struct Recorded {
    /// Raw-unit predictions, `4 × B`.
    pub output: Var,
    /// Trainable networks in [`Model::params`] order.
    pub nets: Vec<MlpVars>,
    /// PIML-A output corrections (`4 × B`) or PIML-B induced-velocity
    /// corrections (`6 × B`), feature-major.
    pub corrections: Option<Vec<f64>>,
}

/// One prediction with solver metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub coefficients: AeroCoefficients,
    /// False when a BEM solve behind the prediction hit its iteration cap.
    pub converged: bool,
}

/// A model ready for inference or training.
#[derive(Debug, Clone)]
pub struct Model {
    ckpt: Checkpoint,
    aircraft: Aircraft,
}

impl Model {
    pub fn low_fidelity(config: AircraftConfig) -> Result<Self> {
        let aircraft = Aircraft::new(config.clone())?;
        Ok(Model {
            ckpt: Checkpoint::new(ModelKind::LowFidelity, config),
            aircraft,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.validate()?;
        let aircraft = Aircraft::new(ckpt.aircraft.clone())?;
        Ok(Model { ckpt, aircraft })
    }

    /// Fresh networks with scalers fitted on `train`. Output heads of the
    /// PIML networks and of the ANN start at zero.
    pub fn initialize(
        kind: ModelKind,
        config: AircraftConfig,
        train: &[Sample],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut model = Model::low_fidelity(config)?;
        model.ckpt.kind = kind;
        if kind == ModelKind::LowFidelity {
            return Ok(model);
        }
        let flights: Vec<FlightState> = train.iter().map(|s| s.flight).collect();
        let caches = model.caches(&flights)?;
        let features: Vec<Vec<f64>> = flights
            .iter()
            .enumerate()
            .map(|(i, f)| model.raw_features(f, caches.get(i)))
            .collect();
        let targets: Vec<[f64; 4]> = train.iter().map(|s| s.target.to_array()).collect();
        model.ckpt.input_scaler = Some(Scaler::fit(&features)?);
        model.ckpt.target_scaler = Some(Scaler::fit(&targets)?);
        let (w, d) = cfg.architecture(kind);
        let s = cfg.seed;
        match kind {
            ModelKind::PimlA => {
                model.ckpt.transfer = Some(Mlp::uniform(7, w, d, 9, s)?.zero_head());
                model.ckpt.correction =
                    Some(Mlp::uniform(11, w, d, 4, s.wrapping_add(1))?.zero_head());
            }
            ModelKind::PimlB => {
                model.ckpt.correction = Some(Mlp::uniform(13, w, d, 6, s)?.zero_head());
            }
            ModelKind::PureAnn => {
                model.ckpt.regressor = Some(Mlp::uniform(7, w, d, 4, s)?.zero_head());
            }
            ModelKind::LowFidelity => unreachable!(),
        }
        model.ckpt.training = Some(cfg.clone());
        model.ckpt.validate()?;
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.ckpt.kind
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    pub fn aircraft(&self) -> &Aircraft {
        &self.aircraft
    }

    fn nets(&self) -> Vec<&Mlp> {
        let c = &self.ckpt;
        [&c.transfer, &c.correction, &c.regressor]
            .into_iter()
            .flatten()
            .collect()
    }

    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        let c = &mut self.ckpt;
        [&mut c.transfer, &mut c.correction, &mut c.regressor]
            .into_iter()
            .flatten()
            .collect()
    }

    /// All trainable parameters, network by network.
    pub fn params(&self) -> Vec<f64> {
        self.nets().iter().flat_map(|n| n.params()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let total: usize = self.nets().iter().map(|n| n.num_params()).sum();
        if p.len() != total {
            return Err(Error::Dimension {
                context: "Model::set_params",
                expected: total,
                got: p.len(),
            });
        }
        let mut off = 0;
        for net in self.nets_mut() {
            let n = net.num_params();
            net.set_params(&p[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    fn scalers(&self) -> (&Scaler, &Scaler) {
        (
            self.ckpt.input_scaler.as_ref().expect("validated scalers"),
            self.ckpt.target_scaler.as_ref().expect("validated scalers"),
        )
    }

    fn caches(&self, flights: &[FlightState]) -> Result<Vec<PimlBCache>> {
        if self.kind() != ModelKind::PimlB {
            return Ok(Vec::new());
        }
        flights
            .par_iter()
            .map(|f| self.aircraft.piml_b_cache(f))
            .collect()
    }

    fn raw_features(&self, flight: &FlightState, cache: Option<&PimlBCache>) -> Vec<f64> {
        let mut x = flight.to_array().to_vec();
        if let Some(c) = cache {
            x.extend(c.group_means(&self.aircraft));
        }
        x
    }

    pub fn prepare(&self, flights: &[FlightState]) -> Result<Batch> {
        let caches = self.caches(flights)?;
        let features = match &self.ckpt.input_scaler {
            Some(s) => {
                let rows: Vec<Vec<f64>> = flights
                    .iter()
                    .enumerate()
                    .map(|(i, f)| self.raw_features(f, caches.get(i)))
                    .collect();
                s.transform_batch(&rows)
            }
            None => Vec::new(),
        };
        Ok(Batch {
            flights: flights.to_vec(),
            features,
            caches,
        })
    }

    /// Records the batch forward pass. With `trainable`, network parameters
    /// are tape leaves.
    pub fn record(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<Recorded> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        match self.kind() {
            ModelKind::LowFidelity => self.record_lf(tape, batch),
            ModelKind::PimlA => self.record_piml_a(tape, batch, trainable),
            ModelKind::PimlB => self.record_piml_b(tape, batch, trainable),
            ModelKind::PureAnn => self.record_ann(tape, batch, trainable),
        }
    }

    fn record_lf(&self, tape: &mut Tape, batch: &Batch) -> Result<Recorded> {
        let b = batch.len();
        let outs: Vec<_> = batch
            .flights
            .par_iter()
            .map(|f| self.aircraft.lf_forward(f))
            .collect::<Result<_>>()?;
        let mut value = vec![0.0; 4 * b];
        for (j, o) in outs.iter().enumerate() {
            for (k, c) in o.coefficients.to_array().into_iter().enumerate() {
                value[k * b + j] = c;
            }
        }
        Ok(Recorded {
            output: tape.constant_tensor(value, 4, b),
            nets: Vec::new(),
            corrections: None,
        })
    }

    fn record_ann(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<Recorded> {
        let (_, ys) = self.scalers();
        let net = self.ckpt.regressor.as_ref().expect("validated regressor");
        let x = tape.constant_tensor(batch.features.clone(), 7, batch.len());
        let (o, vars) = net.record(tape, x, trainable)?;
        Ok(Recorded {
            output: tape.row_affine(o, &ys.std, &ys.mean),
            nets: vec![vars],
            corrections: None,
        })
    }

    /// Physics values and, when `grad`, the row-major `4 × 9` Jacobian with
    /// respect to the transfer parameters.
    fn piml_a_block(
        &self,
        flight: &FlightState,
        p: &[f64; 9],
        grad: bool,
    ) -> Result<([f64; 4], Vec<f64>)> {
        let mut t = if grad { Tape::new() } else { Tape::no_grad() };
        let s = [t.var(p[0]), t.var(p[1]), t.var(p[2])];
        let m = t.var_tensor(p[3..].to_vec(), 6, 1);
        let out = self.aircraft.record_piml_a(&mut t, flight, s, m)?;
        let y = t.value(out).try_into().expect("4 outputs");
        let jac = if grad {
            t.jacobian(out, &[s[0], s[1], s[2], m])
        } else {
            Vec::new()
        };
        Ok((y, jac))
    }

    fn record_piml_a(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<Recorded> {
        let b = batch.len();
        let (_, ys) = self.scalers();
        let transfer = self.ckpt.transfer.as_ref().expect("validated transfer");
        let correction = self.ckpt.correction.as_ref().expect("validated correction");
        let consts = self.ckpt.constants;

        let x = tape.constant_tensor(batch.features.clone(), 7, b);
        let (t, tvars) = transfer.record(tape, x, trainable)?;
        let raw = tape.value(t).to_vec();
        let grad = tape.grad_enabled() && tape.requires_grad(t);
        let blocks: Vec<_> = (0..b)
            .into_par_iter()
            .map(|j| {
                let f = &batch.flights[j];
                let r: [f64; 9] = std::array::from_fn(|k| raw[k * b + j]);
                let (p, dp) = consts.transfer(f, &r);
                self.piml_a_block(f, &p, grad).map(|(y, jac)| (y, jac, dp))
            })
            .collect::<Result<_>>()?;
        let mut value = vec![0.0; 4 * b];
        let mut partials = Vec::with_capacity(if grad { 36 * b } else { 0 });
        for (j, (y, jac, dp)) in blocks.iter().enumerate() {
            for k in 0..4 {
                value[k * b + j] = y[k];
                if grad {
                    for i in 0..9 {
                        partials.push((
                            (k * b + j) as u32,
                            (i * b + j) as u32,
                            jac[k * 9 + i] * dp[i],
                        ));
                    }
                }
            }
        }
        let vlm = tape.custom(value, 4, b, vec![(t, Partials::Sparse(partials))]);

        let inv: Vec<f64> = ys.std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = ys.mean.iter().zip(&ys.std).map(|(m, s)| -m / s).collect();
        let vlm_scaled = tape.row_affine(vlm, &inv, &shift);
        let stacked = tape.concat(&[x, vlm_scaled]);
        let idx: Vec<usize> = (0..11 * b).collect();
        let inputs = tape.gather(stacked, &idx, 11, b);
        let (c, cvars) = correction.record(tape, inputs, trainable)?;
        let c_raw = tape.row_affine(c, &ys.std, &[0.0; 4]);
        let corrections = tape.value(c_raw).to_vec();
        Ok(Recorded {
            output: tape.add(vlm, c_raw),
            nets: vec![tvars, cvars],
            corrections: Some(corrections),
        })
    }

    fn piml_b_block(
        &self,
        cache: &PimlBCache,
        delta: &[f64; 6],
        grad: bool,
    ) -> Result<([f64; 4], Vec<f64>)> {
        let mut t = if grad { Tape::new() } else { Tape::no_grad() };
        let d = t.var_tensor(delta.to_vec(), 6, 1);
        let out = self.aircraft.record_piml_b(&mut t, cache, d)?;
        let y = t.value(out).try_into().expect("4 outputs");
        let jac = if grad {
            t.jacobian(out, &[d])
        } else {
            Vec::new()
        };
        Ok((y, jac))
    }

    fn record_piml_b(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<Recorded> {
        let b = batch.len();
        let net = self.ckpt.correction.as_ref().expect("validated correction");
        let bound = self.ckpt.constants.correction_bound;
        let x = tape.constant_tensor(batch.features.clone(), 13, b);
        let (d, vars) = net.record(tape, x, trainable)?;
        let raw = tape.value(d).to_vec();
        let grad = tape.grad_enabled() && tape.requires_grad(d);
        let blocks: Vec<_> = (0..b)
            .into_par_iter()
            .map(|j| {
                let th: [f64; 6] = std::array::from_fn(|k| raw[k * b + j].tanh());
                let delta = th.map(|v| bound * v);
                self.piml_b_block(&batch.caches[j], &delta, grad)
                    .map(|(y, jac)| (y, jac, th, delta))
            })
            .collect::<Result<_>>()?;
        let mut value = vec![0.0; 4 * b];
        let mut corrections = vec![0.0; 6 * b];
        let mut partials = Vec::with_capacity(if grad { 24 * b } else { 0 });
        for (j, (y, jac, th, delta)) in blocks.iter().enumerate() {
            for i in 0..6 {
                corrections[i * b + j] = delta[i];
            }
            for k in 0..4 {
                value[k * b + j] = y[k];
                if grad {
                    for i in 0..6 {
                        let dd = bound * (1.0 - th[i] * th[i]);
                        partials.push((
                            (k * b + j) as u32,
                            (i * b + j) as u32,
                            jac[k * 6 + i] * dd,
                        ));
                    }
                }
            }
        }
        Ok(Recorded {
            output: tape.custom(value, 4, b, vec![(d, Partials::Sparse(partials))]),
            nets: vec![vars],
            corrections: Some(corrections),
        })
    }

    /// Predictions for many flights, evaluated as one batch.
    pub fn predict_many(&self, flights: &[FlightState]) -> Result<Vec<AeroCoefficients>> {
        if flights.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.prepare(flights)?;
        let mut tape = Tape::no_grad();
        let rec = self.record(&mut tape, &batch, false)?;
        Ok(unbatch(tape.value(rec.output), flights.len()))
    }

    /// One prediction. `converged` reflects the BEM solves of the low-fidelity
    /// and PIML-B models.
    pub fn predict(&self, flight: &FlightState) -> Result<Prediction> {
        if !flight.is_finite() {
            return Err(Error::InvalidArgument(
                "flight state has non-finite entries".into(),
            ));
        }
        match self.kind() {
            ModelKind::LowFidelity => {
                let o = self.aircraft.lf_forward(flight)?;
                Ok(Prediction {
                    coefficients: o.coefficients,
                    converged: o.converged,
                })
            }
            _ => {
                let batch = self.prepare(std::slice::from_ref(flight))?;
                let converged = batch
                    .caches
                    .iter()
                    .all(|c| c.bem.iter().all(|s| s.converged));
                let mut tape = Tape::no_grad();
                let rec = self.record(&mut tape, &batch, false)?;
                let c = AeroCoefficients::from_array(
                    tape.value(rec.output).try_into().expect("4 outputs"),
                );
                Ok(Prediction {
                    coefficients: c,
                    converged: converged && c.is_finite(),
                })
            }
        }
    }
}

/// Splits a `4 × B` feature-major buffer into per-sample coefficients.
fn unbatch(v: &[f64], b: usize) -> Vec<AeroCoefficients> {
    (0..b)
        .map(|j| AeroCoefficients::from_array(std::array::from_fn(|k| v[k * b + j])))
        .collect()
}

/// Mean squared error in scaled target space:
/// `(1/B) Σ_b ‖(y_b − μ)/σ − t_b‖² / 4`, where `target_scaled` is `4 × B`
/// feature-major.
pub fn mse_loss(tape: &mut Tape, pred: Var, target_scaled: &[f64], scaler: &Scaler) -> Result<Var> {
    let (rows, b) = tape.shape(pred);
    if b == 0 || rows == 0 {
        return Err(Error::Data("loss on an empty batch".into()));
    }
    if target_scaled.len() != rows * b || scaler.dim() != rows {
        return Err(Error::Dimension {
            context: "mse_loss",
            expected: rows * b,
            got: target_scaled.len(),
        });
    }
    let inv: Vec<f64> = scaler.std.iter().map(|s| 1.0 / s).collect();
    let shift: Vec<f64> = scaler
        .mean
        .iter()
        .zip(&scaler.std)
        .map(|(m, s)| -m / s)
        .collect();
    let scaled = tape.row_affine(pred, &inv, &shift);
    let t = tape.constant_tensor(target_scaled.to_vec(), rows, b);
    let diff = tape.sub(scaled, t);
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / (rows * b) as f64))
}

/// One row of the convergence history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub summary: TrainSummary,
}

/// Rejects empty or overlapping splits.
pub fn check_splits(train: &[Sample], val: &[Sample]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty splits (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }
    for v in val {
        if train.iter().any(|t| t.flight == v.flight) {
            return Err(Error::Data(format!(
                "flight condition {:?} appears in both training and validation splits",
                v.flight.to_array()
            )));
        }
    }
    Ok(())
}

fn targets_scaled(samples: &[Sample], scaler: &Scaler) -> Vec<f64> {
    let rows: Vec<[f64; 4]> = samples.iter().map(|s| s.target.to_array()).collect();
    scaler.transform_batch(&rows)
}

/// Full-batch Adam training with step decay, early stopping on validation
/// loss and restoration of the best validation parameters.
///
/// A non-finite loss or gradient aborts with [`Error::Diverged`] carrying the
/// best checkpoint seen so far.
pub fn train(
    kind: ModelKind,
    config: &AircraftConfig,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if !kind.trainable() {
        return Err(Error::InvalidArgument(
            "low-fidelity model has no trainable parameters".into(),
        ));
    }
    cfg.validate()?;
    check_splits(train, val)?;
    let mut model = Model::initialize(kind, config.clone(), train, cfg)?;
    let (_, ys) = model.scalers();
    let ys = ys.clone();
    let train_batch = model.prepare(&train.iter().map(|s| s.flight).collect::<Vec<_>>())?;
    let val_batch = model.prepare(&val.iter().map(|s| s.flight).collect::<Vec<_>>())?;
    let train_t = targets_scaled(train, &ys);
    let val_t = targets_scaled(val, &ys);

    let mut params = model.params();
    let mut adam = Adam::new(params.len(), cfg.lr).with_decay(cfg.decay_every, cfg.decay_factor);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, f64::NAN, params.clone());
    let start = Instant::now();

    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let rec = model.record(&mut tape, &train_batch, true)?;
        let loss = mse_loss(&mut tape, rec.output, &train_t, &ys)?;
        let train_loss = tape.scalar(loss);

        let mut vt = Tape::no_grad();
        let vrec = model.record(&mut vt, &val_batch, false)?;
        let vloss = mse_loss(&mut vt, vrec.output, &val_t, &ys)?;
        let val_loss = vt.scalar(vloss);

        let diverged = |message: String, best: &(f64, usize, f64, Vec<f64>)| -> Error {
            let mut last = model.clone();
            last.set_params(&best.3).expect("same shapes");
            Error::Diverged {
                epoch,
                message,
                last_good: Box::new(last.into_checkpoint()),
            }
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged(
                format!("loss is {train_loss} (validation {val_loss})"),
                &best,
            ));
        }
        let lr = adam.current_lr();
        history.push(HistoryRow {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, train_loss, params.clone());
        } else if epoch - best.1 >= cfg.patience {
            log::info!(
                "{kind}: early stop at epoch {epoch}, best validation loss {:.4e} at {}",
                best.0,
                best.1
            );
            break;
        }
        if epoch + 1 == cfg.max_epochs {
            break;
        }

        let g = tape.backward(loss)?;
        let grads: Vec<f64> = rec.nets.iter().flat_map(|v| v.gradient(&g)).collect();
        if let Err(e) = adam.update(&mut params, &grads) {
            return Err(diverged(e.to_string(), &best));
        }
        model.set_params(&params)?;
        if epoch % 500 == 0 {
            log::info!(
                "{kind}: epoch {epoch} train {train_loss:.4e} val {val_loss:.4e} lr {lr:.1e}"
            );
        }
    }

    model.set_params(&best.3)?;
    let summary = TrainSummary {
        epochs_run: history.len(),
        best_epoch: best.1,
        train_loss: best.2,
        val_loss: best.0,
        seconds: start.elapsed().as_secs_f64(),
    };
    model.ckpt.summary = Some(summary.clone());
    Ok(TrainOutcome {
        model,
        history,
        summary,
    })
}

/// Validation metrics of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub kind: ModelKind,
    /// Per-coefficient RMSE in raw units.
    pub rmse: [f64; 4],
    /// Signed errors `prediction − target` per sample.
    pub errors: Vec<[f64; 4]>,
    pub predictions: Vec<AeroCoefficients>,
    /// Mean wall time of a single-sample prediction.
    pub seconds_per_sample: f64,
}

impl Evaluation {
    /// Mean over coefficients of `rmse_k / scale_k`.
    pub fn aggregate(&self, scale: &[f64; 4]) -> f64 {
        self.rmse.iter().zip(scale).map(|(r, s)| r / s).sum::<f64>() / 4.0
    }
}

/// RMSE per coefficient and per-sample errors. Each sample is predicted on
/// its own so the timing reflects single-query inference.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    let start = Instant::now();
    for s in samples {
        predictions.push(model.predict(&s.flight)?.coefficients);
    }
    let seconds_per_sample = start.elapsed().as_secs_f64() / samples.len() as f64;
    let errors: Vec<[f64; 4]> = predictions
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let (p, t) = (p.to_array(), s.target.to_array());
            std::array::from_fn(|k| p[k] - t[k])
        })
        .collect();
    let n = samples.len() as f64;
    let rmse =
        std::array::from_fn(|k| (errors.iter().map(|e| e[k] * e[k]).sum::<f64>() / n).sqrt());
    Ok(Evaluation {
        kind: model.kind(),
        rmse,
        errors,
        predictions,
        seconds_per_sample,
    })
}

/// Per-sample corrections of a PIML model.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport {
    pub kind: ModelKind,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

/// Output corrections (PIML-A) or induced-velocity corrections (PIML-B).
pub fn correction_report(model: &Model, flights: &[FlightState]) -> Result<CorrectionReport> {
    let columns = match model.kind() {
        ModelKind::PimlA => vec!["dCL", "dCD", "dCl", "dCm"],
        ModelKind::PimlB => vec![
            "dva_star",
            "dvt_star",
            "dva_port",
            "dvt_port",
            "dva_hover",
            "dvt_hover",
        ],
        k => {
            return Err(Error::InvalidArgument(format!(
                "correction report needs piml-a or piml-b, got {k}"
            )))
        }
    };
    if flights.is_empty() {
        return Ok(CorrectionReport {
            kind: model.kind(),
            columns,
            rows: Vec::new(),
        });
    }
    let batch = model.prepare(flights)?;
    let mut tape = Tape::no_grad();
    let rec = model.record(&mut tape, &batch, false)?;
    let c = rec.corrections.expect("PIML models report corrections");
    let (m, b) = (columns.len(), flights.len());
    let rows = (0..b)
        .map(|j| (0..m).map(|k| c[k * b + j]).collect())
        .collect();
    Ok(CorrectionReport {
        kind: model.kind(),
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flights() -> Vec<FlightState> {
        vec![
            FlightState::from_array([25.0, 4.0, 7000.0, 5000.0, 20.0, 40.0, 3.0]),
            FlightState::from_array([12.0, -6.0, 5200.0, 8800.0, 75.0, 60.0, -8.0]),
            FlightState::from_array([38.0, 9.0, 9500.0, 9100.0, 5.0, 0.0, 10.0]),
        ]
    }

    fn samples(model: &Model) -> Vec<Sample> {
        flights()
            .into_iter()
            .map(|f| {
                let mut t = model
                    .aircraft()
                    .lf_forward(&f)
                    .unwrap()
                    .coefficients
                    .to_array();
                t[0] *= 0.9;
                t[1] += 0.03;
                Sample {
                    flight: f,
                    target: AeroCoefficients::from_array(t),
                }
            })
            .collect()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            hidden_width: Some(8),
            hidden_depth: Some(2),
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            let j = serde_json::to_string(&k).unwrap();
            assert_eq!(j, format!("\"{}\"", k.name()));
        }
        assert!("gp".parse::<ModelKind>().is_err());
    }

    #[test]
    fn mse_loss_hand_values() {
        let id = Scaler::identity(4);
        let mut t = Tape::no_grad();
        let p = t.constant_tensor(vec![1.0, 0.0, 0.0, 0.0], 4, 1);
        let l = mse_loss(&mut t, p, &[0.0; 4], &id).unwrap();
        assert_eq!(t.scalar(l), 0.25);
        // Two samples, residuals (1,0,0,0) and (0,2,0,0), feature-major.
        let p = t.constant_tensor(vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0], 4, 2);
        let l = mse_loss(&mut t, p, &[0.0; 8], &id).unwrap();
        assert_eq!(t.scalar(l), 0.625);
        let p = t.constant_tensor(vec![0.3; 8], 4, 2);
        let l = mse_loss(&mut t, p, &[0.3; 8], &id).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let e = t.constant_tensor(Vec::new(), 4, 0);
        assert!(mse_loss(&mut t, e, &[], &id).is_err());
    }

    #[test]
    fn zero_head_identities() {
        let lf = Model::low_fidelity(AircraftConfig::default()).unwrap();
        let train = samples(&lf);
        let b = Model::initialize(ModelKind::PimlB, AircraftConfig::default(), &train, &tiny())
            .unwrap();
        let a = Model::initialize(ModelKind::PimlA, AircraftConfig::default(), &train, &tiny())
            .unwrap();
        let ann = Model::initialize(
            ModelKind::PureAnn,
            AircraftConfig::default(),
            &train,
            &tiny(),
        )
        .unwrap();
        let c = a.checkpoint().constants;
        let (va, vt) = (
            c.axial_scale * std::f64::consts::LN_2,
            c.tangential_scale * std::f64::consts::LN_2,
        );
        for f in flights() {
            let want = lf.predict(&f).unwrap().coefficients.to_array();
            let got = b.predict(&f).unwrap().coefficients.to_array();
            for k in 0..4 {
                assert!((want[k] - got[k]).abs() <= 1e-12);
            }
            let mut t = Tape::no_grad();
            let s = [t.var(f.v), t.var(f.alpha), t.var(f.theta_elev)];
            let m = t.var_tensor(vec![va, vt, va, vt, va, vt], 6, 1);
            let out = a.aircraft().record_piml_a(&mut t, &f, s, m).unwrap();
            let got = a.predict(&f).unwrap().coefficients.to_array();
            for k in 0..4 {
                assert!((t.value(out)[k] - got[k]).abs() <= 1e-12);
            }
            let mean = ann
                .checkpoint()
                .target_scaler
                .as_ref()
                .unwrap()
                .mean
                .clone();
            assert_eq!(
                ann.predict(&f).unwrap().coefficients.to_array().to_vec(),
                mean
            );
        }
        let rep = correction_report(&a, &flights()).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().flatten().all(|&c| c == 0.0));
        let rep = correction_report(&b, &flights()).unwrap();
        assert!(rep.rows.iter().flatten().all(|&c| c == 0.0));
        assert!(correction_report(&lf, &flights()).is_err());
    }

    #[test]
    fn batched_and_single_predictions_agree() {
        let lf = Model::low_fidelity(AircraftConfig::default()).unwrap();
        let train = samples(&lf);
        for kind in [ModelKind::PimlA, ModelKind::PimlB, ModelKind::PureAnn] {
            let mut m =
                Model::initialize(kind, AircraftConfig::default(), &train, &tiny()).unwrap();
            let p: Vec<f64> = m
                .params()
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.01 * ((i % 7) as f64 - 3.0))
                .collect();
            m.set_params(&p).unwrap();
            let many = m.predict_many(&flights()).unwrap();
            for (f, c) in flights().iter().zip(&many) {
                let one = m.predict(f).unwrap().coefficients.to_array();
                for (a, b) in one.iter().zip(c.to_array()) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{kind}");
                }
            }
        }
    }

    /// `∂L/∂W` through the physics matches central differences on a
    /// 2-sample batch with a 2 × 8 net.
    #[test]
    fn loss_gradients_match_finite_differences() {
        for kind in [ModelKind::PimlA, ModelKind::PimlB, ModelKind::PureAnn] {
            let r = crate::checks::loss_weight_check(&AircraftConfig::default(), kind).unwrap();
            let tol = if kind == ModelKind::PureAnn {
                1e-6
            } else {
                1e-4
            };
            assert!(r.max_rel_error <= tol, "{kind}: {r:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let lf = Model::low_fidelity(AircraftConfig::default()).unwrap();
        let all = samples(&lf);
        let cfg = TrainConfig {
            max_epochs: 40,
            lr: 1e-2,
            ..tiny()
        };
        let run = || {
            train(
                ModelKind::PureAnn,
                &AircraftConfig::default(),
                &all[..2],
                &all[2..],
                &cfg,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        let strip = |h: &[HistoryRow]| {
            h.iter()
                .map(|r| (r.epoch, r.train_loss, r.val_loss, r.lr))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
        let first = a.history[0].train_loss;
        let best = a
            .history
            .iter()
            .map(|r| r.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.5 * first);
        assert_eq!(
            a.model.checkpoint().summary.as_ref().unwrap().epochs_run,
            a.history.len()
        );
    }

    #[test]
    fn split_and_kind_contracts() {
        let lf = Model::low_fidelity(AircraftConfig::default()).unwrap();
        let all = samples(&lf);
        let cfg = tiny();
        let overlap = train(
            ModelKind::PureAnn,
            &AircraftConfig::default(),
            &all,
            &all[..1],
            &cfg,
        );
        assert!(matches!(overlap, Err(Error::Data(_))));
        let e = train(
            ModelKind::LowFidelity,
            &AircraftConfig::default(),
            &all[..2],
            &all[2..],
            &cfg,
        )
        .unwrap_err();
        assert!(e.to_string().contains("no trainable parameters"));
        assert!(evaluate(&lf, &[]).is_err());
    }

    #[test]
    fn non_finite_loss_returns_last_good_checkpoint() {
        let lf = Model::low_fidelity(AircraftConfig::default()).unwrap();
        let mut all = samples(&lf);
        all[0].target.cd = f64::NAN;
        let e = train(
            ModelKind::PureAnn,
            &AircraftConfig::default(),
            &all[..2],
            &all[2..],
            &tiny(),
        )
        .unwrap_err();
        match e {
            Error::Diverged {
                epoch, last_good, ..
            } => {
                assert_eq!(epoch, 0);
                assert_eq!(last_good.kind, ModelKind::PureAnn);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn constant_predictor_rmse_is_target_std() {
        let lf = Model::low_fidelity(AircraftConfig::default()).unwrap();
        let all = samples(&lf);
        let ann = Model::initialize(ModelKind::PureAnn, AircraftConfig::default(), &all, &tiny())
            .unwrap();
        let ev = evaluate(&ann, &all).unwrap();
        let std = &ann.checkpoint().target_scaler.as_ref().unwrap().std;
        for k in 0..4 {
            assert!((ev.rmse[k] - std[k]).abs() <= 1e-12 * std[k].max(1e-12));
        }
        let ev = evaluate(&lf, &all).unwrap();
        assert!(ev.rmse[1] > 0.0);
    }
}
