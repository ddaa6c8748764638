//! Model checkpoints as pretty-printed JSON.
//!
//! Floats are written in shortest round-trip form, so a load reproduces every
//! weight bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AircraftConfig;
use crate::nn::{Mlp, Scaler};
use crate::piml::{ModelKind, TrainConfig, TransferConstants};

/// Tag written into every checkpoint file.
pub const FORMAT: &str = "piml-aero-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild a model for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub aircraft: AircraftConfig,
    pub constants: TransferConstants,
    pub input_scaler: Option<Scaler>,
    pub target_scaler: Option<Scaler>,
    /// PIML-A transfer network (7 → 9).
    pub transfer: Option<Mlp>,
    /// PIML-A output correction (11 → 4) or PIML-B induced-velocity correction (13 → 6).
    pub correction: Option<Mlp>,
    /// Pure-ANN regressor (7 → 4).
    pub regressor: Option<Mlp>,
    pub training: Option<TrainConfig>,
    pub summary: Option<TrainSummary>,
}

/// Where training stopped and the losses of the restored parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, aircraft: AircraftConfig) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            kind,
            aircraft,
            constants: TransferConstants::default(),
            input_scaler: None,
            target_scaler: None,
            transfer: None,
            correction: None,
            regressor: None,
            training: None,
            summary: None,
        }
    }

    /// Checks the tag, network presence and shapes against the kind.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {} v{}",
                self.format, self.version
            )));
        }
        self.aircraft.validate()?;
        let need = |net: &Option<Mlp>, role: &str, inputs: usize, outputs: usize| -> Result<()> {
            let net = net.as_ref().ok_or_else(|| {
                Error::Config(format!("{} checkpoint lacks the {role} network", self.kind))
            })?;
            net.validate()?;
            if net.inputs() != inputs || net.outputs() != outputs {
                return Err(Error::Config(format!(
                    "{role} network is {}→{}, expected {inputs}→{outputs}",
                    net.inputs(),
                    net.outputs()
                )));
            }
            Ok(())
        };
        let scalers = |inputs: usize| -> Result<()> {
            match (&self.input_scaler, &self.target_scaler) {
                (Some(x), Some(y)) if x.dim() == inputs && y.dim() == 4 => Ok(()),
                _ => Err(Error::Config(format!(
                    "{} checkpoint has missing or mis-sized scalers",
                    self.kind
                ))),
            }
        };
        match self.kind {
            ModelKind::LowFidelity => Ok(()),
            ModelKind::PimlA => {
                scalers(7)?;
                need(&self.transfer, "transfer", 7, 9)?;
                need(&self.correction, "correction", 11, 4)
            }
            ModelKind::PimlB => {
                scalers(13)?;
                need(&self.correction, "correction", 13, 6)
            }
            ModelKind::PureAnn => {
                scalers(7)?;
                need(&self.regressor, "regressor", 7, 4)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
