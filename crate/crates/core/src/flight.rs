//! Flight condition shared by every model.

use serde::{Deserialize, Serialize};

/// Names of the seven sampled inputs, in feature order.
pub const INPUT_NAMES: [&str; 7] = [
    "v",
    "alpha",
    "omega_star",
    "omega_port",
    "theta_star",
    "theta_port",
    "theta_elev",
];

/// Names of the four outputs, in target order.
pub const OUTPUT_NAMES: [&str; 4] = ["CL", "CD", "Cl", "Cm"];

/// Hover quad-rotor speed used throughout the study [rpm].
pub const HOVER_RPM: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightState {
    /// Airspeed [m/s].
    pub v: f64,
    /// Angle of attack [deg].
    pub alpha: f64,
    /// Tip-rotor speeds [rpm].
    pub omega_star: f64,
    pub omega_port: f64,
    /// Tip-rotor tilt [deg]: 0 cruise, 90 hover.
    pub theta_star: f64,
    pub theta_port: f64,
    /// Elevator deflection [deg], trailing edge down positive.
    pub theta_elev: f64,
    /// Sideslip [deg]; carried for completeness, fixed at 0 in the study.
    #[serde(default)]
    pub beta: f64,
}

impl FlightState {
    pub fn from_array(x: [f64; 7]) -> Self {
        FlightState {
            v: x[0],
            alpha: x[1],
            omega_star: x[2],
            omega_port: x[3],
            theta_star: x[4],
            theta_port: x[5],
            theta_elev: x[6],
            beta: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.v,
            self.alpha,
            self.omega_star,
            self.omega_port,
            self.theta_star,
            self.theta_port,
            self.theta_elev,
        ]
    }

    /// Left/right swap of the tip-rotor commands.
    pub fn mirrored(&self) -> Self {
        FlightState {
            omega_star: self.omega_port,
            omega_port: self.omega_star,
            theta_star: self.theta_port,
            theta_port: self.theta_star,
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Aerodynamic force and moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AeroCoefficients {
    #[serde(rename = "CL")]
    pub cl: f64,
    #[serde(rename = "CD")]
    pub cd: f64,
    /// Rolling moment.
    #[serde(rename = "Cl")]
    pub c_roll: f64,
    /// Pitching moment.
    #[serde(rename = "Cm")]
    pub cm: f64,
}

impl AeroCoefficients {
    pub fn from_array(x: [f64; 4]) -> Self {
        AeroCoefficients {
            cl: x[0],
            cd: x[1],
            c_roll: x[2],
            cm: x[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cl, self.cd, self.c_roll, self.cm]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// One labelled flight condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub flight: FlightState,
    pub target: AeroCoefficients,
}
