//! Low-fidelity blown-wing pipeline recorded on the autodiff tape.
//!
//! The pipeline is BEM per disc → slipstream wash at the control points and
//! bound midpoints → VLM. Three entry points share it:
//!
//! * [`Aircraft::record_lf`]: all seven flight inputs differentiable.
//! * [`Aircraft::record_piml_a`]: shifted flight condition plus six
//!   group-level induced-velocity magnitudes replace the BEM solve.
//! * [`Aircraft::record_piml_b`]: BEM at fixed inputs, with six signed
//!   group-level corrections added to every station before the wash mapping.
//!
//! Wash increments enter the tape as custom nodes whose local partials are
//! computed with forward-mode dual numbers.

use std::sync::Arc;

use crate::autodiff::{Dual, Partials, Real, Tape, Var};
use crate::bem::{
    axial_inflow, solve_bem_with, BemSolution, BladePolar, Slipstream, STATIC_INFLOW,
};
use crate::error::Result;
use crate::flight::{AeroCoefficients, FlightState, HOVER_RPM};
use crate::geometry::{build_mesh, tilt_axis, AircraftConfig, PanelMesh, PropGroup};
use crate::linalg::Lu;
use crate::vlm::{wind_direction, Reference, VlmModel, VlmVars, V3};

/// Propeller-model constants that distinguish physics variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropSettings {
    pub polar: BladePolar,
    /// Multiplier on the axial wash increment.
    pub wash_gain: f64,
    pub hover_rpm: f64,
}

impl Default for PropSettings {
    fn default() -> Self {
        PropSettings {
            polar: BladePolar::default(),
            wash_gain: 1.0,
            hover_rpm: HOVER_RPM,
        }
    }
}

/// Propeller increments at the control points and bound midpoints.
#[derive(Debug, Clone)]
pub struct Wash<R> {
    pub control: Vec<[R; 3]>,
    pub bound: Vec<[R; 3]>,
}

/// Outcome of one low-fidelity evaluation.
#[derive(Debug, Clone)]
pub struct LfOutput {
    pub coefficients: AeroCoefficients,
    /// Every BEM solve converged and every coefficient is finite.
    pub converged: bool,
    pub bem: Vec<BemSolution>,
}

/// Per-sample state reused across PIML-B training steps: BEM results and the
/// influence-matrix factorization at the sample's fixed inputs.
#[derive(Debug, Clone)]
pub struct PimlBCache {
    pub flight: FlightState,
    pub bem: Vec<BemSolution>,
    axes: Vec<V3>,
    norm_v: Vec<f64>,
    lu: Arc<Lu>,
}

impl PimlBCache {
    /// Group means of the BEM axial and tangential induced velocities, in
    /// transfer-parameter order.
    pub fn group_means(&self, aircraft: &Aircraft) -> [f64; 6] {
        let mut sum = [0.0; 6];
        let mut count = [0usize; 3];
        for (disc, sol) in aircraft.config.propellers.iter().zip(&self.bem) {
            let g = disc.group.index();
            let ns = sol.va.len() as f64;
            sum[2 * g] += sol.va.iter().sum::<f64>() / ns;
            sum[2 * g + 1] += sol.vt.iter().sum::<f64>() / ns;
            count[g] += 1;
        }
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = sum[k] / count[k / 2] as f64;
        }
        out
    }
}

/// The aircraft's low-fidelity physics: configuration, mesh and VLM operator.
#[derive(Debug, Clone)]
pub struct Aircraft {
    pub config: AircraftConfig,
    pub mesh: PanelMesh,
    pub vlm: VlmModel,
    pub props: PropSettings,
}

impl Aircraft {
    pub fn new(config: AircraftConfig) -> Result<Self> {
        Self::with_settings(config, PropSettings::default())
    }

    pub fn with_settings(config: AircraftConfig, props: PropSettings) -> Result<Self> {
        let mesh = build_mesh(&config)?;
        let vlm = VlmModel::new(&mesh, Reference::from_config(&config))?;
        Ok(Aircraft {
            config,
            mesh,
            vlm,
            props,
        })
    }

    /// Same geometry with different propeller settings, reusing the VLM operator.
    pub fn variant(&self, props: PropSettings) -> Self {
        Aircraft {
            props,
            ..self.clone()
        }
    }

    pub fn panels(&self) -> usize {
        self.vlm.len()
    }

    /// Thrust axes at the commanded tilts.
    fn axes<R: Real>(&self, theta_star: R, theta_port: R) -> Vec<[R; 3]> {
        self.config
            .propellers
            .iter()
            .map(|p| match p.group {
                PropGroup::Starboard if p.tiltable => {
                    tilt_axis(theta_star * (std::f64::consts::PI / 180.0))
                }
                PropGroup::Port if p.tiltable => {
                    tilt_axis(theta_port * (std::f64::consts::PI / 180.0))
                }
                _ => p.axis.map(R::cst),
            })
            .collect()
    }

    fn rpms<R: Real>(&self, omega_star: R, omega_port: R) -> Vec<R> {
        self.config
            .propellers
            .iter()
            .map(|p| match p.group {
                PropGroup::Starboard => omega_star,
                PropGroup::Port => omega_port,
                PropGroup::Hover => R::cst(self.props.hover_rpm),
            })
            .collect()
    }

    /// Sums the slipstream increments of every disc.
    fn wash_from<R: Real>(&self, streams: &[Slipstream<R>]) -> Wash<R> {
        let zero = [R::cst(0.0); 3];
        let mut w = Wash {
            control: vec![zero; self.panels()],
            bound: vec![zero; self.panels()],
        };
        for s in streams {
            s.accumulate(self.vlm.control_points(), &mut w.control);
            s.accumulate(self.vlm.bound_midpoints(), &mut w.bound);
        }
        w
    }

    /// BEM per disc and the resulting wash, generic over the input type.
    ///
    /// `x = (v, α [deg], ω_star, ω_port, θ_star, θ_port)`.
    pub fn bem_wash<R: Real>(&self, x: [R; 6]) -> Result<(Wash<R>, Vec<BemSolution<R>>)> {
        let wind = wind_direction(x[1] * (std::f64::consts::PI / 180.0)).map(|c| c * x[0]);
        let axes = self.axes(x[4], x[5]);
        let rpms = self.rpms(x[2], x[3]);
        let rho = self.config.air.density;
        let mut sols = Vec::with_capacity(axes.len());
        let mut streams = Vec::with_capacity(axes.len());
        for ((disc, axis), rpm) in self.config.propellers.iter().zip(&axes).zip(rpms) {
            let sol = solve_bem_with(disc, axial_inflow(wind, *axis), rpm, rho, &self.props.polar)?;
            streams.push(Slipstream {
                hub: disc.hub,
                axis: *axis,
                radius: disc.radius,
                spin: disc.spin,
                fractions: sol.fractions.clone(),
                va: sol.va.clone(),
                vt: sol.vt.clone(),
                a_mean: sol.a_mean(),
                gain: self.props.wash_gain,
            });
            sols.push(sol);
        }
        Ok((self.wash_from(&streams), sols))
    }

    /// Low-fidelity coefficients (no learned components).
    pub fn lf_forward(&self, flight: &FlightState) -> Result<LfOutput> {
        let mut tape = Tape::no_grad();
        let x = tape.vars(&flight.to_array());
        let (out, bem) = self.record_lf(&mut tape, &x)?;
        let c = AeroCoefficients::from_array(tape.value(out).try_into().expect("4 outputs"));
        let converged = bem.iter().all(|s| s.converged) && c.is_finite();
        Ok(LfOutput {
            coefficients: c,
            converged,
            bem,
        })
    }

    /// Records the low-fidelity pipeline for the seven flight inputs
    /// `x = (v, α, ω_star, ω_port, θ_star, θ_port, θ_elev)` (scalars).
    /// Returns the `4 × 1` coefficients and the BEM solutions.
    pub fn record_lf(&self, tape: &mut Tape, x: &[Var]) -> Result<(Var, Vec<BemSolution>)> {
        assert_eq!(x.len(), 7, "record_lf takes 7 scalar inputs");
        let vals: [f64; 6] = std::array::from_fn(|k| tape.scalar(x[k]));
        let n = self.panels();
        let (inc_control, inc_bound, bem) = if tape.grad_enabled() {
            let seeds: [Dual<6>; 6] = std::array::from_fn(|k| Dual::seed(vals[k], k));
            let (w, sols) = self.bem_wash(seeds)?;
            let inputs: Vec<(Var, Vec<usize>)> = (0..6).map(|k| (x[k], vec![k])).collect();
            (
                field_node(tape, &w.control, &inputs),
                field_node(tape, &w.bound, &inputs),
                sols.iter().map(|s| s.values()).collect(),
            )
        } else {
            let (w, sols) = self.bem_wash(vals)?;
            (
                tape.constant_tensor(w.control.concat(), n, 3),
                tape.constant_tensor(w.bound.concat(), n, 3),
                sols,
            )
        };
        let vars = VlmVars {
            v: x[0],
            alpha_deg: x[1],
            theta_elev_deg: x[6],
            inc_control,
            inc_bound,
        };
        Ok((self.vlm.record(tape, &vars, None)?, bem))
    }

    /// PIML-A physics block. `shifted = (v′, α′, θ′_elev)` scalars and
    /// `magnitudes` a `6 × 1` tensor `(v_a, v_t)` per group (starboard, port,
    /// hover), applied uniformly over every station of the group's discs.
    /// Tilts come from the raw flight state.
    pub fn record_piml_a(
        &self,
        tape: &mut Tape,
        flight: &FlightState,
        shifted: [Var; 3],
        magnitudes: Var,
    ) -> Result<Var> {
        let m: [f64; 6] = tape.value(magnitudes).try_into().expect("6 magnitudes");
        let (v, alpha) = (tape.scalar(shifted[0]), tape.scalar(shifted[1]));
        let wind = wind_direction(alpha.to_radians()).map(|c| c * v);
        let axes = self.axes(flight.theta_star, flight.theta_port);
        let n = self.panels();
        let (inc_control, inc_bound) = if tape.grad_enabled() {
            let w = self.wash_from(&self.uniform_streams(
                &axes,
                wind,
                std::array::from_fn(|k| Dual::<6>::seed(m[k], k)),
            ));
            let inputs = [(magnitudes, (0..6).collect::<Vec<_>>())];
            (
                field_node(tape, &w.control, &inputs),
                field_node(tape, &w.bound, &inputs),
            )
        } else {
            let w = self.wash_from(&self.uniform_streams(&axes, wind, m));
            (
                tape.constant_tensor(w.control.concat(), n, 3),
                tape.constant_tensor(w.bound.concat(), n, 3),
            )
        };
        let vars = VlmVars {
            v: shifted[0],
            alpha_deg: shifted[1],
            theta_elev_deg: shifted[2],
            inc_control,
            inc_bound,
        };
        self.vlm.record(tape, &vars, None)
    }

    /// Slipstreams carrying one `(v_a, v_t)` pair per group at every station.
    fn uniform_streams<R: Real>(&self, axes: &[V3], wind: V3, mags: [R; 6]) -> Vec<Slipstream<R>> {
        self.config
            .propellers
            .iter()
            .zip(axes)
            .map(|(disc, axis)| {
                let g = disc.group.index();
                let ns = disc.blade.stations;
                let inflow = axial_inflow(wind, *axis);
                Slipstream {
                    hub: disc.hub,
                    axis: axis.map(R::cst),
                    radius: disc.radius,
                    spin: disc.spin,
                    fractions: disc.blade.stations().0,
                    va: vec![mags[2 * g]; ns],
                    vt: vec![mags[2 * g + 1]; ns],
                    a_mean: (mags[2 * g].val() / inflow.max(STATIC_INFLOW)).max(0.0),
                    gain: self.props.wash_gain,
                }
            })
            .collect()
    }

    /// BEM and factorization for a PIML-B sample.
    pub fn piml_b_cache(&self, flight: &FlightState) -> Result<PimlBCache> {
        let x = flight.to_array();
        let (_, bem) = self.bem_wash([x[0], x[1], x[2], x[3], x[4], x[5]])?;
        let axes = self.axes(flight.theta_star, flight.theta_port);
        let wind = wind_direction(flight.alpha.to_radians()).map(|c| c * flight.v);
        let norm_v = axes
            .iter()
            .map(|a| axial_inflow(wind, *a).max(STATIC_INFLOW))
            .collect();
        Ok(PimlBCache {
            flight: *flight,
            bem,
            axes,
            norm_v,
            lu: self.vlm.factor(flight.alpha, flight.theta_elev)?,
        })
    }

    /// PIML-B physics block: `corrections` is a `6 × 1` tensor of signed
    /// `(Δv_a, Δv_t)` per group added to every station of the group's discs.
    /// The contraction follows the corrected mean induction.
    pub fn record_piml_b(
        &self,
        tape: &mut Tape,
        cache: &PimlBCache,
        corrections: Var,
    ) -> Result<Var> {
        let d: [f64; 6] = tape.value(corrections).try_into().expect("6 corrections");
        let n = self.panels();
        let delta: [Dual<6>; 6] = std::array::from_fn(|k| Dual::seed(d[k], k));
        let streams: Vec<_> = self
            .config
            .propellers
            .iter()
            .zip(&cache.bem)
            .enumerate()
            .map(|(i, (disc, sol))| {
                let g = disc.group.index();
                let (da, dt) = (delta[2 * g], delta[2 * g + 1]);
                let a_shift = if sol.va.iter().all(|&v| v == 0.0) && d[2 * g] == 0.0 {
                    0.0
                } else {
                    d[2 * g] / cache.norm_v[i]
                };
                Slipstream {
                    hub: disc.hub,
                    axis: cache.axes[i].map(Dual::constant),
                    radius: disc.radius,
                    spin: disc.spin,
                    fractions: sol.fractions.clone(),
                    va: sol.va.iter().map(|&v| da + v).collect(),
                    vt: sol.vt.iter().map(|&v| dt + v).collect(),
                    a_mean: (sol.a_mean() + a_shift).max(0.0),
                    gain: self.props.wash_gain,
                }
            })
            .collect();
        let w = self.wash_from(&streams);
        let inputs = [(corrections, (0..6).collect::<Vec<_>>())];
        let f = cache.flight;
        let vars = VlmVars {
            v: tape.constant(f.v),
            alpha_deg: tape.constant(f.alpha),
            theta_elev_deg: tape.constant(f.theta_elev),
            inc_control: field_or_constant(tape, &w.control, &inputs, n),
            inc_bound: field_or_constant(tape, &w.bound, &inputs, n),
        };
        self.vlm.record(tape, &vars, Some(cache.lu.clone()))
    }
}

/// Records an `n × 3` field of dual numbers as a custom node. Each input is a
/// tensor whose elements map, in order, to the listed dual directions.
fn field_node<const N: usize>(
    tape: &mut Tape,
    field: &[[Dual<N>; 3]],
    inputs: &[(Var, Vec<usize>)],
) -> Var {
    let n = field.len();
    let value: Vec<f64> = field.iter().flat_map(|p| p.iter().map(|d| d.v)).collect();
    let partials = inputs
        .iter()
        .map(|(var, dirs)| {
            let m = dirs.len();
            let mut jac = vec![0.0; 3 * n * m];
            for (row, d) in field.iter().flatten().enumerate() {
                for (col, &k) in dirs.iter().enumerate() {
                    jac[row * m + col] = d.d[k];
                }
            }
            (*var, Partials::Dense(jac))
        })
        .collect();
    tape.custom(value, n, 3, partials)
}

fn field_or_constant<const N: usize>(
    tape: &mut Tape,
    field: &[[Dual<N>; 3]],
    inputs: &[(Var, Vec<usize>)],
    n: usize,
) -> Var {
    if tape.grad_enabled() {
        field_node(tape, field, inputs)
    } else {
        let value: Vec<f64> = field.iter().flat_map(|p| p.iter().map(|d| d.v)).collect();
        tape.constant_tensor(value, n, 3)
    }
}
