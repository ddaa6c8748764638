//! Blade element momentum propeller solver and slipstream wash mapping.
//!
//! Each annulus balances blade-element loads against axial and angular
//! momentum flux by relaxed fixed-point iteration on the induced velocities
//! `(v_a, v_t)`. The momentum relations are written in terms of the induced
//! velocities rather than induction factors, so the static case (zero axial
//! inflow) needs no separate branch.
//!
//! The solver is generic over [`Real`]: evaluating it on dual numbers
//! differentiates the converged iterate.

use std::f64::consts::PI;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::PropellerDisc;
use crate::vlm::V3;

/// Relaxation factor of the fixed-point update.
pub const RELAXATION: f64 = 0.5;
/// Tolerance on `max |Δa|` for the convergence flag.
pub const CONVERGENCE_TOL: f64 = 1e-6;
/// Iteration continues to this tolerance so derivatives of the final iterate settle.
pub const REFINE_TOL: f64 = 1e-12;
pub const MAX_ITER: usize = 200;
/// Axial inflow below which the induction factor is normalized by this value [m/s].
pub const STATIC_INFLOW: f64 = 0.1;

/// Analytic blade-section polar: `c_l = 2π·k·sin(α)` clamped, constant `c_d`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BladePolar {
    /// Multiplier `k` on the thin-airfoil lift slope.
    pub lift_slope_factor: f64,
    pub cl_max: f64,
    pub cd: f64,
}

impl Default for BladePolar {
    fn default() -> Self {
        BladePolar {
            lift_slope_factor: 1.0,
            cl_max: 1.2,
            cd: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BemSolution<R = f64> {
    /// Station radii as fractions of the tip radius.
    pub fractions: Vec<f64>,
    /// Axial induction `v_a / max(V, STATIC_INFLOW)`.
    pub a: Vec<R>,
    /// Swirl induction `v_t / (Ω r)`.
    pub a_swirl: Vec<R>,
    /// Inflow angle [rad].
    pub phi: Vec<R>,
    /// Axial and tangential induced velocity at the disc [m/s].
    pub va: Vec<R>,
    pub vt: Vec<R>,
    pub thrust: R,
    pub torque: R,
    pub converged: bool,
    pub iterations: usize,
}

impl<R: Real> BemSolution<R> {
    /// Annulus-area-weighted mean axial induction.
    pub fn a_mean(&self) -> f64 {
        let w: f64 = self.fractions.iter().sum();
        self.fractions
            .iter()
            .zip(&self.a)
            .map(|(f, a)| f * a.val())
            .sum::<f64>()
            / w
    }

    /// Plain-value copy.
    pub fn values(&self) -> BemSolution<f64> {
        let v = |x: &Vec<R>| x.iter().map(|r| r.val()).collect();
        BemSolution {
            fractions: self.fractions.clone(),
            a: v(&self.a),
            a_swirl: v(&self.a_swirl),
            phi: v(&self.phi),
            va: v(&self.va),
            vt: v(&self.vt),
            thrust: self.thrust.val(),
            torque: self.torque.val(),
            converged: self.converged,
            iterations: self.iterations,
        }
    }
}

/// Solves the disc at axial inflow `axial_inflow` [m/s] and `rpm` with the
/// default polar.
pub fn solve_bem(
    disc: &PropellerDisc,
    axial_inflow: f64,
    rpm: f64,
    density: f64,
) -> Result<BemSolution> {
    solve_bem_with(disc, axial_inflow, rpm, density, &BladePolar::default())
}

/// Generic solve. Negative inflow is floored at zero; negative rpm is rejected.
/// A solution that misses [`CONVERGENCE_TOL`] within [`MAX_ITER`] iterations
/// is returned with `converged == false`.
pub fn solve_bem_with<R: Real>(
    disc: &PropellerDisc,
    axial_inflow: R,
    rpm: R,
    density: f64,
    polar: &BladePolar,
) -> Result<BemSolution<R>> {
    if !(rpm.val() >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rpm must be non-negative, got {}",
            rpm.val()
        )));
    }
    let blade = &disc.blade;
    let (fractions, width) = blade.stations();
    let ns = fractions.len();
    let zero = R::cst(0.0);
    if rpm.val() == 0.0 {
        return Ok(BemSolution {
            fractions,
            a: vec![zero; ns],
            a_swirl: vec![zero; ns],
            phi: vec![zero; ns],
            va: vec![zero; ns],
            vt: vec![zero; ns],
            thrust: zero,
            torque: zero,
            converged: true,
            iterations: 0,
        });
    }
    let v = axial_inflow.max_val(zero);
    let omega = rpm * (2.0 * PI / 60.0);
    let radius = disc.radius;
    let b = disc.blade_count as f64;
    let norm_v = v.max_val(R::cst(STATIC_INFLOW));
    let geom: Vec<(f64, f64, f64)> = fractions
        .iter()
        .map(|&f| {
            (
                f * radius,
                blade.chord_at(f) * radius,
                blade.twist_at(f).to_radians(),
            )
        })
        .collect();

    // Element loads per unit span for given induced velocities.
    let loads = |va: R, vt: R, (r, c, beta): (f64, f64, f64)| -> (R, R, R) {
        let ua = v + va;
        let ut = omega * r - vt;
        let phi = ua.atan2(ut);
        let w2 = ua * ua + ut * ut;
        let cl = ((R::cst(beta) - phi).sin() * (2.0 * PI * polar.lift_slope_factor))
            .clamp_val(-polar.cl_max, polar.cl_max);
        let (sp, cp) = (phi.sin(), phi.cos());
        let k = w2 * (0.5 * density * b * c);
        let dt = k * (cl * cp - sp * polar.cd);
        let dq = k * (cl * sp + cp * polar.cd) * r;
        (dt, dq, phi)
    };

    let mut va = vec![zero; ns];
    let mut vt = vec![zero; ns];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut delta = 0.0f64;
        for k in 0..ns {
            let (r, _, _) = geom[k];
            let (dt, dq, _) = loads(va[k], vt[k], geom[k]);
            let va_star = ((v * v + dt.max_val(zero) / (PI * r * density)).sqrt() - v) * 0.5;
            let axial = (v + va[k]).max_val(R::cst(1e-6));
            let vt_star = dq / (axial * (4.0 * PI * r * r * density));
            let na = va[k] + (va_star - va[k]) * RELAXATION;
            let nt = vt[k] + (vt_star - vt[k]) * RELAXATION;
            delta = delta.max(((na - va[k]) / norm_v).val().abs());
            va[k] = na;
            vt[k] = nt;
        }
        if !delta.is_finite() {
            break;
        }
        if delta < CONVERGENCE_TOL {
            converged = true;
        }
        if delta < REFINE_TOL {
            break;
        }
    }

    let mut thrust = zero;
    let mut torque = zero;
    let mut phi = Vec::with_capacity(ns);
    for k in 0..ns {
        let (dt, dq, p) = loads(va[k], vt[k], geom[k]);
        thrust = thrust + dt * (width * radius);
        torque = torque + dq * (width * radius);
        phi.push(p);
    }
    let finite = va.iter().chain(&vt).all(|x| x.val().is_finite()) && thrust.val().is_finite();
    Ok(BemSolution {
        a: va.iter().map(|&x| x / norm_v).collect(),
        a_swirl: vt
            .iter()
            .zip(&geom)
            .map(|(&x, g)| x / (omega * g.0))
            .collect(),
        fractions,
        phi,
        va,
        vt,
        thrust,
        torque,
        converged: converged && finite,
        iterations,
    })
}

/// Contracted slipstream radius a distance `x` downstream of the disc.
pub fn slipstream_radius(radius: f64, a_mean: f64, x: f64) -> f64 {
    let s = x / (x * x + radius * radius).sqrt();
    radius * ((1.0 + a_mean) / (1.0 + a_mean * (1.0 + s))).sqrt()
}

/// Axial growth of the induced velocity from the disc (1) to the far wake (2).
pub fn wash_factor<R: Real>(radius: f64, x: R) -> R {
    x / (x * x + radius * radius).sqrt() + 1.0
}

/// A disc's slipstream, ready to evaluate at arbitrary points.
#[derive(Debug, Clone)]
pub struct Slipstream<R> {
    pub hub: V3,
    /// Unit thrust axis; the wake leaves along `−axis`.
    pub axis: [R; 3],
    pub radius: f64,
    pub spin: f64,
    pub fractions: Vec<f64>,
    pub va: Vec<R>,
    pub vt: Vec<R>,
    /// Mean axial induction setting the contraction.
    pub a_mean: f64,
    /// Multiplier on the axial increment.
    pub gain: f64,
}

impl<R: Real> Slipstream<R> {
    /// Adds this tube's increment at every point to `out`.
    ///
    /// Membership, contraction and station selection use plain values, so
    /// the increment is differentiable in the axis and station velocities
    /// away from tube boundaries.
    pub fn accumulate(&self, points: &[V3], out: &mut [[R; 3]]) {
        let e = self.axis.map(|c| c.val());
        for (p, o) in points.iter().zip(out.iter_mut()) {
            let d = [p[0] - self.hub[0], p[1] - self.hub[1], p[2] - self.hub[2]];
            let x = -(d[0] * e[0] + d[1] * e[1] + d[2] * e[2]);
            if x < 0.0 {
                continue;
            }
            let rv = [d[0] + x * e[0], d[1] + x * e[1], d[2] + x * e[2]];
            let r = (rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2]).sqrt();
            let rs = slipstream_radius(self.radius, self.a_mean, x);
            if r > rs {
                continue;
            }
            let k = nearest(&self.fractions, r / rs);
            // Same geometry on R so the increment follows the axis.
            let xr = -(self.axis[0] * d[0] + self.axis[1] * d[1] + self.axis[2] * d[2]);
            let axial = self.va[k] * wash_factor(self.radius, xr) * self.gain;
            for c in 0..3 {
                o[c] = o[c] - self.axis[c] * axial;
            }
            if r > 0.0 {
                let rv: [R; 3] = [0, 1, 2].map(|c| self.axis[c] * xr + d[c]);
                let rn = (rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2]).sqrt();
                let t = [
                    self.axis[1] * rv[2] - self.axis[2] * rv[1],
                    self.axis[2] * rv[0] - self.axis[0] * rv[2],
                    self.axis[0] * rv[1] - self.axis[1] * rv[0],
                ];
                let s = self.vt[k] * self.spin / rn;
                for c in 0..3 {
                    o[c] = o[c] + t[c] * s;
                }
            }
        }
    }
}

fn nearest(fractions: &[f64], f: f64) -> usize {
    let mut best = 0;
    for (k, &g) in fractions.iter().enumerate() {
        if (g - f).abs() < (fractions[best] - f).abs() {
            best = k;
        }
    }
    best
}

/// Axial inflow through a disc with thrust axis `axis` in relative wind `wind`:
/// `max(−wind·axis, 0)`.
pub fn axial_inflow<R: Real>(wind: [R; 3], axis: [R; 3]) -> R {
    (-(wind[0] * axis[0] + wind[1] * axis[1] + wind[2] * axis[2])).max_val(R::cst(0.0))
}

/// Propeller increments at the given points for discs with tilt already
/// applied, in relative wind `wind`.
///
/// Returns the increments and each disc's BEM solution.
pub fn propwash_field(
    discs: &[PropellerDisc],
    rpms: &[f64],
    wind: V3,
    points: &[V3],
    density: f64,
    polar: &BladePolar,
    gain: f64,
) -> Result<(Vec<V3>, Vec<BemSolution>)> {
    if discs.len() != rpms.len() {
        return Err(Error::Dimension {
            context: "propwash_field: one rpm per disc",
            expected: discs.len(),
            got: rpms.len(),
        });
    }
    let mut out = vec![[0.0; 3]; points.len()];
    let mut sols = Vec::with_capacity(discs.len());
    for (disc, &rpm) in discs.iter().zip(rpms) {
        let sol = solve_bem_with(disc, axial_inflow(wind, disc.axis), rpm, density, polar)?;
        Slipstream {
            hub: disc.hub,
            axis: disc.axis,
            radius: disc.radius,
            spin: disc.spin,
            fractions: sol.fractions.clone(),
            va: sol.va.clone(),
            vt: sol.vt.clone(),
            a_mean: sol.a_mean(),
            gain,
        }
        .accumulate(points, &mut out);
        sols.push(sol);
    }
    Ok((out, sols))
}
