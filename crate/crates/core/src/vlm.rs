//! Vortex lattice method with a propeller-modified onset flow.
//!
//! Each panel carries a vortex ring whose front (bound) segment lies on the
//! panel quarter-chord line. Trailing-edge rings close through two
//! semi-infinite filaments aligned with the freestream, so the aerodynamic
//! influence matrix depends on the angle of attack only through those
//! trailing columns. The bound part is precomputed once per mesh.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::autodiff::{Dual, Partials, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::flight::AeroCoefficients;
use crate::geometry::{elevator_normal, AircraftConfig, PanelMesh};
use crate::linalg::{self, Lu};

/// Maximum accepted relative residual of the circulation solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Airspeed floor for the reference dynamic pressure [m/s].
pub const V_FLOOR: f64 = 1.0;

/// Vortex core radius as a fraction of the reference chord.
pub const CORE_FRACTION: f64 = 1e-6;

pub type V3 = [f64; 3];

#[inline]
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

/// Velocity at `p` induced by a unit-strength straight filament `a → b`.
///
/// The core term `(core·|b − a|)²` in the denominator keeps the kernel finite
/// on the filament line, where it returns zero.
pub fn segment_velocity(a: V3, b: V3, p: V3, core: f64) -> V3 {
    let r0 = sub(b, a);
    let r1 = sub(p, a);
    let r2 = sub(p, b);
    let (n1, n2) = (norm(r1), norm(r2));
    let c = cross(r1, r2);
    let den = dot(c, c) + (core * norm(r0)).powi(2);
    if n1 == 0.0 || n2 == 0.0 || den == 0.0 {
        return [0.0; 3];
    }
    let k = (dot(
        r0,
        [
            r1[0] / n1 - r2[0] / n2,
            r1[1] / n1 - r2[1] / n2,
            r1[2] / n1 - r2[2] / n2,
        ],
    )) / (4.0 * PI * den);
    [c[0] * k, c[1] * k, c[2] * k]
}

/// Velocity at `p` induced by a unit-strength filament starting at `a` and
/// running to infinity along the unit direction `e`.
pub fn semi_infinite_velocity<R: Real>(a: V3, e: [R; 3], p: V3, core: f64) -> [R; 3] {
    let r1 = sub(p, a);
    let n1 = norm(r1);
    if n1 == 0.0 {
        return [R::cst(0.0); 3];
    }
    let c = [
        e[1] * r1[2] - e[2] * r1[1],
        e[2] * r1[0] - e[0] * r1[2],
        e[0] * r1[1] - e[1] * r1[0],
    ];
    let den = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + core * core;
    let along = (e[0] * r1[0] + e[1] * r1[1] + e[2] * r1[2]) / n1 + 1.0;
    let k = along / (den * (4.0 * PI));
    [c[0] * k, c[1] * k, c[2] * k]
}

/// Velocity at `p` induced by a closed vortex ring `c0 → c1 → c2 → c3 → c0`
/// of circulation `gamma`.
pub fn ring_induced_velocity(corners: &[V3; 4], gamma: f64, p: V3) -> V3 {
    ring_velocity(corners, p, 0.0).map(|v| v * gamma)
}

fn ring_velocity(c: &[V3; 4], p: V3, core: f64) -> V3 {
    let mut v = [0.0; 3];
    for k in 0..4 {
        let s = segment_velocity(c[k], c[(k + 1) % 4], p, core);
        (0..3).for_each(|d| v[d] += s[d]);
    }
    v
}

/// Freestream direction for angle of attack `alpha` [rad]; also the wake direction.
pub fn wind_direction<R: Real>(alpha: R) -> [R; 3] {
    [-alpha.cos(), R::cst(0.0), alpha.sin()]
}

/// Freestream velocity relative to the aircraft.
pub fn freestream(v: f64, alpha_deg: f64) -> V3 {
    wind_direction(alpha_deg.to_radians()).map(|c| c * v)
}

/// Reference quantities for force and moment normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub area: f64,
    pub span: f64,
    pub chord: f64,
    pub point: V3,
    pub density: f64,
}

impl Reference {
    pub fn from_config(c: &AircraftConfig) -> Self {
        Reference {
            area: c.reference.area,
            span: c.reference.span,
            chord: c.reference.chord,
            point: c.reference.point,
            density: c.air.density,
        }
    }

    /// `½ρ·max(v, V_FLOOR)²`.
    pub fn dynamic_pressure(&self, v: f64) -> f64 {
        0.5 * self.density * v.max(V_FLOOR).powi(2)
    }
}

/// Local onset velocity (freestream plus propeller increment).
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetFlow {
    /// At each control point.
    pub control: Vec<V3>,
    /// At each bound-segment midpoint.
    pub bound: Vec<V3>,
}

impl OnsetFlow {
    pub fn uniform(v: V3, n: usize) -> Self {
        OnsetFlow {
            control: vec![v; n],
            bound: vec![v; n],
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let s = |x: &Vec<V3>| x.iter().map(|v| v.map(|c| c * k)).collect();
        OnsetFlow {
            control: s(&self.control),
            bound: s(&self.bound),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirculationSolution {
    pub gamma: Vec<f64>,
    /// `‖Aγ − b‖ / ‖b‖`.
    pub residual_norm: f64,
}

/// `b[i] = −onset(i)·nᵢ` using the mesh normals.
pub fn assemble_rhs(mesh: &PanelMesh, onset: &OnsetFlow) -> Vec<f64> {
    mesh.panels
        .iter()
        .zip(&onset.control)
        .map(|(p, &u)| -dot(u, p.normal))
        .collect()
}

/// Direct LU solve with iterative refinement.
///
/// Errors with [`Error::Singular`] (carrying the reciprocal condition
/// estimate) or [`Error::Residual`] if the refined residual exceeds
/// [`RESIDUAL_TOL`].
pub fn solve_circulations(a: &[f64], b: &[f64]) -> Result<CirculationSolution> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Dimension {
            context: "solve_circulations: matrix size",
            expected: n * n,
            got: a.len(),
        });
    }
    let lu = Lu::factor(a, n)?;
    let (gamma, residual_norm) = linalg::solve_refined(&lu, a, b, RESIDUAL_TOL)?;
    Ok(CirculationSolution {
        gamma,
        residual_norm,
    })
}

/// Wind-frame coefficients from body-frame force and moment about the reference point.
pub fn coefficients(
    force: V3,
    moment: V3,
    v: f64,
    alpha_deg: f64,
    reference: &Reference,
) -> AeroCoefficients {
    let a = alpha_deg.to_radians();
    let (s, c) = a.sin_cos();
    let qs = reference.dynamic_pressure(v) * reference.area;
    AeroCoefficients {
        cl: (force[0] * s + force[2] * c) / qs,
        cd: (-force[0] * c + force[2] * s) / qs,
        c_roll: moment[0] / (qs * reference.span),
        cm: -moment[1] / (qs * reference.chord),
    }
}

#[derive(Debug, Clone)]
pub struct VlmSolution {
    pub circulation: CirculationSolution,
    pub force: V3,
    pub moment: V3,
    pub coefficients: AeroCoefficients,
}

/// Differentiable inputs of the tape-recorded solve.
#[derive(Debug, Clone, Copy)]
pub struct VlmVars {
    pub v: Var,
    pub alpha_deg: Var,
    pub theta_elev_deg: Var,
    /// `n × 3` propeller increment at the control points.
    pub inc_control: Var,
    /// `n × 3` propeller increment at the bound midpoints.
    pub inc_bound: Var,
}

/// Geometry-dependent VLM operator for one mesh.
#[derive(Debug, Clone)]
pub struct VlmModel {
    n: usize,
    normals: Vec<V3>,
    elevator: Vec<usize>,
    trailing: Vec<usize>,
    /// Wake roots (aft-left, aft-right ring corners) of each trailing ring.
    wake_roots: Vec<(V3, V3)>,
    control: Vec<V3>,
    bound_mid: Vec<V3>,
    bound_vec: Vec<V3>,
    upstream: Vec<Option<usize>>,
    arms: Vec<V3>,
    /// Bound-vortex influence per component, `n × n` row-major.
    bound_cp: [Vec<f64>; 3],
    bound_bm: [Vec<f64>; 3],
    core: f64,
    reference: Reference,
}

impl VlmModel {
    /// Precomputes the bound-vortex influence. `mesh` must be undeflected;
    /// elevator deflection enters through [`VlmModel::normals_at`].
    ///
    /// Bound segments must be spanwise (along body y), which holds for every
    /// mesh produced by [`crate::geometry`].
    pub fn new(mesh: &PanelMesh, reference: Reference) -> Result<Self> {
        let n = mesh.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty mesh".into()));
        }
        if mesh
            .panels
            .iter()
            .any(|p| p.bound_vec[0] != 0.0 || p.bound_vec[2] != 0.0)
        {
            return Err(Error::InvalidArgument(
                "bound segments must be spanwise".into(),
            ));
        }
        let core = CORE_FRACTION * reference.chord;
        let trailing = mesh.trailing_indices();
        let mut bound_cp = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
        let mut bound_bm = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
        for (j, pj) in mesh.panels.iter().enumerate() {
            let r = &pj.ring;
            for (i, pi) in mesh.panels.iter().enumerate() {
                for (store, x) in [(&mut bound_cp, pi.control), (&mut bound_bm, pi.bound_mid)] {
                    let v = if pj.trailing {
                        let mut v = [0.0; 3];
                        for (a, b) in [(r[0], r[1]), (r[1], r[2]), (r[3], r[0])] {
                            let s = segment_velocity(a, b, x, core);
                            (0..3).for_each(|d| v[d] += s[d]);
                        }
                        v
                    } else {
                        ring_velocity(r, x, core)
                    };
                    for d in 0..3 {
                        store[d][i * n + j] = v[d];
                    }
                }
            }
        }
        Ok(VlmModel {
            n,
            normals: mesh.panels.iter().map(|p| p.normal).collect(),
            elevator: mesh.elevator_indices(),
            wake_roots: trailing
                .iter()
                .map(|&j| (mesh.panels[j].ring[2], mesh.panels[j].ring[3]))
                .collect(),
            trailing,
            control: mesh.panels.iter().map(|p| p.control).collect(),
            bound_mid: mesh.panels.iter().map(|p| p.bound_mid).collect(),
            bound_vec: mesh.panels.iter().map(|p| p.bound_vec).collect(),
            upstream: mesh.panels.iter().map(|p| p.upstream).collect(),
            arms: mesh
                .panels
                .iter()
                .map(|p| sub(p.bound_mid, reference.point))
                .collect(),
            bound_cp,
            bound_bm,
            core,
            reference,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn control_points(&self) -> &[V3] {
        &self.control
    }

    pub fn bound_midpoints(&self) -> &[V3] {
        &self.bound_mid
    }

    /// Panel normals with the elevator rotated by `theta` [rad].
    pub fn normals_at(&self, theta: f64) -> Vec<V3> {
        let mut n = self.normals.clone();
        if theta != 0.0 {
            let e = elevator_normal(theta);
            self.elevator.iter().for_each(|&i| n[i] = e);
        }
        n
    }

    /// Wake-filament velocities, `points.len() × trailing` row-major.
    fn wake<R: Real>(&self, alpha: R, points: &[V3]) -> Vec<[R; 3]> {
        let e = wind_direction(alpha);
        let mut out = Vec::with_capacity(points.len() * self.trailing.len());
        for &x in points {
            for &(p3, p4) in &self.wake_roots {
                let a = semi_infinite_velocity(p3, e, x, self.core);
                let b = semi_infinite_velocity(p4, e, x, self.core);
                out.push([a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
            }
        }
        out
    }

    /// Influence matrix: normal velocity at control point `i` per unit
    /// circulation of ring `j`, at angle of attack `alpha` and elevator
    /// deflection `theta` [rad].
    pub fn aic(&self, alpha: f64, theta: f64) -> Vec<f64> {
        self.aic_with_partials(alpha, theta, false, false).0
    }

    #[allow(clippy::type_complexity)]
    fn aic_with_partials(
        &self,
        alpha: f64,
        theta: f64,
        d_alpha: bool,
        d_theta: bool,
    ) -> (Vec<f64>, Vec<(u32, u32, f64)>, Vec<(u32, u32, f64)>) {
        let n = self.n;
        let t = self.trailing.len();
        let normals = self.normals_at(theta);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let ni = normals[i];
            let row = &mut a[i * n..(i + 1) * n];
            for d in 0..3 {
                if ni[d] != 0.0 {
                    let b = &self.bound_cp[d][i * n..(i + 1) * n];
                    row.iter_mut().zip(b).for_each(|(x, y)| *x += ni[d] * y);
                }
            }
        }
        let mut pa = Vec::new();
        if d_alpha {
            let w = self.wake(Dual::<1>::seed(alpha, 0), &self.control);
            for i in 0..n {
                for (k, &j) in self.trailing.iter().enumerate() {
                    let v = w[i * t + k];
                    a[i * n + j] +=
                        normals[i][0] * v[0].v + normals[i][1] * v[1].v + normals[i][2] * v[2].v;
                    let g = normals[i][0] * v[0].d[0]
                        + normals[i][1] * v[1].d[0]
                        + normals[i][2] * v[2].d[0];
                    pa.push(((i * n + j) as u32, 0, g));
                }
            }
        } else {
            let w = self.wake(alpha, &self.control);
            for i in 0..n {
                for (k, &j) in self.trailing.iter().enumerate() {
                    a[i * n + j] += dot(normals[i], w[i * t + k]);
                }
            }
        }
        let mut pt = Vec::new();
        if d_theta && !self.elevator.is_empty() {
            // Full-influence rows: bound part plus wake, without the normal.
            let w = self.wake(alpha, &self.control);
            let dn = [-theta.cos(), 0.0, -theta.sin()];
            for &i in &self.elevator {
                let mut vel: Vec<V3> = (0..n)
                    .map(|j| [0, 1, 2].map(|d| self.bound_cp[d][i * n + j]))
                    .collect();
                for (k, &j) in self.trailing.iter().enumerate() {
                    (0..3).for_each(|d| vel[j][d] += w[i * t + k][d]);
                }
                for j in 0..n {
                    pt.push(((i * n + j) as u32, 0, dot(dn, vel[j])));
                }
            }
        }
        (a, pa, pt)
    }

    /// Total velocity induced at the bound midpoints by circulation `gamma`.
    pub fn induced_at_bound(&self, gamma: &[f64], alpha: f64) -> Vec<V3> {
        let n = self.n;
        let t = self.trailing.len();
        let w = self.wake(alpha, &self.bound_mid);
        (0..n)
            .map(|i| {
                let mut u = [0.0; 3];
                for d in 0..3 {
                    let row = &self.bound_bm[d][i * n..(i + 1) * n];
                    u[d] = row.iter().zip(gamma).map(|(a, g)| a * g).sum();
                }
                for (k, &j) in self.trailing.iter().enumerate() {
                    (0..3).for_each(|d| u[d] += w[i * t + k][d] * gamma[j]);
                }
                u
            })
            .collect()
    }

    /// Net circulation of each bound segment (own ring minus the upstream ring).
    fn net_gamma(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| gamma[k] - self.upstream[k].map_or(0.0, |u| gamma[u]))
            .collect()
    }

    /// Kutta–Joukowski force on every bound segment, summed, and its moment
    /// about the reference point. The local velocity includes the onset flow
    /// and the velocity induced by all rings and wake filaments.
    pub fn compute_forces(&self, gamma: &[f64], onset: &OnsetFlow, alpha: f64) -> (V3, V3) {
        let induced = self.induced_at_bound(gamma, alpha);
        let net = self.net_gamma(gamma);
        let rho = self.reference.density;
        let (mut f, mut m) = ([0.0; 3], [0.0; 3]);
        for k in 0..self.n {
            let u = [0, 1, 2].map(|d| onset.bound[k][d] + induced[k][d]);
            let df = cross(u, self.bound_vec[k]).map(|c| rho * net[k] * c);
            let dm = cross(self.arms[k], df);
            (0..3).for_each(|d| {
                f[d] += df[d];
                m[d] += dm[d];
            });
        }
        (f, m)
    }

    /// Onset flow from the freestream and per-point increments.
    pub fn onset(&self, v: f64, alpha_deg: f64, inc_control: &[V3], inc_bound: &[V3]) -> OnsetFlow {
        let u = freestream(v, alpha_deg);
        let add = |inc: &[V3]| {
            inc.iter()
                .map(|w| [u[0] + w[0], u[1] + w[1], u[2] + w[2]])
                .collect()
        };
        OnsetFlow {
            control: add(inc_control),
            bound: add(inc_bound),
        }
    }

    /// Full solve in plain floating point.
    pub fn solve(
        &self,
        v: f64,
        alpha_deg: f64,
        theta_elev_deg: f64,
        inc_control: &[V3],
        inc_bound: &[V3],
    ) -> Result<VlmSolution> {
        let (alpha, theta) = (alpha_deg.to_radians(), theta_elev_deg.to_radians());
        let onset = self.onset(v, alpha_deg, inc_control, inc_bound);
        let normals = self.normals_at(theta);
        let b: Vec<f64> = onset
            .control
            .iter()
            .zip(&normals)
            .map(|(&u, &nn)| -dot(u, nn))
            .collect();
        let a = self.aic(alpha, theta);
        let circulation = solve_circulations(&a, &b)?;
        let (force, moment) = self.compute_forces(&circulation.gamma, &onset, alpha);
        Ok(VlmSolution {
            coefficients: coefficients(force, moment, v, alpha_deg, &self.reference),
            circulation,
            force,
            moment,
        })
    }

    /// LU factorization of the influence matrix, for reuse across solves at
    /// fixed angle of attack and elevator deflection.
    pub fn factor(&self, alpha_deg: f64, theta_elev_deg: f64) -> Result<Arc<Lu>> {
        let a = self.aic(alpha_deg.to_radians(), theta_elev_deg.to_radians());
        Ok(Arc::new(Lu::factor(&a, self.n)?))
    }

    /// Records the solve on `tape`, returning the `4 × 1` coefficient vector
    /// `(C_L, C_D, C_l, C_m)`.
    ///
    /// `lu`, when given, must factor the influence matrix at the current
    /// values of `alpha_deg` and `theta_elev_deg`; those inputs must then be
    /// constants on the tape.
    pub fn record(&self, tape: &mut Tape, x: &VlmVars, lu: Option<Arc<Lu>>) -> Result<Var> {
        let n = self.n;
        let t = self.trailing.len();
        let grad = tape.grad_enabled();
        let alpha = tape.scale(x.alpha_deg, PI / 180.0);
        let theta = tape.scale(x.theta_elev_deg, PI / 180.0);
        let (av, tv, vv) = (tape.scalar(alpha), tape.scalar(theta), tape.scalar(x.v));
        let d_alpha = grad && tape.requires_grad(alpha);
        let d_theta = grad && tape.requires_grad(theta);
        let d_v = grad && tape.requires_grad(x.v);
        let d_inc = grad && tape.requires_grad(x.inc_control);
        if lu.is_some() && (d_alpha || d_theta) {
            return Err(Error::InvalidArgument(
                "a cached factorization requires constant angle of attack and elevator".into(),
            ));
        }
        for (name, var) in [("inc_control", x.inc_control), ("inc_bound", x.inc_bound)] {
            if tape.shape(var) != (n, 3) {
                return Err(Error::Dimension {
                    context: if name == "inc_control" {
                        "vlm: control-point increments"
                    } else {
                        "vlm: bound-midpoint increments"
                    },
                    expected: n * 3,
                    got: tape.size(var),
                });
            }
        }

        // Influence matrix.
        let a = if lu.is_none() {
            let (val, pa, pt) = self.aic_with_partials(av, tv, d_alpha, d_theta);
            let mut inputs = Vec::new();
            if d_alpha {
                inputs.push((alpha, Partials::Sparse(pa)));
            }
            if d_theta {
                inputs.push((theta, Partials::Sparse(pt)));
            }
            tape.custom(val, n, n, inputs)
        } else {
            tape.constant_tensor(self.aic(av, tv), n, n)
        };

        // Right-hand side b = −(V∞ + inc)·n.
        let normals = self.normals_at(tv);
        let u = wind_direction(av).map(|c| c * vv);
        let inc = tape.value(x.inc_control).to_vec();
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let w = [
                    u[0] + inc[3 * i],
                    u[1] + inc[3 * i + 1],
                    u[2] + inc[3 * i + 2],
                ];
                -dot(w, normals[i])
            })
            .collect();
        let mut inputs = Vec::new();
        if d_v {
            let e = wind_direction(av);
            inputs.push((
                x.v,
                Partials::Dense(normals.iter().map(|&nn| -dot(e, nn)).collect()),
            ));
        }
        if d_alpha {
            let de = [vv * av.sin(), 0.0, vv * av.cos()];
            inputs.push((
                alpha,
                Partials::Dense(normals.iter().map(|&nn| -dot(de, nn)).collect()),
            ));
        }
        if d_theta {
            let dn = [-tv.cos(), 0.0, -tv.sin()];
            let p = self
                .elevator
                .iter()
                .map(|&i| {
                    let w = [
                        u[0] + inc[3 * i],
                        u[1] + inc[3 * i + 1],
                        u[2] + inc[3 * i + 2],
                    ];
                    (i as u32, 0, -dot(w, dn))
                })
                .collect();
            inputs.push((theta, Partials::Sparse(p)));
        }
        if d_inc {
            let p = (0..n)
                .flat_map(|i| (0..3).map(move |d| (i, d)))
                .filter(|&(i, d)| normals[i][d] != 0.0)
                .map(|(i, d)| (i as u32, (3 * i + d) as u32, -normals[i][d]))
                .collect();
            inputs.push((x.inc_control, Partials::Sparse(p)));
        }
        let b = tape.custom(b, n, 1, inputs);

        let gamma = match lu {
            Some(lu) => tape.solve_factored(a, b, lu)?,
            None => tape.solve(a, b)?,
        };

        // Influence of γ on the x and z velocity at the bound midpoints.
        let w = if d_alpha {
            self.wake(Dual::<1>::seed(av, 0), &self.bound_mid)
        } else {
            self.wake(Dual::<1>::constant(av), &self.bound_mid)
        };
        let mut infl = Vec::with_capacity(2);
        for d in [0usize, 2] {
            let mut val = self.bound_bm[d].clone();
            let mut p = Vec::new();
            for i in 0..n {
                for (k, &j) in self.trailing.iter().enumerate() {
                    val[i * n + j] += w[i * t + k][d].v;
                    if d_alpha {
                        p.push(((i * n + j) as u32, 0, w[i * t + k][d].d[0]));
                    }
                }
            }
            let inputs = if d_alpha {
                vec![(alpha, Partials::Sparse(p))]
            } else {
                Vec::new()
            };
            infl.push(tape.custom(val, n, n, inputs));
        }

        let (sa, ca) = (tape.sin(alpha), tape.cos(alpha));
        let vx = tape.mul(x.v, ca);
        let vx = tape.neg(vx);
        let vz = tape.mul(x.v, sa);
        let ix: Vec<usize> = (0..n).map(|i| 3 * i).collect();
        let iz: Vec<usize> = (0..n).map(|i| 3 * i + 2).collect();
        let inc_x = tape.gather(x.inc_bound, &ix, n, 1);
        let inc_z = tape.gather(x.inc_bound, &iz, n, 1);
        let ux = tape.matmul(infl[0], gamma);
        let ux = tape.add(ux, inc_x);
        let ux = tape.add(ux, vx);
        let uz = tape.matmul(infl[1], gamma);
        let uz = tape.add(uz, inc_z);
        let uz = tape.add(uz, vz);

        let gv = tape.value(gamma).to_vec();
        let net_val = self.net_gamma(&gv);
        let mut p = Vec::with_capacity(2 * n);
        for k in 0..n {
            p.push((k as u32, k as u32, 1.0));
            if let Some(up) = self.upstream[k] {
                p.push((k as u32, up as u32, -1.0));
            }
        }
        let net = tape.custom(net_val, n, 1, vec![(gamma, Partials::Sparse(p))]);

        // u × l with l = (0, dy, 0): dF = ρΓ(−u_z·dy, 0, u_x·dy).
        let rho = self.reference.density;
        let dy: Vec<f64> = self.bound_vec.iter().map(|l| l[1]).collect();
        let zeros = vec![0.0; n];
        let fz = tape.mul(net, ux);
        let fz = tape.row_affine(fz, &dy.iter().map(|l| rho * l).collect::<Vec<_>>(), &zeros);
        let fx = tape.mul(net, uz);
        let fx = tape.row_affine(fx, &dy.iter().map(|l| -rho * l).collect::<Vec<_>>(), &zeros);
        let force_x = tape.sum(fx);
        let force_z = tape.sum(fz);
        let arm = |d: usize, tape: &mut Tape| {
            tape.constant_tensor(self.arms.iter().map(|r| r[d]).collect(), n, 1)
        };
        let (ax, ay, az) = (arm(0, tape), arm(1, tape), arm(2, tape));
        let moment_x = tape.dot(fz, ay);
        let zfx = tape.dot(fx, az);
        let xfz = tape.dot(fz, ax);
        let moment_y = tape.sub(zfx, xfz);

        let l1 = tape.mul(force_x, sa);
        let l2 = tape.mul(force_z, ca);
        let lift = tape.add(l1, l2);
        let d1 = tape.mul(force_z, sa);
        let d2 = tape.mul(force_x, ca);
        let drag = tape.sub(d1, d2);

        let floor = tape.constant(V_FLOOR);
        let vq = tape.max(x.v, floor);
        let vq = tape.square(vq);
        let qs = tape.scale(vq, 0.5 * rho * self.reference.area);
        let cl = tape.div(lift, qs);
        let cd = tape.div(drag, qs);
        let roll = tape.div(moment_x, qs);
        let roll = tape.scale(roll, 1.0 / self.reference.span);
        let pitch = tape.div(moment_y, qs);
        let pitch = tape.scale(pitch, -1.0 / self.reference.chord);
        Ok(tape.concat(&[cl, cd, roll, pitch]))
    }
}

/// Convenience: the flat list of a tape's `n × 3` increment for use with
/// [`VlmModel::solve`].
pub fn as_points(flat: &[f64]) -> Vec<V3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::compare;
    use crate::geometry::{build_mesh, build_wing_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wing_reference(span: f64, chord: f64) -> Reference {
        Reference {
            area: span * chord,
            span,
            chord,
            point: [0.0; 3],
            density: 1.225,
        }
    }

    fn nominal() -> (PanelMesh, VlmModel) {
        let c = AircraftConfig::default();
        let mesh = build_mesh(&c).unwrap();
        let m = VlmModel::new(&mesh, Reference::from_config(&c)).unwrap();
        (mesh, m)
    }

    #[test]
    fn square_ring_center_velocity() {
        let s = 0.7;
        let h = 0.5 * s;
        // Counter-clockwise seen from +z: induced velocity along +z.
        let ring = [[h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0], [-h, -h, 0.0]];
        let v = ring_induced_velocity(&ring, 1.0, [0.0; 3]);
        let exact = 2.0 * 2f64.sqrt() / (PI * s);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        assert!((v[2] - exact).abs() <= 1e-8 * exact, "{} vs {exact}", v[2]);
        assert_eq!(ring_induced_velocity(&ring, 0.0, [0.3, 0.1, 0.2]), [0.0; 3]);
    }

    #[test]
    fn ring_far_field_decays_like_a_doublet() {
        let ring = [
            [0.5, -0.5, 0.0],
            [0.5, 0.5, 0.0],
            [-0.5, 0.5, 0.0],
            [-0.5, -0.5, 0.0],
        ];
        let dir = [0.3, -0.4, 0.866];
        let nd = norm(dir);
        for r in [100.0, 250.0] {
            let p1 = dir.map(|c| c / nd * r);
            let p2 = dir.map(|c| c / nd * 2.0 * r);
            let ratio = norm(ring_induced_velocity(&ring, 1.0, p1))
                / norm(ring_induced_velocity(&ring, 1.0, p2));
            assert!((ratio / 8.0 - 1.0).abs() < 0.05, "ratio {ratio}");
        }
    }

    #[test]
    fn semi_infinite_matches_long_segment() {
        let a = [0.1, 0.2, -0.1];
        let e = [0.6, 0.0, 0.8];
        let p = [0.5, -0.3, 0.4];
        let far = [a[0] + 1e7 * e[0], a[1], a[2] + 1e7 * e[2]];
        let s = segment_velocity(a, far, p, 0.0);
        let q = semi_infinite_velocity(a, e, p, 0.0);
        for d in 0..3 {
            assert!((s[d] - q[d]).abs() <= 1e-8 * norm(q));
        }
    }

    #[test]
    fn single_panel_aic_is_ring_velocity_dot_normal() {
        let mesh = build_wing_mesh(1.0, 0.5, 1, 1).unwrap();
        let m = VlmModel::new(&mesh, wing_reference(1.0, 0.5)).unwrap();
        let alpha = 3f64.to_radians();
        let a = m.aic(alpha, 0.0);
        assert_eq!(a.len(), 1);
        let p = &mesh.panels[0];
        let r = p.ring;
        let x = p.control;
        let e = wind_direction(alpha);
        let core = CORE_FRACTION * 0.5;
        let mut v = [0.0; 3];
        for (s, t) in [(r[0], r[1]), (r[1], r[2]), (r[3], r[0])] {
            let w = segment_velocity(s, t, x, core);
            (0..3).for_each(|d| v[d] += w[d]);
        }
        let w3 = semi_infinite_velocity(r[2], e, x, core);
        let w4 = semi_infinite_velocity(r[3], e, x, core);
        (0..3).for_each(|d| v[d] += w3[d] - w4[d]);
        assert!((a[0] - dot(v, p.normal)).abs() <= 1e-14);
        assert!(a[0].abs() > 0.0);
    }

    #[test]
    fn aic_commutes_with_mirror_permutation() {
        let (mesh, m) = nominal();
        let n = m.len();
        let a = m.aic(4f64.to_radians(), 6f64.to_radians());
        let p = &mesh.mirror;
        for i in 0..n {
            assert!(a[i * n + i].abs() > 0.0 && a[i * n + i].is_finite());
            for j in 0..n {
                assert!(
                    (a[i * n + j] - a[p[i] * n + p[j]]).abs() <= 1e-10,
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn rhs_examples() {
        let (mesh, _) = nominal();
        let n = mesh.len();
        assert!(assemble_rhs(&mesh, &OnsetFlow::uniform([0.0; 3], n))
            .iter()
            .all(|&b| b == 0.0));
        let flat = assemble_rhs(&mesh, &OnsetFlow::uniform(freestream(30.0, 0.0), n));
        assert!(flat.iter().all(|&b| b.abs() <= 1e-15));
        let b = assemble_rhs(&mesh, &OnsetFlow::uniform(freestream(30.0, 5.0), n));
        let exact = -30.0 * 5f64.to_radians().sin();
        assert!(b.iter().all(|&x| (x - exact).abs() <= 1e-13));
    }

    #[test]
    fn circulation_solve_examples() {
        let s = solve_circulations(&[1.0, 0.0, 0.0, 1.0], &[3.0, -2.0]).unwrap();
        assert_eq!(s.gamma, vec![3.0, -2.0]);
        let s = solve_circulations(&[2.0, 0.0, 0.0, 4.0], &[2.0, 8.0]).unwrap();
        assert_eq!(s.gamma, vec![1.0, 2.0]);
        assert!(matches!(
            solve_circulations(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn forces_examples() {
        let (mesh, m) = nominal();
        let n = mesh.len();
        let onset = OnsetFlow::uniform(freestream(20.0, 4.0), n);
        let (f, mo) = m.compute_forces(&vec![0.0; n], &onset, 4f64.to_radians());
        assert_eq!((f, mo), ([0.0; 3], [0.0; 3]));

        let wing = build_wing_mesh(1.0, 1.0, 1, 1).unwrap();
        let mut r = wing_reference(1.0, 1.0);
        r.point = [0.3, 0.0, 0.0];
        let m1 = VlmModel::new(&wing, r).unwrap();
        let u = [-10.0, 0.5, 1.5];
        let onset = OnsetFlow::uniform(u, 1);
        let (f, mo) = m1.compute_forces(&[1.0], &onset, 0.0);
        let ind = m1.induced_at_bound(&[1.0], 0.0)[0];
        let local = [u[0] + ind[0], u[1] + ind[1], u[2] + ind[2]];
        // ρ·(u × l) with l = (0, 1, 0).
        let hand = [-1.225 * local[2], 0.0, 1.225 * local[0]];
        for d in 0..3 {
            assert!((f[d] - hand[d]).abs() <= 1e-12);
        }
        let arm = sub(wing.panels[0].bound_mid, [0.3, 0.0, 0.0]);
        let hm = cross(arm, hand);
        for d in 0..3 {
            assert!((mo[d] - hm[d]).abs() <= 1e-12);
        }
    }

    #[test]
    fn coefficient_normalization() {
        let r = wing_reference(2.0, 0.5);
        let z = coefficients([0.0; 3], [0.0; 3], 20.0, 3.0, &r);
        assert_eq!(z, AeroCoefficients::default());
        let qs = r.dynamic_pressure(20.0) * r.area;
        let c = coefficients([0.0, 0.0, qs], [0.0; 3], 20.0, 0.0, &r);
        assert!((c.cl - 1.0).abs() < 1e-15);
        let h = coefficients([0.0, 0.0, 10.0], [1.0, 1.0, 0.0], 0.0, 0.0, &r);
        assert!(h.is_finite());
        assert_eq!(r.dynamic_pressure(0.0), 0.5 * 1.225);
    }

    #[test]
    fn lift_slope_matches_lifting_line() {
        let (span, chord) = (4.0, 0.5);
        let ar = span / chord;
        let mesh = build_wing_mesh(span, chord, 40, 4).unwrap();
        let m = VlmModel::new(&mesh, wing_reference(span, chord)).unwrap();
        let z = vec![[0.0; 3]; mesh.len()];
        let cl = m.solve(30.0, 5.0, 0.0, &z, &z).unwrap().coefficients.cl;
        let ll = 2.0 * PI * 5f64.to_radians() / (1.0 + 2.0 / ar);
        assert!((cl / ll - 1.0).abs() < 0.10, "CL {cl} vs {ll}");
        let slope = (m.solve(30.0, 2.0, 0.0, &z, &z).unwrap().coefficients.cl
            - m.solve(30.0, -2.0, 0.0, &z, &z).unwrap().coefficients.cl)
            / 4f64.to_radians();
        let expected = 2.0 * PI * ar / (ar + 2.0);
        assert!(
            (slope / expected - 1.0).abs() < 0.10,
            "slope {slope} vs {expected}"
        );
    }

    #[test]
    fn zero_incidence_gives_zero_coefficients() {
        let (mesh, m) = nominal();
        let z = vec![[0.0; 3]; mesh.len()];
        let s = m.solve(30.0, 0.0, 0.0, &z, &z).unwrap();
        let c = s.coefficients;
        assert!(c.cl.abs() <= 1e-10 && c.c_roll.abs() <= 1e-10 && c.cm.abs() <= 1e-10);
        assert!(s.circulation.residual_norm <= RESIDUAL_TOL);
    }

    #[test]
    fn circulation_is_linear_in_onset() {
        let (mesh, m) = nominal();
        let n = mesh.len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let onset = OnsetFlow {
            control: (0..n)
                .map(|_| [0.0; 3].map(|_: f64| rng.gen_range(-5.0..5.0)))
                .collect(),
            bound: vec![[0.0; 3]; n],
        };
        let deflected = crate::geometry::apply_elevator_deflection(&mesh, 5.0);
        let a = m.aic(0.1, 5f64.to_radians());
        let g1 = solve_circulations(&a, &assemble_rhs(&deflected, &onset)).unwrap();
        let g2 = solve_circulations(&a, &assemble_rhs(&deflected, &onset.scaled(2.0))).unwrap();
        for (x, y) in g1.gamma.iter().zip(&g2.gamma) {
            assert!((2.0 * x - y).abs() <= 1e-10 * y.abs().max(1e-12));
        }
    }

    #[test]
    fn symmetric_flight_has_no_roll_and_symmetric_circulation() {
        let (mesh, m) = nominal();
        let z = vec![[0.0; 3]; mesh.len()];
        let s = m.solve(25.0, 6.0, -4.0, &z, &z).unwrap();
        let r = m.reference();
        assert!(s.coefficients.c_roll.abs() <= 1e-6);
        assert!(s.moment[0].abs() <= 1e-6 * r.dynamic_pressure(25.0) * r.area * r.span);
        for (i, &j) in mesh.mirror.iter().enumerate() {
            assert!((s.circulation.gamma[i] - s.circulation.gamma[j]).abs() <= 1e-8);
        }
        assert!(s.coefficients.cl > 0.0);
    }

    #[test]
    fn positive_elevator_raises_lift_and_pitches_down() {
        let (mesh, m) = nominal();
        let z = vec![[0.0; 3]; mesh.len()];
        let a = m.solve(30.0, 2.0, 0.0, &z, &z).unwrap().coefficients;
        let b = m.solve(30.0, 2.0, 10.0, &z, &z).unwrap().coefficients;
        assert!(b.cl > a.cl && b.cm < a.cm);
    }

    fn random_increments(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..3 * n).map(|_| rng.gen_range(-3.0..3.0)).collect()
    }

    #[test]
    fn tape_path_matches_value_path_and_is_deterministic() {
        let (mesh, m) = nominal();
        let n = mesh.len();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ic, ib) = (
            random_increments(n, &mut rng),
            random_increments(n, &mut rng),
        );
        let s = m
            .solve(22.0, 7.0, -6.0, &as_points(&ic), &as_points(&ib))
            .unwrap();
        let run = || {
            let mut t = Tape::no_grad();
            let vars = VlmVars {
                v: t.var(22.0),
                alpha_deg: t.var(7.0),
                theta_elev_deg: t.var(-6.0),
                inc_control: t.var_tensor(ic.clone(), n, 3),
                inc_bound: t.var_tensor(ib.clone(), n, 3),
            };
            let out = m.record(&mut t, &vars, None).unwrap();
            t.value(out).to_vec()
        };
        let c = run();
        let e = s.coefficients.to_array();
        for k in 0..4 {
            assert!(
                (c[k] - e[k]).abs() <= 1e-12 * e[k].abs().max(1.0),
                "{k}: {} vs {}",
                c[k],
                e[k]
            );
        }
        assert_eq!(run(), c);
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let (mesh, m) = nominal();
        let n = mesh.len();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (ic, ib) = (
            random_increments(n, &mut rng),
            random_increments(n, &mut rng),
        );
        let x0 = [18.0, 6.0, 4.0];
        let eval = |x: &[f64], ic: &[f64], ib: &[f64], grad: bool| {
            let mut t = if grad { Tape::new() } else { Tape::no_grad() };
            let vars = VlmVars {
                v: t.var(x[0]),
                alpha_deg: t.var(x[1]),
                theta_elev_deg: t.var(x[2]),
                inc_control: t.var_tensor(ic.to_vec(), n, 3),
                inc_bound: t.var_tensor(ib.to_vec(), n, 3),
            };
            let out = m.record(&mut t, &vars, None).unwrap();
            (t, vars, out)
        };
        let (t, vars, out) = eval(&x0, &ic, &ib, true);
        let jac = t.jacobian(out, &[vars.v, vars.alpha_deg, vars.theta_elev_deg]);
        let h = 1e-5;
        for k in 0..4 {
            let mut an = Vec::new();
            let mut nu = Vec::new();
            for p in 0..3 {
                let step = h * x0[p].abs().max(1.0);
                let mut xp = x0;
                xp[p] += step;
                let mut xm = x0;
                xm[p] -= step;
                let (tp, _, op) = eval(&xp, &ic, &ib, false);
                let (tm, _, om) = eval(&xm, &ic, &ib, false);
                an.push(jac[k * 3 + p]);
                nu.push((tp.value(op)[k] - tm.value(om)[k]) / (2.0 * step));
            }
            let r = compare(an, nu);
            assert!(r.max_rel_error <= 1e-6, "output {k}: {r:?}");
        }
        // Increments: directional derivative along a random direction.
        let dir_c = random_increments(n, &mut rng);
        let dir_b = random_increments(n, &mut rng);
        let g = t.backward_seeded(out, &[1.0, 0.5, -2.0, 3.0]);
        let an: f64 = g
            .wrt(vars.inc_control)
            .iter()
            .zip(&dir_c)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + g.wrt(vars.inc_bound)
                .iter()
                .zip(&dir_b)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        let shifted = |s: f64| {
            let c: Vec<f64> = ic.iter().zip(&dir_c).map(|(a, b)| a + s * b).collect();
            let b: Vec<f64> = ib.iter().zip(&dir_b).map(|(a, b)| a + s * b).collect();
            let (t, _, o) = eval(&x0, &c, &b, false);
            let v = t.value(o);
            v[0] + 0.5 * v[1] - 2.0 * v[2] + 3.0 * v[3]
        };
        let nu = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
        assert!((an - nu).abs() <= 1e-6 * nu.abs().max(1e-8), "{an} vs {nu}");
    }

    #[test]
    fn cached_factorization_rejects_variable_angles() {
        let (mesh, m) = nominal();
        let n = mesh.len();
        let lu = m.factor(3.0, 0.0).unwrap();
        let mut t = Tape::new();
        let vars = VlmVars {
            v: t.var(20.0),
            alpha_deg: t.var(3.0),
            theta_elev_deg: t.constant(0.0),
            inc_control: t.constant_tensor(vec![0.0; 3 * n], n, 3),
            inc_bound: t.constant_tensor(vec![0.0; 3 * n], n, 3),
        };
        assert!(matches!(
            m.record(&mut t, &vars, Some(lu.clone())),
            Err(Error::InvalidArgument(_))
        ));
        let vars = VlmVars {
            alpha_deg: t.constant(3.0),
            ..vars
        };
        let out = m.record(&mut t, &vars, Some(lu)).unwrap();
        let z = vec![[0.0; 3]; n];
        let e = m
            .solve(20.0, 3.0, 0.0, &z, &z)
            .unwrap()
            .coefficients
            .to_array();
        for k in 0..4 {
            assert!((t.value(out)[k] - e[k]).abs() <= 1e-12);
        }
    }
}
