//! Aircraft configuration, lifting-surface mesh and control kinematics.
//!
//! Body frame: x forward, y to port, z up. The reference point (default the
//! wing quarter-chord at y = 0) is the origin of the moment computation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Unit-vector tolerance used by the validators.
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WingConfig {
    pub span: f64,
    pub chord: f64,
    pub panels_spanwise: usize,
    pub panels_chordwise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub span: f64,
    pub chord: f64,
    /// x-distance from the wing quarter-chord back to the tail quarter-chord.
    pub arm: f64,
    /// z-offset of the tail plane above the wing plane.
    pub height: f64,
    pub elevator_chord_fraction: f64,
    pub panels_spanwise: usize,
    pub panels_chordwise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub area: f64,
    pub span: f64,
    pub chord: f64,
    #[serde(default)]
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirConfig {
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropGroup {
    Starboard,
    Port,
    Hover,
}

impl PropGroup {
    pub fn mirrored(self) -> Self {
        match self {
            PropGroup::Starboard => PropGroup::Port,
            PropGroup::Port => PropGroup::Starboard,
            PropGroup::Hover => PropGroup::Hover,
        }
    }

    /// Index into the six transfer-parameter magnitudes (axial, tangential pairs).
    pub fn index(self) -> usize {
        match self {
            PropGroup::Starboard => 0,
            PropGroup::Port => 1,
            PropGroup::Hover => 2,
        }
    }
}

/// Linear chord and twist distributions over the blade, root to tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BladeConfig {
    /// Radial stations between hub and tip.
    pub stations: usize,
    /// Hub radius as a fraction of the tip radius.
    pub hub_fraction: f64,
    /// Chord at the hub and tip as fractions of the tip radius.
    pub chord_root: f64,
    pub chord_tip: f64,
    /// Geometric pitch angle at hub and tip [deg].
    pub twist_root: f64,
    pub twist_tip: f64,
}

impl Default for BladeConfig {
    fn default() -> Self {
        BladeConfig {
            stations: 12,
            hub_fraction: 0.15,
            chord_root: 0.12,
            chord_tip: 0.12,
            twist_root: 30.0,
            twist_tip: 12.0,
        }
    }
}

impl BladeConfig {
    /// Chord over tip radius at radial fraction `f`.
    pub fn chord_at(&self, f: f64) -> f64 {
        let t = (f - self.hub_fraction) / (1.0 - self.hub_fraction);
        self.chord_root + t * (self.chord_tip - self.chord_root)
    }

    /// Pitch angle [deg] at radial fraction `f`.
    pub fn twist_at(&self, f: f64) -> f64 {
        let t = (f - self.hub_fraction) / (1.0 - self.hub_fraction);
        self.twist_root + t * (self.twist_tip - self.twist_root)
    }

    /// Station midpoints as radial fractions, and the annulus width fraction.
    pub fn stations(&self) -> (Vec<f64>, f64) {
        let w = (1.0 - self.hub_fraction) / self.stations as f64;
        let f = (0..self.stations)
            .map(|k| self.hub_fraction + (k as f64 + 0.5) * w)
            .collect();
        (f, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropellerDisc {
    pub name: String,
    pub group: PropGroup,
    pub hub: [f64; 3],
    /// Thrust direction at zero tilt.
    pub axis: [f64; 3],
    pub radius: f64,
    pub blade_count: usize,
    /// +1 or −1; sign of the swirl imparted about `axis`.
    pub spin: f64,
    #[serde(default)]
    pub tiltable: bool,
    #[serde(default)]
    pub blade: BladeConfig,
}

impl PropellerDisc {
    fn validate(&self) -> Result<()> {
        let n = norm(self.axis);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Config(format!(
                "propeller '{}': axis norm {n} is not 1",
                self.name
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!(
                "propeller '{}': radius must be positive",
                self.name
            )));
        }
        if self.blade_count < 2 {
            return Err(Error::Config(format!(
                "propeller '{}': needs at least 2 blades",
                self.name
            )));
        }
        if self.spin != 1.0 && self.spin != -1.0 {
            return Err(Error::Config(format!(
                "propeller '{}': spin must be +1 or -1",
                self.name
            )));
        }
        let b = &self.blade;
        if b.stations == 0 || !(b.hub_fraction >= 0.0 && b.hub_fraction < 1.0) {
            return Err(Error::Config(format!(
                "propeller '{}': blade needs stations >= 1 and hub_fraction in [0, 1)",
                self.name
            )));
        }
        if !(b.chord_root > 0.0 && b.chord_tip > 0.0) {
            return Err(Error::Config(format!(
                "propeller '{}': blade chord must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// Rotates a tiltable disc's axis about body y: 0° is +x (cruise), 90° is +z (hover).
pub fn tilt_propeller(disc: &PropellerDisc, theta_deg: f64) -> Result<PropellerDisc> {
    if !disc.tiltable {
        return Err(Error::InvalidArgument(format!(
            "propeller '{}' is not tiltable",
            disc.name
        )));
    }
    let mut out = disc.clone();
    out.axis = tilt_axis(theta_deg.to_radians());
    Ok(out)
}

/// Tilted thrust axis for tilt angle `theta` [rad].
pub fn tilt_axis<R: Real>(theta: R) -> [R; 3] {
    [theta.cos(), R::cst(0.0), theta.sin()]
}

/// Elevator normal for deflection `theta` [rad], trailing edge down positive.
pub fn elevator_normal<R: Real>(theta: R) -> [R; 3] {
    [-theta.sin(), R::cst(0.0), theta.cos()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftConfig {
    pub wing: WingConfig,
    pub tail: TailConfig,
    pub reference: ReferenceConfig,
    pub air: AirConfig,
    #[serde(rename = "propeller")]
    pub propellers: Vec<PropellerDisc>,
}

impl Default for AircraftConfig {
    /// Nominal six-rotor configuration. Dimensions are assumptions, not a
    /// published airframe.
    fn default() -> Self {
        let tip = |name: &str, group, y: f64, spin| PropellerDisc {
            name: name.into(),
            group,
            hub: [0.325, y, 0.05],
            axis: [1.0, 0.0, 0.0],
            radius: 0.3,
            blade_count: 2,
            spin,
            tiltable: true,
            blade: BladeConfig::default(),
        };
        let hover = |name: &str, x: f64, y: f64, spin| PropellerDisc {
            name: name.into(),
            group: PropGroup::Hover,
            hub: [x, y, 0.15],
            axis: [0.0, 0.0, 1.0],
            radius: 0.25,
            blade_count: 2,
            spin,
            tiltable: false,
            blade: BladeConfig::default(),
        };
        AircraftConfig {
            wing: WingConfig {
                span: 4.0,
                chord: 0.5,
                panels_spanwise: 20,
                panels_chordwise: 4,
            },
            tail: TailConfig {
                span: 1.6,
                chord: 0.35,
                arm: 2.0,
                height: 0.25,
                elevator_chord_fraction: 0.5,
                panels_spanwise: 8,
                panels_chordwise: 2,
            },
            reference: ReferenceConfig {
                area: 2.0,
                span: 4.0,
                chord: 0.5,
                point: [0.0; 3],
            },
            air: AirConfig { density: 1.225 },
            propellers: vec![
                tip("starboard", PropGroup::Starboard, -2.0, 1.0),
                tip("port", PropGroup::Port, 2.0, -1.0),
                hover("hover_front_right", 0.2, -0.9, 1.0),
                hover("hover_front_left", 0.2, 0.9, -1.0),
                hover("hover_rear_right", -0.45, -0.9, -1.0),
                hover("hover_rear_left", -0.45, 0.9, 1.0),
            ],
        }
    }
}

impl AircraftConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: AircraftConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("aircraft config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wing.span", self.wing.span),
            ("wing.chord", self.wing.chord),
            ("tail.span", self.tail.span),
            ("tail.chord", self.tail.chord),
            ("tail.arm", self.tail.arm),
            ("reference.area", self.reference.area),
            ("reference.span", self.reference.span),
            ("reference.chord", self.reference.chord),
            ("air.density", self.air.density),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("wing.panels_spanwise", self.wing.panels_spanwise),
            ("wing.panels_chordwise", self.wing.panels_chordwise),
            ("tail.panels_spanwise", self.tail.panels_spanwise),
            ("tail.panels_chordwise", self.tail.panels_chordwise),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let f = self.tail.elevator_chord_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "tail.elevator_chord_fraction must be in (0, 1), got {f}"
            )));
        }
        if self.propellers.len() != 6 {
            return Err(Error::Config(format!(
                "expected exactly 6 propellers, got {}",
                self.propellers.len()
            )));
        }
        for p in &self.propellers {
            p.validate()?;
        }
        let tilt: Vec<_> = self.propellers.iter().filter(|p| p.tiltable).collect();
        if tilt.len() != 2 {
            return Err(Error::Config(format!(
                "expected exactly 2 tiltable propellers, got {}",
                tilt.len()
            )));
        }
        for p in &tilt {
            if (p.hub[1].abs() - 0.5 * self.wing.span).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "tiltable propeller '{}' must sit at a wing tip (|y| = {})",
                    p.name,
                    0.5 * self.wing.span
                )));
            }
            if p.group == PropGroup::Hover {
                return Err(Error::Config(format!(
                    "tiltable propeller '{}' cannot be in the hover group",
                    p.name
                )));
            }
        }
        for g in [PropGroup::Starboard, PropGroup::Port] {
            let n = self
                .propellers
                .iter()
                .filter(|p| p.group == g && p.tiltable)
                .count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "group {g:?} needs exactly one tiltable propeller"
                )));
            }
        }
        let hover = self
            .propellers
            .iter()
            .filter(|p| p.group == PropGroup::Hover)
            .count();
        if hover != 4 {
            return Err(Error::Config(format!(
                "hover group needs exactly 4 propellers, got {hover}"
            )));
        }
        Ok(())
    }

    /// Reflection about the x–z plane: props move to −y, swap starboard/port
    /// roles and reverse spin.
    pub fn mirrored(&self) -> Self {
        let mut c = self.clone();
        for p in &mut c.propellers {
            p.hub[1] = -p.hub[1];
            p.axis[1] = -p.axis[1];
            p.spin = -p.spin;
            p.group = p.group.mirrored();
        }
        c.reference.point[1] = -c.reference.point[1];
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surface {
    Wing,
    Tail,
    Elevator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// Geometric panel corners: front-right, front-left, aft-left, aft-right.
    pub corners: [[f64; 3]; 4],
    /// Vortex-ring corners in the same order, shifted aft by a quarter panel chord.
    pub ring: [[f64; 3]; 4],
    /// Three-quarter panel chord, midspan.
    pub control: [f64; 3],
    pub normal: [f64; 3],
    /// Midpoint and vector of the ring's front (bound) segment, right to left.
    pub bound_mid: [f64; 3],
    pub bound_vec: [f64; 3],
    pub area: f64,
    pub surface: Surface,
    /// Spanwise strip and chordwise row within the owning surface.
    pub strip: usize,
    pub row: usize,
    /// Panel directly upstream in the same strip.
    pub upstream: Option<usize>,
    /// Last chordwise row: its ring sheds the semi-infinite wake.
    pub trailing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelMesh {
    pub panels: Vec<Panel>,
    /// Panels of the left/right mirror image, index for index.
    pub mirror: Vec<usize>,
}

impl PanelMesh {
    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.panels.iter().map(|p| p.area).sum()
    }

    pub fn trailing_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.panels[i].trailing)
            .collect()
    }

    pub fn elevator_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.panels[i].surface == Surface::Elevator)
            .collect()
    }
}

struct SurfaceSpec {
    span: f64,
    chord: f64,
    /// Leading-edge x and plane z.
    le_x: f64,
    z: f64,
    ns: usize,
    nc: usize,
    /// Rows with index ≥ this are elevator panels.
    elevator_from: Option<usize>,
    tag: Surface,
}

/// Builds the wing and tail vortex-ring mesh.
///
/// Panels are ordered surface by surface (wing, then tail), strip by strip from
/// starboard to port, and front to aft within a strip.
pub fn build_mesh(config: &AircraftConfig) -> Result<PanelMesh> {
    config.validate()?;
    let w = &config.wing;
    let t = &config.tail;
    let tail_nc = t.panels_chordwise;
    let elevator_from = (0..tail_nc)
        .find(|&i| (i as f64 + 0.5) / tail_nc as f64 >= 1.0 - t.elevator_chord_fraction)
        .unwrap_or(tail_nc - 1);
    let specs = [
        SurfaceSpec {
            span: w.span,
            chord: w.chord,
            le_x: 0.25 * w.chord,
            z: 0.0,
            ns: w.panels_spanwise,
            nc: w.panels_chordwise,
            elevator_from: None,
            tag: Surface::Wing,
        },
        SurfaceSpec {
            span: t.span,
            chord: t.chord,
            le_x: -t.arm + 0.25 * t.chord,
            z: t.height,
            ns: t.panels_spanwise,
            nc: tail_nc,
            elevator_from: Some(elevator_from),
            tag: Surface::Tail,
        },
    ];
    Ok(mesh_from_surfaces(&specs))
}

/// Isolated rectangular flat-plate wing with its leading edge at `x = chord/4`.
pub fn build_wing_mesh(
    span: f64,
    chord: f64,
    panels_spanwise: usize,
    panels_chordwise: usize,
) -> Result<PanelMesh> {
    if !(span > 0.0 && chord > 0.0) || panels_spanwise == 0 || panels_chordwise == 0 {
        return Err(Error::Config(
            "wing dimensions and panel counts must be positive".into(),
        ));
    }
    Ok(mesh_from_surfaces(&[SurfaceSpec {
        span,
        chord,
        le_x: 0.25 * chord,
        z: 0.0,
        ns: panels_spanwise,
        nc: panels_chordwise,
        elevator_from: None,
        tag: Surface::Wing,
    }]))
}

fn mesh_from_surfaces(specs: &[SurfaceSpec]) -> PanelMesh {
    let mut panels = Vec::new();
    let mut mirror = Vec::new();
    for s in specs {
        let offset = panels.len();
        let dy = s.span / s.ns as f64;
        let dx = s.chord / s.nc as f64;
        for j in 0..s.ns {
            let y_r = -0.5 * s.span + j as f64 * dy;
            let y_l = if j + 1 == s.ns {
                0.5 * s.span
            } else {
                y_r + dy
            };
            for i in 0..s.nc {
                let x_f = s.le_x - i as f64 * dx;
                let x_a = x_f - dx;
                let corners = [
                    [x_f, y_r, s.z],
                    [x_f, y_l, s.z],
                    [x_a, y_l, s.z],
                    [x_a, y_r, s.z],
                ];
                let (rf, ra) = (x_f - 0.25 * dx, x_a - 0.25 * dx);
                let ring = [
                    [rf, y_r, s.z],
                    [rf, y_l, s.z],
                    [ra, y_l, s.z],
                    [ra, y_r, s.z],
                ];
                let y_m = 0.5 * (y_r + y_l);
                let surface = match s.elevator_from {
                    Some(k) if i >= k => Surface::Elevator,
                    _ => s.tag,
                };
                panels.push(Panel {
                    corners,
                    ring,
                    control: [x_f - 0.75 * dx, y_m, s.z],
                    normal: [0.0, 0.0, 1.0],
                    bound_mid: [rf, y_m, s.z],
                    bound_vec: [0.0, y_l - y_r, 0.0],
                    area: (y_l - y_r) * dx,
                    surface,
                    strip: j,
                    row: i,
                    upstream: (i > 0).then(|| panels.len() - 1),
                    trailing: i + 1 == s.nc,
                });
                mirror.push(offset + (s.ns - 1 - j) * s.nc + i);
            }
        }
    }
    PanelMesh { panels, mirror }
}

/// Rotates elevator normals by `theta_deg` about the hinge (body y), trailing
/// edge down positive. Other panels are untouched.
pub fn apply_elevator_deflection(mesh: &PanelMesh, theta_deg: f64) -> PanelMesh {
    if !(-15.0..=15.0).contains(&theta_deg) {
        log::warn!("elevator deflection {theta_deg} deg is outside [-15, 15]");
    }
    let mut out = mesh.clone();
    if theta_deg == 0.0 {
        return out;
    }
    let n = elevator_normal(theta_deg.to_radians());
    for p in out
        .panels
        .iter_mut()
        .filter(|p| p.surface == Surface::Elevator)
    {
        p.normal = n;
    }
    out
}

pub fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[test]
    fn panel_count_matches_surfaces() {
        let mut c = AircraftConfig::default();
        c.wing.panels_spanwise = 10;
        c.wing.panels_chordwise = 4;
        c.tail.panels_spanwise = 6;
        c.tail.panels_chordwise = 2;
        assert_eq!(build_mesh(&c).unwrap().len(), 52);
        let m = build_mesh(&AircraftConfig::default()).unwrap();
        assert_eq!(m.len(), 96);
        assert_eq!(m.trailing_indices().len(), 28);
        assert_eq!(m.elevator_indices().len(), 8);
    }

    #[test]
    fn total_area_matches_planform() {
        for (ns, nc) in [(1, 1), (7, 3), (20, 4), (13, 5)] {
            let mut c = AircraftConfig::default();
            c.wing.panels_spanwise = ns;
            c.wing.panels_chordwise = nc;
            c.wing.span = 3.7;
            c.wing.chord = 0.41;
            for p in c.propellers.iter_mut().filter(|p| p.tiltable) {
                p.hub[1] = p.hub[1].signum() * 1.85;
            }
            let m = build_mesh(&c).unwrap();
            let exact = 3.7 * 0.41 + c.tail.span * c.tail.chord;
            assert!((m.total_area() - exact).abs() <= 1e-10 * exact);
        }
    }

    #[test]
    fn control_points_inside_panels_and_normals_unit() {
        let m = build_mesh(&AircraftConfig::default()).unwrap();
        for p in &m.panels {
            let xs = p.corners.map(|c| c[0]);
            let ys = p.corners.map(|c| c[1]);
            let inside = |v: f64, a: [f64; 4]| {
                let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                v > lo && v < hi
            };
            assert!(inside(p.control[0], xs) && inside(p.control[1], ys));
            assert!((norm(p.normal) - 1.0).abs() <= UNIT_TOL);
        }
    }

    #[test]
    fn mirror_config_reflects_mesh() {
        let c = AircraftConfig::default();
        let a = build_mesh(&c).unwrap();
        let b = build_mesh(&c.mirrored()).unwrap();
        let refl = |p: [f64; 3]| [p[0], -p[1], p[2]];
        for (i, p) in a.panels.iter().enumerate() {
            let q = &b.panels[a.mirror[i]];
            // Mirroring swaps the right/left corner roles.
            let order = [1, 0, 3, 2];
            for k in 0..4 {
                let r = refl(p.corners[k]);
                for d in 0..3 {
                    assert!((r[d] - q.corners[order[k]][d]).abs() <= 1e-12);
                }
            }
            let r = refl(p.control);
            for d in 0..3 {
                assert!((r[d] - q.control[d]).abs() <= 1e-12);
            }
            assert_eq!(a.mirror[a.mirror[i]], i);
        }
    }

    #[test]
    fn elevator_deflection_kinematics() {
        let base = build_mesh(&AircraftConfig::default()).unwrap();
        assert_eq!(apply_elevator_deflection(&base, 0.0), base);

        let d = apply_elevator_deflection(&base, 15.0);
        let (c15, s15) = (15f64.to_radians().cos(), 15f64.to_radians().sin());
        // Rotation-matrix oracle: R_y(-θ) applied to +z.
        let oracle = [-s15, 0.0, c15];
        for (p, q) in base.panels.iter().zip(&d.panels) {
            if p.surface == Surface::Elevator {
                assert!((dot(p.normal, q.normal) - c15).abs() <= 1e-12);
                for k in 0..3 {
                    assert!((q.normal[k] - oracle[k]).abs() <= 1e-15);
                }
                assert!((norm(q.normal) - 1.0).abs() <= UNIT_TOL);
            } else {
                assert_eq!(p, q);
            }
        }

        let up = apply_elevator_deflection(&base, 10.0);
        let dn = apply_elevator_deflection(&base, -10.0);
        for i in base.elevator_indices() {
            let (a, b) = (up.panels[i].normal, dn.panels[i].normal);
            assert!((a[0] + b[0]).abs() <= 1e-15 && (a[2] - b[2]).abs() <= 1e-15);
        }
        let back = apply_elevator_deflection(&apply_elevator_deflection(&base, 7.0), 0.0);
        assert_eq!(back.panels.len(), base.panels.len());
    }

    #[test]
    fn positive_elevator_is_trailing_edge_down() {
        let n = elevator_normal(10f64.to_radians());
        // Chord direction leading edge → trailing edge after deflection.
        let chord = [
            -(10f64.to_radians().cos()),
            0.0,
            -(10f64.to_radians().sin()),
        ];
        assert!(dot(n, chord).abs() < 1e-15);
        assert!(chord[2] < 0.0);
    }

    #[test]
    fn tilt_kinematics() {
        let c = AircraftConfig::default();
        let tip = c.propellers.iter().find(|p| p.tiltable).unwrap();
        assert_eq!(tilt_propeller(tip, 0.0).unwrap().axis, [1.0, 0.0, 0.0]);
        let a = tilt_propeller(tip, 90.0).unwrap().axis;
        assert!(a[0].abs() <= 1e-12 && a[1] == 0.0 && (a[2] - 1.0).abs() <= 1e-12);
        let a = tilt_propeller(tip, 110.0).unwrap();
        let t = 110f64.to_radians();
        assert!((a.axis[0] - t.cos()).abs() <= 1e-15 && (a.axis[2] - t.sin()).abs() <= 1e-15);
        assert_eq!(a.hub, tip.hub);
        assert!((norm(a.axis) - 1.0).abs() <= UNIT_TOL);
        let hover = c.propellers.iter().find(|p| !p.tiltable).unwrap();
        assert!(matches!(
            tilt_propeller(hover, 10.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let bad: Vec<fn(&mut AircraftConfig)> = vec![
            |c| c.wing.span = 0.0,
            |c| c.tail.chord = -1.0,
            |c| c.wing.panels_chordwise = 0,
            |c| c.reference.area = 0.0,
            |c| c.air.density = f64::NAN,
            |c| {
                c.propellers.pop();
            },
            |c| c.propellers[2].tiltable = true,
            |c| c.propellers[0].hub[1] = -1.0,
            |c| c.propellers[3].axis = [0.0, 0.0, 1.1],
            |c| c.propellers[4].blade_count = 1,
            |c| c.propellers[5].group = PropGroup::Port,
        ];
        for (k, f) in bad.iter().enumerate() {
            let mut c = AircraftConfig::default();
            f(&mut c);
            assert!(matches!(build_mesh(&c), Err(Error::Config(_))), "case {k}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let c = AircraftConfig::default();
        let s = c.to_toml_string();
        assert_eq!(AircraftConfig::from_toml_str(&s).unwrap(), c);
        assert!(matches!(
            AircraftConfig::from_toml_str("[wing]\nspan = 1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn blade_distributions() {
        let b = BladeConfig::default();
        assert!((b.twist_at(0.15) - 30.0).abs() < 1e-12 && (b.twist_at(1.0) - 12.0).abs() < 1e-12);
        let (f, w) = b.stations();
        assert_eq!(f.len(), 12);
        assert!((f[0] - 0.15 - 0.5 * w).abs() < 1e-15);
        assert!((f[11] + 0.5 * w - 1.0).abs() < 1e-12);
    }
}
