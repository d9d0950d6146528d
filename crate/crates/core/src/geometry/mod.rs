//! Primitive solids, their poses, and scenes built from them.

pub mod mesh;
pub mod sample;
pub mod scene;
pub mod tessellate;
pub mod validate;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};

pub use mesh::TriMesh;
pub use scene::{build_scene, export_scene, Scene};
pub use tessellate::{tessellate, Resolution};
pub use validate::{validate_candidate, Verdict};

pub type V3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cuboid,
    Cone,
    Cylinder,
    Sphere,
    Torus,
    Wedge,
}

impl Family {
    pub const ALL: [Family; 6] = [Family::Cuboid, Family::Cone, Family::Cylinder, Family::Sphere, Family::Torus, Family::Wedge];

    pub fn name(self) -> &'static str {
        match self {
            Family::Cuboid => "cuboid",
            Family::Cone => "cone",
            Family::Cylinder => "cylinder",
            Family::Sphere => "sphere",
            Family::Torus => "torus",
            Family::Wedge => "wedge",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        // `_target_`-style dotted paths map by their last component
        let last = s.rsplit('.').next().unwrap_or(s).to_ascii_lowercase();
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == last)
            .ok_or_else(|| format!("unknown family '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSector {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SphereSector {
    /// Latitude band in degrees, low to high.
    pub fn band(&self) -> (f64, f64) {
        (self.alpha.min(self.beta), self.alpha.max(self.beta))
    }
}

/// Dimensions in lattice units, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeParams {
    Cuboid { height: f64, width: f64, thickness: f64 },
    Cone { radius_base: f64, radius_top: f64, height: f64, sweep: f64 },
    Cylinder { radius: f64, height: f64, sweep: f64 },
    Sphere { radius: f64, sector: Option<SphereSector> },
    Torus { major_radius: f64, minor_radius: f64 },
    Wedge { length: f64, width: f64, height: f64, opening_angle: f64 },
}

impl ShapeParams {
    pub fn family(&self) -> Family {
        match self {
            ShapeParams::Cuboid { .. } => Family::Cuboid,
            ShapeParams::Cone { .. } => Family::Cone,
            ShapeParams::Cylinder { .. } => Family::Cylinder,
            ShapeParams::Sphere { .. } => Family::Sphere,
            ShapeParams::Torus { .. } => Family::Torus,
            ShapeParams::Wedge { .. } => Family::Wedge,
        }
    }

    /// Closed-form solid volume.
    pub fn analytic_volume(&self) -> f64 {
        match *self {
            ShapeParams::Cuboid { height, width, thickness } => height * width * thickness,
            ShapeParams::Cone { radius_base: a, radius_top: b, height, sweep } => {
                PI * height / 3.0 * (a * a + a * b + b * b) * (sweep / 360.0)
            }
            ShapeParams::Cylinder { radius, height, sweep } => PI * radius * radius * height * (sweep / 360.0),
            ShapeParams::Sphere { radius, sector: None } => 4.0 / 3.0 * PI * radius.powi(3),
            ShapeParams::Sphere { radius, sector: Some(s) } => {
                let (lo, hi) = s.band();
                s.gamma.to_radians() * radius.powi(3) / 3.0 * (hi.to_radians().sin() - lo.to_radians().sin())
            }
            ShapeParams::Torus { major_radius, minor_radius } => 2.0 * PI * PI * major_radius * minor_radius * minor_radius,
            ShapeParams::Wedge { length, width, height, .. } => 0.5 * length * height * width,
        }
    }

    /// Largest radius of any curved feature, used for segment counts.
    pub fn max_radius(&self) -> f64 {
        match *self {
            ShapeParams::Cuboid { .. } | ShapeParams::Wedge { .. } => 0.0,
            ShapeParams::Cone { radius_base, radius_top, .. } => radius_base.max(radius_top),
            ShapeParams::Cylinder { radius, .. } | ShapeParams::Sphere { radius, .. } => radius,
            ShapeParams::Torus { major_radius, minor_radius } => major_radius + minor_radius,
        }
    }

    /// Wedge cross-section in the local x-z plane before centring.
    fn wedge_triangle(length: f64, height: f64, opening_angle: f64) -> [(f64, f64); 3] {
        let apex_x = height / opening_angle.to_radians().tan();
        let apex_x = if apex_x.abs() < 1e-12 { 0.0 } else { apex_x };
        [(0.0, 0.0), (length, 0.0), (apex_x, height)]
    }

    /// Wedge triangle shifted so its bounding box is centred on the origin.
    pub fn wedge_section(&self) -> Option<[(f64, f64); 3]> {
        if let ShapeParams::Wedge { length, height, opening_angle, .. } = *self {
            let t = Self::wedge_triangle(length, height, opening_angle);
            let x_lo = t.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let x_hi = t.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let cx = 0.5 * (x_lo + x_hi);
            Some(t.map(|(x, z)| (x - cx, z - 0.5 * height)))
        } else {
            None
        }
    }

    /// Sign-correct inside test in the local frame (boundary counts as inside).
    pub fn contains_local(&self, p: &V3) -> bool {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let in_sweep = |sweep: f64| {
            if sweep >= 360.0 - 1e-9 {
                return true;
            }
            let mut a = p.y.atan2(p.x);
            if a < 0.0 {
                a += 2.0 * PI;
            }
            a <= sweep.to_radians() + 1e-12 || rho < 1e-12
        };
        match *self {
            ShapeParams::Cuboid { height, width, thickness } => {
                p.x.abs() <= thickness / 2.0 && p.y.abs() <= width / 2.0 && p.z.abs() <= height / 2.0
            }
            ShapeParams::Cone { radius_base, radius_top, height, sweep } => {
                if p.z.abs() > height / 2.0 {
                    return false;
                }
                let t = (p.z + height / 2.0) / height;
                rho <= radius_base + (radius_top - radius_base) * t && in_sweep(sweep)
            }
            ShapeParams::Cylinder { radius, height, sweep } => p.z.abs() <= height / 2.0 && rho <= radius && in_sweep(sweep),
            ShapeParams::Sphere { radius, sector } => {
                if p.norm() > radius {
                    return false;
                }
                match sector {
                    None => true,
                    Some(s) => {
                        let (lo, hi) = s.band();
                        let lat = p.z.atan2(rho).to_degrees();
                        (p.norm() < 1e-12 || (lat >= lo - 1e-9 && lat <= hi + 1e-9)) && in_sweep(s.gamma)
                    }
                }
            }
            ShapeParams::Torus { major_radius, minor_radius } => {
                (rho - major_radius).powi(2) + p.z * p.z <= minor_radius * minor_radius
            }
            ShapeParams::Wedge { width, .. } => {
                if p.y.abs() > width / 2.0 {
                    return false;
                }
                let t = self.wedge_section().unwrap();
                let cross = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.z - a.1) - (b.1 - a.1) * (p.x - a.0);
                cross(t[0], t[1]) >= -1e-12 && cross(t[1], t[2]) >= -1e-12 && cross(t[2], t[0]) >= -1e-12
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: V3,
    pub orientation: UnitQuaternion<f64>,
    /// Recorded direction metadata; orientation alone places the solid.
    pub dir_vector: V3,
}

impl Pose {
    pub fn at(position: V3) -> Self {
        Pose { position, orientation: UnitQuaternion::identity(), dir_vector: V3::new(0.0, 0.0, 1.0) }
    }

    pub fn apply(&self, local: &V3) -> V3 {
        self.orientation * local + self.position
    }

    pub fn to_local(&self, world: &V3) -> V3 {
        self.orientation.inverse() * (world - self.position)
    }
}

#[derive(Debug, Clone)]
pub struct PlacedShape {
    pub params: ShapeParams,
    pub pose: Pose,
    pub mesh: TriMesh,
    pub volume: f64,
}

impl PlacedShape {
    pub fn new(params: ShapeParams, pose: Pose, resolution: Resolution) -> crate::Result<Self> {
        let mesh = tessellate(&params, &pose, resolution)?;
        Ok(PlacedShape { params, pose, mesh, volume: params.analytic_volume() })
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn contains(&self, world: &V3) -> bool {
        self.params.contains_local(&self.pose.to_local(world))
    }
}
