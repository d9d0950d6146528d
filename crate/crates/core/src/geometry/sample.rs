//! Mapping unit-cube draws to families, parameters and poses.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{Family, Pose, ShapeParams, SphereSector, V3};
use crate::config::{GeometryRanges, PosePolicy, Range, ResolvedConfig};
use crate::util::round_to;
use crate::{Error, Result};

/// Coordinates of one draw consumed by the pose.
pub const POSE_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Draw<T> {
    Accept(T),
    Reject(&'static str),
}

/// Cumulative-weight inversion; zero weights are never chosen.
pub fn pick_family(weights: &[(Family, f64)], u: f64) -> Family {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = None;
    for &(f, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(f);
        if target < acc {
            return f;
        }
    }
    last.expect("at least one positive weight")
}

pub fn param_count(family: Family, ranges: &GeometryRanges) -> usize {
    match family {
        Family::Cuboid | Family::Cylinder => 3,
        Family::Cone | Family::Wedge => 4,
        Family::Sphere => {
            if ranges.sphere.sectors {
                4
            } else {
                1
            }
        }
        Family::Torus => 2,
    }
}

/// Frozen Sobol dimension: family pick, longest parameter block, pose.
pub fn draw_dimension(cfg: &ResolvedConfig) -> usize {
    let params = cfg
        .family_weights()
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(f, _)| param_count(*f, &cfg.geometries))
        .max()
        .unwrap_or(0);
    1 + params + POSE_DIMS
}

fn lerp(r: Range, u: f64, decimals: u32) -> f64 {
    round_to(r[0] + u * (r[1] - r[0]), decimals)
}

fn check_family(family: Family, g: &GeometryRanges) -> Result<()> {
    let field = |name: &str| format!("geometries.{}.{name}", family.name());
    let ordered = |name: &str, r: Range, lo: f64, hi: f64| -> Result<()> {
        if !(r[0] <= r[1]) || r[0] < lo || r[1] > hi || !r[0].is_finite() || !r[1].is_finite() {
            return Err(Error::invariant(field(name), format!("min <= max within [{lo}, {hi}]")));
        }
        Ok(())
    };
    let len = f64::MIN_POSITIVE;
    match family {
        Family::Cuboid => {
            ordered("height", g.cuboid.height, len, f64::MAX)?;
            ordered("width", g.cuboid.width, len, f64::MAX)?;
            ordered("thickness", g.cuboid.thickness, len, f64::MAX)?;
        }
        Family::Cone => {
            let c = &g.cone;
            ordered("radius_base", c.radius_base, 0.0, f64::MAX)?;
            ordered("radius_top", c.radius_top, 0.0, f64::MAX)?;
            ordered("height", c.height, len, f64::MAX)?;
            ordered("angle", c.angle, len, 360.0)?;
            if c.radius_base[1] + c.radius_top[1] < c.min_radius_sum.max(len) {
                return Err(Error::invariant(field("min_radius_sum"), "constraint unsatisfiable given radius ranges"));
            }
        }
        Family::Cylinder => {
            ordered("radius", g.cylinder.radius, len, f64::MAX)?;
            ordered("height", g.cylinder.height, len, f64::MAX)?;
            ordered("angle", g.cylinder.angle, len, 360.0)?;
        }
        Family::Sphere => {
            ordered("radius", g.sphere.radius, len, f64::MAX)?;
            if g.sphere.sectors {
                ordered("alpha", g.sphere.alpha, -90.0, 90.0)?;
                ordered("beta", g.sphere.beta, -90.0, 90.0)?;
                ordered("gamma", g.sphere.gamma, len, 360.0)?;
                if g.sphere.alpha[0] == g.sphere.alpha[1] && g.sphere.beta == g.sphere.alpha {
                    return Err(Error::invariant(field("alpha"), "latitude band can never be non-empty"));
                }
            }
        }
        Family::Torus => {
            ordered("major_radius", g.torus.major_radius, len, f64::MAX)?;
            ordered("minor_radius", g.torus.minor_radius, len, f64::MAX)?;
            if g.torus.major_radius[1] <= g.torus.minor_radius[0] {
                return Err(Error::invariant(field("major_radius"), "R > r unsatisfiable given ranges"));
            }
        }
        Family::Wedge => {
            ordered("length", g.wedge.length, len, f64::MAX)?;
            ordered("width", g.wedge.width, len, f64::MAX)?;
            ordered("height", g.wedge.height, len, f64::MAX)?;
            ordered("opening_angle", g.wedge.opening_angle, 1e-6, 90.0)?;
        }
    }
    Ok(())
}

/// Range checks for every family that can be drawn.
pub fn check_ranges(cfg: &ResolvedConfig) -> Result<()> {
    for (f, w) in cfg.family_weights() {
        if w > 0.0 {
            check_family(f, &cfg.geometries)?;
        }
    }
    Ok(())
}

/// Map `draw` (one uniform per parameter) to parameters; family constraints
/// reject rather than clamp.
pub fn sample_shape(family: Family, g: &GeometryRanges, draw: &[f64]) -> Result<Draw<ShapeParams>> {
    check_family(family, g)?;
    let need = param_count(family, g);
    if draw.len() < need {
        return Err(Error::Invalid(format!("{family} needs {need} draws, got {}", draw.len())));
    }
    let d = g.decimals;
    let p = match family {
        Family::Cuboid => ShapeParams::Cuboid {
            height: lerp(g.cuboid.height, draw[0], d),
            width: lerp(g.cuboid.width, draw[1], d),
            thickness: lerp(g.cuboid.thickness, draw[2], d),
        },
        Family::Cone => {
            let c = &g.cone;
            let (rb, rt) = (lerp(c.radius_base, draw[0], d), lerp(c.radius_top, draw[1], d));
            if rb + rt < c.min_radius_sum || rb + rt <= 0.0 {
                return Ok(Draw::Reject("min_radius_sum"));
            }
            ShapeParams::Cone { radius_base: rb, radius_top: rt, height: lerp(c.height, draw[2], d), sweep: lerp(c.angle, draw[3], d) }
        }
        Family::Cylinder => ShapeParams::Cylinder {
            radius: lerp(g.cylinder.radius, draw[0], d),
            height: lerp(g.cylinder.height, draw[1], d),
            sweep: lerp(g.cylinder.angle, draw[2], d),
        },
        Family::Sphere => {
            let radius = lerp(g.sphere.radius, draw[0], d);
            let sector = if g.sphere.sectors {
                let s = SphereSector {
                    alpha: lerp(g.sphere.alpha, draw[1], d),
                    beta: lerp(g.sphere.beta, draw[2], d),
                    gamma: lerp(g.sphere.gamma, draw[3], d),
                };
                let (lo, hi) = s.band();
                if hi <= lo {
                    return Ok(Draw::Reject("empty latitude band"));
                }
                if hi - lo >= 180.0 && s.gamma >= 360.0 {
                    None
                } else {
                    Some(s)
                }
            } else {
                None
            };
            ShapeParams::Sphere { radius, sector }
        }
        Family::Torus => {
            let (big, small) = (lerp(g.torus.major_radius, draw[0], d), lerp(g.torus.minor_radius, draw[1], d));
            if big <= small {
                return Ok(Draw::Reject("torus R <= r"));
            }
            ShapeParams::Torus { major_radius: big, minor_radius: small }
        }
        Family::Wedge => ShapeParams::Wedge {
            length: lerp(g.wedge.length, draw[0], d),
            width: lerp(g.wedge.width, draw[1], d),
            height: lerp(g.wedge.height, draw[2], d),
            opening_angle: lerp(g.wedge.opening_angle, draw[3], d),
        },
    };
    Ok(Draw::Accept(p))
}

/// Uniform rotation from three uniforms (subgroup algorithm).
pub fn quaternion_from_uniforms(u1: f64, u2: f64, u3: f64) -> UnitQuaternion<f64> {
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t1, t2) = (2.0 * PI * u2, 2.0 * PI * u3);
    let q = Quaternion::new(b * t2.cos(), a * t1.sin(), a * t1.cos(), b * t2.sin());
    UnitQuaternion::new_normalize(q)
}

/// Draw layout: 3 position, 3 orientation, 2 direction.
pub fn sample_pose(policy: &PosePolicy, draw: &[f64]) -> Pose {
    assert!(draw.len() >= POSE_DIMS, "pose needs {POSE_DIMS} uniforms");
    let axis = |lo: f64, hi: f64, u: f64| round_to(lo + u * (hi - lo), policy.decimals).clamp(lo, hi);
    let position = V3::new(
        axis(policy.x_min, policy.x_max, draw[0]),
        axis(policy.y_min, policy.y_max, draw[1]),
        axis(policy.z_min, policy.z_max, draw[2]),
    );
    let orientation = quaternion_from_uniforms(draw[3], draw[4], draw[5]);
    let z = 1.0 - 2.0 * draw[6];
    let phi = 2.0 * PI * draw[7];
    let s = (1.0 - z * z).max(0.0).sqrt();
    let raw = V3::new(s * phi.cos(), s * phi.sin(), z).map(|c| round_to(c, policy.dir_vector_decimals));
    let dir_vector = if raw.norm() > 0.0 { raw.normalize() } else { V3::z() };
    Pose { position, orientation, dir_vector }
}
