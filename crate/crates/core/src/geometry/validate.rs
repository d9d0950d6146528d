//! Feasibility guards for a candidate against the objects already placed.

use std::fmt;

use super::{PlacedShape, V3};
use crate::config::ResolvedConfig;
use crate::sdf::accel::box_dist2;
use crate::sdf::MeshAccel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Guard {
    InBounds,
    Intersection,
    Clearance,
    MinVolume,
}

impl Guard {
    pub fn name(self) -> &'static str {
        match self {
            Guard::InBounds => "in_bounds",
            Guard::Intersection => "intersection",
            Guard::Clearance => "clearance",
            Guard::MinVolume => "min_volume",
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(Guard),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub domain_min: V3,
    pub domain_max: V3,
    /// Allowed positions (placement box).
    pub roi_min: V3,
    pub roi_max: V3,
    pub c_min: f64,
    pub v_min: f64,
    pub eps: f64,
}

impl Limits {
    pub fn from_config(cfg: &ResolvedConfig) -> Self {
        let b = &cfg.bounding_box;
        let p = &cfg.pose;
        Limits {
            domain_min: V3::from(b.min()),
            domain_max: V3::from(b.max()),
            roi_min: V3::new(p.x_min, p.y_min, p.z_min),
            roi_max: V3::new(p.x_max, p.y_max, p.z_max),
            c_min: cfg.c_min(),
            v_min: cfg.min_volume,
            eps: 1e-6,
        }
    }
}

/// A placed shape with its distance structure.
#[derive(Debug, Clone)]
pub struct Solid {
    pub shape: PlacedShape,
    pub accel: MeshAccel,
}

impl Solid {
    pub fn new(shape: PlacedShape) -> crate::Result<Self> {
        let accel = MeshAccel::new(&shape.mesh)?;
        Ok(Solid { shape, accel })
    }
}

fn aabb_gap2(a: &MeshAccel, b: &MeshAccel) -> f64 {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    (0..3)
        .map(|k| {
            let d = (blo[k] - ahi[k]).max(0.0).max(alo[k] - bhi[k]);
            d * d
        })
        .sum()
}

fn in_bounds(s: &PlacedShape, lim: &Limits) -> bool {
    let (lo, hi) = s.mesh.aabb();
    let p = s.pose.position;
    (0..3).all(|k| {
        lo[k] >= lim.domain_min[k] - lim.eps
            && hi[k] <= lim.domain_max[k] + lim.eps
            && p[k] >= lim.roi_min[k]
            && p[k] <= lim.roi_max[k]
    })
}

fn overlaps(a: &MeshAccel, b: &MeshAccel) -> bool {
    if aabb_gap2(a, b) > 0.0 {
        return false;
    }
    if a.surfaces_within(b, 0.0) {
        return true;
    }
    // disjoint surfaces: either nested or apart
    let inside = |m: &MeshAccel, other: &MeshAccel| {
        let v = m.mesh().vertices[m.mesh().triangles[0][0] as usize];
        let (lo, hi) = other.aabb();
        box_dist2(&v, &lo, &hi) == 0.0 && other.signed_distance(&v) < 0.0
    };
    inside(a, b) || inside(b, a)
}

/// Guards in order: in_bounds, intersection, clearance, min_volume.
pub fn validate_solid(candidate: &Solid, context: &[Solid], lim: &Limits) -> Verdict {
    if !in_bounds(&candidate.shape, lim) {
        return Verdict::Reject(Guard::InBounds);
    }
    let near: Vec<&Solid> = context.iter().filter(|c| aabb_gap2(&candidate.accel, &c.accel) < lim.c_min * lim.c_min || lim.c_min == 0.0).collect();
    if near.iter().any(|c| overlaps(&candidate.accel, &c.accel)) {
        return Verdict::Reject(Guard::Intersection);
    }
    if lim.c_min > 0.0 && near.iter().any(|c| candidate.accel.surfaces_within(&c.accel, lim.c_min)) {
        return Verdict::Reject(Guard::Clearance);
    }
    if candidate.shape.volume < lim.v_min {
        return Verdict::Reject(Guard::MinVolume);
    }
    Verdict::Accept
}

pub fn validate_candidate(candidate: &PlacedShape, context: &[PlacedShape], lim: &Limits) -> crate::Result<Verdict> {
    let cand = Solid::new(candidate.clone())?;
    let ctx = context.iter().cloned().map(Solid::new).collect::<crate::Result<Vec<_>>>()?;
    Ok(validate_solid(&cand, &ctx, lim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Resolution, ShapeParams};

    fn limits(c_min: f64) -> Limits {
        let mut l = Limits::from_config(&ResolvedConfig::default());
        l.c_min = c_min;
        l
    }

    fn sphere(r: f64, at: V3) -> PlacedShape {
        PlacedShape::new(ShapeParams::Sphere { radius: r, sector: None }, Pose::at(at), Resolution::Fixed(64)).unwrap()
    }

    #[test]
    fn guard_order() {
        let v = validate_candidate(&sphere(5.0, V3::new(148.0, 256.0, 256.0)), &[], &limits(8.0)).unwrap();
        assert_eq!(v, Verdict::Reject(Guard::MinVolume));
        let v = validate_candidate(&sphere(50.0, V3::new(148.0, 20.0, 256.0)), &[], &limits(8.0)).unwrap();
        assert_eq!(v, Verdict::Reject(Guard::InBounds));
        let v = validate_candidate(&sphere(20.0, V3::new(100.0, 256.0, 256.0)), &[], &limits(8.0)).unwrap();
        assert_eq!(v, Verdict::Reject(Guard::InBounds));
    }

    #[test]
    fn sphere_pairs() {
        let a = sphere(50.0, V3::new(500.0, 256.0, 256.0));
        let far = sphere(50.0, V3::new(620.0, 256.0, 256.0));
        assert_eq!(validate_candidate(&far, &[a.clone()], &limits(8.0)).unwrap(), Verdict::Accept);
        let close = sphere(50.0, V3::new(604.0, 256.0, 256.0));
        assert_eq!(validate_candidate(&close, &[a.clone()], &limits(8.0)).unwrap(), Verdict::Reject(Guard::Clearance));
        let hit = sphere(50.0, V3::new(560.0, 256.0, 256.0));
        assert_eq!(validate_candidate(&hit, &[a.clone()], &limits(8.0)).unwrap(), Verdict::Reject(Guard::Intersection));
    }

    #[test]
    fn nested_is_intersection() {
        let big = sphere(100.0, V3::new(800.0, 256.0, 256.0));
        let cube = PlacedShape::new(
            ShapeParams::Cuboid { height: 20.0, width: 20.0, thickness: 20.0 },
            Pose::at(V3::new(800.0, 256.0, 256.0)),
            Resolution::Fixed(16),
        )
        .unwrap();
        assert_eq!(validate_candidate(&cube, &[big.clone()], &limits(8.0)).unwrap(), Verdict::Reject(Guard::Intersection));
        assert_eq!(validate_candidate(&big, &[cube], &limits(8.0)).unwrap(), Verdict::Reject(Guard::Intersection));
    }
}
