//! Analytic tessellation: revolved profiles for round solids, extruded
//! polygons for boxes and wedges. Partial sweeps get planar caps.

use std::f64::consts::PI;

use super::{mesh::TriMesh, Pose, ShapeParams, V3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    /// Same angular segment count for every curve (>= 16).
    Fixed(u32),
    /// max(16, ceil(pi r / chord_dx)) per curve of radius r.
    Chord(f64),
}

impl Resolution {
    pub fn segments(&self, radius: f64) -> usize {
        match *self {
            Resolution::Fixed(n) => n as usize,
            Resolution::Chord(dx) => ((PI * radius / dx).ceil() as usize).max(MIN_CHORD_SEGMENTS),
        }
    }
}

/// Floor of the chord rule; fewer segments lose more than 1% of a revolved volume.
pub const MIN_CHORD_SEGMENTS: usize = 64;

pub fn tessellate(params: &ShapeParams, pose: &Pose, resolution: Resolution) -> Result<TriMesh> {
    if let Resolution::Fixed(n) = resolution {
        if n < 16 {
            return Err(Error::Invalid(format!("tessellation resolution {n} < 16")));
        }
    }
    if let Resolution::Chord(dx) = resolution {
        if !(dx > 0.0) {
            return Err(Error::Invalid("chord spacing must be positive".into()));
        }
    }
    let degenerate = |what: &str| Err(Error::Invalid(format!("degenerate {}: {what}", params.family())));
    let positive = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x > 1e-9);
    let mut mesh = match *params {
        ShapeParams::Cuboid { height, width, thickness } => {
            if !positive(&[height, width, thickness]) {
                return degenerate("non-positive extent");
            }
            let (x, z) = (thickness / 2.0, height / 2.0);
            prism(&[(-x, -z), (x, -z), (x, z), (-x, z)], width)
        }
        ShapeParams::Wedge { length, width, height, opening_angle } => {
            if !positive(&[length, width, height]) || !(opening_angle > 1e-6 && opening_angle <= 90.0) {
                return degenerate("non-positive extent or opening angle outside (0, 90]");
            }
            prism(&params.wedge_section().unwrap(), width)
        }
        ShapeParams::Cylinder { radius, height, sweep } => {
            if !positive(&[radius, height, sweep]) {
                return degenerate("non-positive radius, height or sweep");
            }
            let h = height / 2.0;
            revolve(&[(0.0, -h), (radius, -h), (radius, h), (0.0, h)], sweep, resolution.segments(radius))
        }
        ShapeParams::Cone { radius_base, radius_top, height, sweep } => {
            if !positive(&[height, sweep]) || radius_base < 0.0 || radius_top < 0.0 || radius_base + radius_top <= 1e-9 {
                return degenerate("non-positive height, sweep or radii");
            }
            let h = height / 2.0;
            let r = radius_base.max(radius_top);
            revolve(&[(0.0, -h), (radius_base, -h), (radius_top, h), (0.0, h)], sweep, resolution.segments(r))
        }
        ShapeParams::Sphere { radius, sector } => {
            if !positive(&[radius]) {
                return degenerate("non-positive radius");
            }
            let n = resolution.segments(radius);
            let (lo, hi, sweep) = match sector {
                None => (-90.0, 90.0, 360.0),
                Some(s) => {
                    let (lo, hi) = s.band();
                    (lo, hi, s.gamma)
                }
            };
            if !(hi - lo > 1e-9) || !(lo >= -90.0 && hi <= 90.0) || !(sweep > 1e-9) {
                return degenerate("empty latitude band or sweep");
            }
            let steps = ((n as f64 * (hi - lo) / 360.0).ceil() as usize).max(2);
            let mut profile = Vec::with_capacity(steps + 2);
            if lo > -90.0 || hi < 90.0 {
                profile.push((0.0, 0.0));
            }
            for i in 0..=steps {
                let lat = (lo + (hi - lo) * i as f64 / steps as f64).to_radians();
                let (rho, z) = (radius * lat.cos(), radius * lat.sin());
                profile.push((if rho.abs() < 1e-9 * radius { 0.0 } else { rho }, z));
            }
            revolve(&profile, sweep, n)
        }
        ShapeParams::Torus { major_radius, minor_radius } => {
            if !positive(&[major_radius, minor_radius]) || minor_radius >= major_radius {
                return degenerate("requires major_radius > minor_radius > 0");
            }
            let m = resolution.segments(minor_radius);
            let profile: Vec<(f64, f64)> = (0..m)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / m as f64 - PI / 2.0;
                    (major_radius + minor_radius * a.cos(), minor_radius * a.sin())
                })
                .collect();
            revolve(&profile, 360.0, resolution.segments(major_radius + minor_radius))
        }
    };
    for v in &mut mesh.vertices {
        *v = pose.apply(v);
    }
    Ok(mesh)
}

/// Convex polygon in the x-z plane extruded over y in [-w/2, w/2].
fn prism(section: &[(f64, f64)], width: f64) -> TriMesh {
    let section = ccw(section);
    let n = section.len() as u32;
    let mut mesh = TriMesh::default();
    for &y in &[-width / 2.0, width / 2.0] {
        for &(x, z) in &section {
            mesh.vertices.push(V3::new(x, y, z));
        }
    }
    // CCW in (x, z) faces -y, which is outward for the front cap
    for i in 1..n - 1 {
        mesh.triangles.push([0, i, i + 1]);
        mesh.triangles.push([n, n + i + 1, n + i]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        mesh.triangles.push([i, n + j, j]);
        mesh.triangles.push([i, n + i, n + j]);
    }
    mesh
}

fn ccw(poly: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = Vec::with_capacity(poly.len());
    for &q in poly {
        if p.last() != Some(&q) {
            p.push(q);
        }
    }
    while p.len() > 1 && p.first() == p.last() {
        p.pop();
    }
    let area: f64 = (0..p.len())
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % p.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    if area < 0.0 {
        p.reverse();
    }
    p
}

/// Revolve a closed (rho, z) polygon about +z. On-axis vertices collapse to a
/// single shared vertex; sweeps below 360 degrees are closed with fan caps.
fn revolve(profile: &[(f64, f64)], sweep_deg: f64, segments: usize) -> TriMesh {
    let profile = ccw(profile);
    let full = sweep_deg >= 360.0 - 1e-9;
    let steps = if full {
        segments
    } else {
        ((segments as f64 * sweep_deg / 360.0).ceil() as usize).max(1)
    };
    let columns = if full { steps } else { steps + 1 };
    let sweep = sweep_deg.min(360.0).to_radians();
    let mut mesh = TriMesh::default();
    // id[k][j]: vertex of profile point k at azimuth column j
    let mut id: Vec<Vec<u32>> = Vec::with_capacity(profile.len());
    for &(rho, z) in &profile {
        if rho == 0.0 {
            mesh.vertices.push(V3::new(0.0, 0.0, z));
            id.push(vec![mesh.vertices.len() as u32 - 1; columns]);
        } else {
            let col = (0..columns)
                .map(|j| {
                    let phi = if full { 2.0 * PI * j as f64 / steps as f64 } else { sweep * j as f64 / steps as f64 };
                    mesh.vertices.push(V3::new(rho * phi.cos(), rho * phi.sin(), z));
                    mesh.vertices.len() as u32 - 1
                })
                .collect();
            id.push(col);
        }
    }
    let np = profile.len();
    for k in 0..np {
        let kn = (k + 1) % np;
        let (a_axis, b_axis) = (profile[k].0 == 0.0, profile[kn].0 == 0.0);
        if a_axis && b_axis {
            continue;
        }
        for j in 0..steps {
            let jn = if full { (j + 1) % steps } else { j + 1 };
            let (a0, a1, b0, b1) = (id[k][j], id[k][jn], id[kn][j], id[kn][jn]);
            if !a_axis {
                mesh.triangles.push([a0, a1, b1]);
            }
            if !b_axis {
                mesh.triangles.push([a0, b1, b0]);
            }
        }
    }
    if !full {
        let last = columns - 1;
        for k in 1..np - 1 {
            mesh.triangles.push([id[0][0], id[k][0], id[k + 1][0]]);
            mesh.triangles.push([id[0][last], id[k + 1][last], id[k][last]]);
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::super::SphereSector;
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn check(params: ShapeParams, n: u32, rel: f64) -> TriMesh {
        let mesh = tessellate(&params, &Pose::at(V3::zeros()), Resolution::Fixed(n)).unwrap();
        mesh.check_watertight().unwrap_or_else(|e| panic!("{params:?}: {e}"));
        let v = mesh.signed_volume();
        let a = params.analytic_volume();
        assert!(((v - a) / a).abs() < rel, "{params:?}: mesh {v} analytic {a}");
        mesh
    }

    #[test]
    fn cuboid_exact() {
        let m = check(ShapeParams::Cuboid { height: 10.0, width: 10.0, thickness: 10.0 }, 16, 1e-15);
        assert_eq!(m.triangles.len(), 12);
        assert_eq!(m.signed_volume(), 1000.0);
    }

    #[test]
    fn round_solids_within_one_percent() {
        check(ShapeParams::Sphere { radius: 5.0, sector: None }, 64, 0.01);
        check(ShapeParams::Cylinder { radius: 5.0, height: 10.0, sweep: 180.0 }, 64, 0.01);
        check(ShapeParams::Cylinder { radius: 5.0, height: 10.0, sweep: 360.0 }, 64, 0.01);
        check(ShapeParams::Cone { radius_base: 8.0, radius_top: 0.0, height: 10.0, sweep: 360.0 }, 64, 0.01);
        check(ShapeParams::Cone { radius_base: 0.0, radius_top: 8.0, height: 10.0, sweep: 100.0 }, 64, 0.01);
        check(ShapeParams::Cone { radius_base: 3.0, radius_top: 8.0, height: 10.0, sweep: 45.0 }, 64, 0.01);
        check(ShapeParams::Torus { major_radius: 10.0, minor_radius: 5.0 }, 64, 0.01);
        check(ShapeParams::Wedge { length: 10.0, width: 4.0, height: 5.0, opening_angle: 60.0 }, 16, 1e-12);
        check(ShapeParams::Wedge { length: 10.0, width: 4.0, height: 50.0, opening_angle: 30.0 }, 16, 1e-12);
        for (a, b, g) in [(-90.0, 90.0, 200.0), (0.0, 90.0, 360.0), (-30.0, 60.0, 90.0), (20.0, 50.0, 360.0), (-80.0, -10.0, 10.0)] {
            let s = ShapeParams::Sphere { radius: 20.0, sector: Some(SphereSector { alpha: a, beta: b, gamma: g }) };
            check(s, 128, 0.01);
        }
    }

    #[test]
    fn chord_bound() {
        let r = 50.0;
        let n = 64;
        let mesh = check(ShapeParams::Sphere { radius: r, sector: None }, n, 0.01);
        let bound = r * (1.0 - (PI / n as f64).cos());
        // face centroids sit no deeper than the chord bound applied along both directions
        for t in 0..mesh.triangles.len() {
            let c = mesh.corners(t);
            let centroid = (c[0] + c[1] + c[2]) / 3.0;
            assert!(r - centroid.norm() <= 2.0 * bound + 1e-9);
        }
        for v in &mesh.vertices {
            assert!((v.norm() - r).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let pose = Pose::at(V3::zeros());
        let cyl = ShapeParams::Cylinder { radius: 5.0, height: 10.0, sweep: 0.0 };
        assert!(tessellate(&cyl, &pose, Resolution::Fixed(32)).is_err());
        let ok = ShapeParams::Cylinder { radius: 5.0, height: 10.0, sweep: 90.0 };
        assert!(tessellate(&ok, &pose, Resolution::Fixed(8)).is_err());
        let torus = ShapeParams::Torus { major_radius: 5.0, minor_radius: 6.0 };
        assert!(tessellate(&torus, &pose, Resolution::Fixed(32)).is_err());
    }

    #[test]
    fn chord_resolution_rule() {
        assert_eq!(Resolution::Chord(4.0).segments(5.0), 64);
        assert_eq!(Resolution::Chord(4.0).segments(200.0), 158);
    }

    proptest! {
        #[test]
        fn posed_meshes_stay_watertight(r in 5.0f64..200.0, h in 5.0f64..200.0, sweep in 45.0f64..360.0,
                                        q in prop::array::uniform3(-3.0f64..3.0)) {
            let pose = Pose {
                position: V3::new(1000.0, 256.0, 256.0),
                orientation: UnitQuaternion::from_euler_angles(q[0], q[1], q[2]),
                dir_vector: V3::z(),
            };
            let params = ShapeParams::Cone { radius_base: r, radius_top: r * 0.3, height: h, sweep };
            let mesh = tessellate(&params, &pose, Resolution::Chord(4.0)).unwrap();
            prop_assert!(mesh.check_watertight().is_ok());
            let rel = (mesh.signed_volume() - params.analytic_volume()) / params.analytic_volume();
            prop_assert!(rel.abs() < 0.01);
        }
    }
}
