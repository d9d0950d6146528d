use super::{DenseField, GridSpec, MeshAccel};
use crate::geometry::{TriMesh, V3};
use crate::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Clamped signed distance at every grid node.
///
/// Samples with no triangle within the band are never resolved exactly: along
/// an x-line consecutive nodes are at most one band apart, so such a node takes
/// the sign of its predecessor.
pub fn voxelize(mesh: &TriMesh, grid: &GridSpec, band: u32) -> Result<DenseField> {
    if band == 0 {
        return Err(Error::invariant("band", ">= 1"));
    }
    let accel = MeshAccel::new(mesh)?;
    let (lo, hi) = accel.aabb();
    let s = grid.spacing;
    let d = grid.dims;
    let dmax = V3::new(
        grid.origin[0] + (d[0] - 1) as f64 * s[0],
        grid.origin[1] + (d[1] - 1) as f64 * s[1],
        grid.origin[2] + (d[2] - 1) as f64 * s[2],
    );
    let tol = 1e-6;
    for k in 0..3 {
        if lo[k] < grid.origin[k] - tol || hi[k] > dmax[k] + s[k] + tol {
            return Err(Error::Invalid(format!(
                "mesh extent [{}, {}] on axis {k} outside the grid domain",
                lo[k], hi[k]
            )));
        }
    }
    let clamp = band as f64 * grid.dx();
    let (elo, ehi) = (lo.add_scalar(-clamp), hi.add_scalar(clamp));

    let line = |jk: usize| -> Vec<f32> {
        let (j, k) = (jk / d[2], jk % d[2]);
        let y = grid.origin[1] + j as f64 * s[1];
        let z = grid.origin[2] + k as f64 * s[2];
        let mut out = vec![clamp as f32; d[0]];
        if y < elo.y || y > ehi.y || z < elo.z || z > ehi.z {
            return out;
        }
        let mut sign = 1.0;
        let mut first = true;
        for (i, slot) in out.iter_mut().enumerate() {
            let x = grid.origin[0] + i as f64 * s[0];
            if x < elo.x || x > ehi.x {
                sign = 1.0;
                first = false;
                continue;
            }
            let p = V3::new(x, y, z);
            let v = match accel.signed_distance_within(&p, clamp) {
                Some(phi) => {
                    sign = if phi < 0.0 { -1.0 } else { 1.0 };
                    phi
                }
                None if first => {
                    let phi = accel.signed_distance(&p);
                    sign = if phi < 0.0 { -1.0 } else { 1.0 };
                    phi
                }
                None => sign * clamp,
            };
            first = false;
            *slot = v.clamp(-clamp, clamp) as f32;
        }
        out
    };

    let lines = d[1] * d[2];
    #[cfg(feature = "parallel")]
    let cols: Vec<Vec<f32>> = (0..lines).into_par_iter().map(line).collect();
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<Vec<f32>> = (0..lines).map(line).collect();

    let mut values = vec![0f32; grid.len()];
    for (jk, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            values[i * lines + jk] = *v;
        }
    }
    Ok(DenseField::scalar(grid.clone(), values))
}
