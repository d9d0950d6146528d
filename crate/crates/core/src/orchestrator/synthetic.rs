//! Desk-scale stand-in for the flow solver: the inlet velocity broadcast over
//! fluid voxels, zero inside solids.

use std::path::Path;

use super::{CaseManifest, SDF_FILE};
use crate::sdf::DenseField;
use crate::{npy, util, Error, Result};

pub const VELOCITY_FILE: &str = "velocity.npy";
pub const MEANS_DIR: &str = "means";

pub fn window_file(k: usize) -> String {
    format!("window_{k:03}.npy")
}

pub fn velocity_from_sdf(sdf: &DenseField, inlet: [f64; 3]) -> DenseField {
    let n = sdf.grid.len();
    let mut values = vec![0f32; 3 * n];
    for (o, phi) in sdf.values.iter().enumerate() {
        if *phi > 0.0 {
            for c in 0..3 {
                values[c * n + o] = inlet[c] as f32;
            }
        }
    }
    DenseField { grid: sdf.grid.clone(), components: 3, values }
}

/// Write `velocity.npy` and two identical averaging windows into the case.
pub fn synthetic_solver(case_dir: &Path) -> Result<()> {
    let m = CaseManifest::read(case_dir)?;
    let path = case_dir.join(SDF_FILE);
    if !path.exists() {
        return Err(Error::format(&path, "synthetic solver needs the case SDF"));
    }
    let grid = m.grid_spec();
    let arr = npy::read(&path)?;
    if arr.shape != grid.dims.to_vec() {
        return Err(Error::format(&path, format!("shape {:?} does not match case grid {:?}", arr.shape, grid.dims)));
    }
    let sdf = DenseField::scalar(grid, arr.to_f32().map_err(|e| Error::format(&path, e))?);
    let u = velocity_from_sdf(&sdf, m.inlet_velocity);
    let bytes = u.to_npy();
    let means = case_dir.join(MEANS_DIR);
    util::create_dir_all(&means)?;
    util::write_atomic(&means.join(window_file(0)), &bytes)?;
    util::write_atomic(&means.join(window_file(1)), &bytes)?;
    util::write_atomic(&case_dir.join(VELOCITY_FILE), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BoundingBox;
    use crate::sdf::GridSpec;

    #[test]
    fn fluid_gets_inlet_solid_gets_zero() {
        let g = GridSpec::preset(256, &BoundingBox::default(), [1.0, 1.0]).unwrap();
        let empty = DenseField::scalar(g.clone(), vec![5.0; g.len()]);
        let u = velocity_from_sdf(&empty, [0.05, 0.0, 0.01]);
        let n = g.len();
        assert!(u.values[..n].iter().all(|v| *v == 0.05f32));
        assert!(u.values[2 * n..].iter().all(|v| *v == 0.01f32));
        let solid = DenseField::scalar(g.clone(), vec![-1.0; g.len()]);
        assert!(velocity_from_sdf(&solid, [0.05, 0.0, 0.01]).values.iter().all(|v| *v == 0.0));
    }
}
