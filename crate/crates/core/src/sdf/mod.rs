//! Signed-distance voxelization on the co-registered simulation grid.

pub mod accel;
pub mod voxelize;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use accel::MeshAccel;
pub use voxelize::voxelize;

use crate::config::BoundingBox;
use crate::geometry::V3;
use crate::npy;
use crate::{util, Error, Result};

pub const SIGN_CONVENTION: &str = "negative inside solids, positive in fluid";
pub const SAMPLE_CONVENTION: &str = "node";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    /// (s_y, s_z) relative to the x spacing, recorded for consumers.
    pub aniso: [f64; 2],
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Grid whose node count per axis is extent / dx, which must be an exact integer.
    pub fn preset(dx: u32, bbox: &BoundingBox, aniso: [f64; 2]) -> Result<GridSpec> {
        if dx == 0 {
            return Err(Error::invariant("dx", "positive"));
        }
        let ext = bbox.extent();
        let mut dims = [0usize; 3];
        for k in 0..3 {
            let n = ext[k] / dx as f64;
            if n.fract() != 0.0 || n < 1.0 {
                return Err(Error::invariant("dx", format!("{dx} does not divide extent {}", ext[k])));
            }
            dims[k] = n as usize;
        }
        let dx = dx as f64;
        Ok(GridSpec { origin: bbox.min(), spacing: [dx, dx * aniso[0], dx * aniso[1]], aniso, dims })
    }

    /// Spacing along x, the unit of the narrow band.
    pub fn dx(&self) -> f64 {
        self.spacing[0]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> V3 {
        let s = self.spacing;
        V3::new(
            self.origin[0] + i as f64 * s[0],
            self.origin[1] + j as f64 * s[1],
            self.origin[2] + k as f64 * s[2],
        )
    }

    /// Flat offset with x slowest.
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }
}

/// Dense f32 field; vector fields are stored channels-first.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    pub grid: GridSpec,
    pub components: usize,
    pub values: Vec<f32>,
}

impl DenseField {
    pub fn scalar(grid: GridSpec, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), grid.len());
        DenseField { grid, components: 1, values }
    }

    pub fn shape(&self) -> Vec<usize> {
        let d = self.grid.dims;
        if self.components == 1 {
            d.to_vec()
        } else {
            vec![self.components, d[0], d[1], d[2]]
        }
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.grid.offset(i, j, k)]
    }

    pub fn to_npy(&self) -> Vec<u8> {
        npy::to_bytes_f32(&self.shape(), &self.values)
    }

    pub fn export_npy(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &self.to_npy())
    }

    /// Fixed-index slice normal to `axis` as CSV: header row of the second
    /// remaining axis coordinates, then one row per first remaining axis coordinate.
    pub fn extract_slice(&self, axis: usize, index: usize) -> Result<String> {
        if self.components != 1 {
            return Err(Error::Invalid("slices are defined for scalar fields".into()));
        }
        if axis > 2 {
            return Err(Error::Invalid(format!("axis {axis} out of range")));
        }
        let d = self.grid.dims;
        if index >= d[axis] {
            return Err(Error::Invalid(format!("slice index {index} out of range 0..{}", d[axis])));
        }
        let (ra, ca) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let s = self.grid.spacing;
        let coord = |ax: usize, n: usize| self.grid.origin[ax] + n as f64 * s[ax];
        let names = ["x", "y", "z"];
        let mut out = format!("{}\\{}", names[ra], names[ca]);
        for c in 0..d[ca] {
            out.push_str(&format!(",{}", coord(ca, c)));
        }
        out.push('\n');
        for r in 0..d[ra] {
            out.push_str(&coord(ra, r).to_string());
            for c in 0..d[ca] {
                let mut ijk = [0usize; 3];
                ijk[axis] = index;
                ijk[ra] = r;
                ijk[ca] = c;
                out.push_str(&format!(",{}", self.at(ijk[0], ijk[1], ijk[2])));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfSidecar {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub aniso: [f64; 2],
    pub units: String,
    pub sign_convention: String,
    pub sample_convention: String,
    pub band_voxels: u32,
    pub clamp: f64,
    pub source_mesh_sha256: String,
    pub dtype: String,
    pub axis_order: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl SdfSidecar {
    pub fn new(grid: &GridSpec, band: u32, stl_bytes: &[u8]) -> Self {
        SdfSidecar {
            origin: grid.origin,
            spacing: grid.spacing,
            dims: grid.dims,
            aniso: grid.aniso,
            units: "lu".into(),
            sign_convention: SIGN_CONVENTION.into(),
            sample_convention: SAMPLE_CONVENTION.into(),
            band_voxels: band,
            clamp: band as f64 * grid.dx(),
            source_mesh_sha256: util::sha256_hex(stl_bytes),
            dtype: "<f4".into(),
            axis_order: "x,y,z".into(),
            extra: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_yaml::to_string(self).expect("sidecar serializes");
        util::write_atomic(path, text.as_bytes())
    }
}
