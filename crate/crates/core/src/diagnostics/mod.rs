//! Averaging, stationarity metrics and dataset coverage tables.

pub mod coverage;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::GatePolicy;
use crate::orchestrator::synthetic::{MEANS_DIR, VELOCITY_FILE};
use crate::orchestrator::{CaseManifest, SDF_FILE};
use crate::sdf::{DenseField, GridSpec};
use crate::{npy, util, Error, Result};

pub const STATIONARITY_FILE: &str = "stationarity.yaml";

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingMode {
    Running,
    Batched,
}

#[derive(Debug, Clone)]
pub struct AveragingAccumulator {
    pub mode: AveragingMode,
    pub window: usize,
    grid: GridSpec,
    components: usize,
    count: usize,
    sums: Vec<Kahan>,
    /// Completed batch means, oldest first (batched mode).
    pub windows: Vec<DenseField>,
}

impl AveragingAccumulator {
    pub fn new(mode: AveragingMode, window: usize, grid: GridSpec, components: usize) -> Result<Self> {
        if mode == AveragingMode::Batched && window == 0 {
            return Err(Error::invariant("window", ">= 1"));
        }
        let n = grid.len() * components;
        Ok(AveragingAccumulator { mode, window, grid, components, count: 0, sums: vec![Kahan::default(); n], windows: Vec::new() })
    }

    pub fn push(&mut self, f: &DenseField) -> Result<()> {
        if f.grid != self.grid || f.components != self.components {
            return Err(Error::Invalid("sample grid differs from accumulator grid".into()));
        }
        for (s, v) in self.sums.iter_mut().zip(&f.values) {
            s.add(*v as f64);
        }
        self.count += 1;
        if self.mode == AveragingMode::Batched && self.count == self.window {
            let m = self.mean().expect("count > 0");
            self.windows.push(m);
            self.count = 0;
            self.sums.iter_mut().for_each(|s| *s = Kahan::default());
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean_f64(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.sums.iter().map(|s| s.value() / self.count as f64).collect())
    }

    pub fn mean(&self) -> Option<DenseField> {
        let m = self.mean_f64()?;
        Some(DenseField { grid: self.grid.clone(), components: self.components, values: m.into_iter().map(|x| x as f32).collect() })
    }
}

fn l2(values: impl Iterator<Item = f64>) -> f64 {
    let mut k = Kahan::default();
    for v in values {
        k.add(v * v);
    }
    k.value().sqrt()
}

fn same_grid(a: &DenseField, b: &DenseField) -> Result<()> {
    if a.grid != b.grid || a.components != b.components {
        return Err(Error::Invalid("fields are on different grids".into()));
    }
    Ok(())
}

/// Relative L2 change between successive window means.
pub fn stationarity_eps(mean_k: &DenseField, mean_km1: &DenseField, delta: f64) -> Result<f64> {
    same_grid(mean_k, mean_km1)?;
    if !(delta > 0.0) {
        return Err(Error::invariant("delta", "> 0"));
    }
    let num = l2(mean_k.values.iter().zip(&mean_km1.values).map(|(a, b)| *a as f64 - *b as f64));
    let den = l2(mean_k.values.iter().map(|a| *a as f64));
    Ok(num / (den + delta))
}

/// Per-step, per-component L2 norms of successive differences.
pub fn avg_diff_log(means: &[DenseField]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for w in means.windows(2) {
        same_grid(&w[1], &w[0])?;
        let n = w[0].grid.len();
        out.push(
            (0..w[0].components)
                .map(|c| l2((c * n..(c + 1) * n).map(|o| w[1].values[o] as f64 - w[0].values[o] as f64)))
                .collect(),
        );
    }
    Ok(out)
}

/// d(component c)/d(axis) at node (i,j,k). Central where both neighbours are
/// usable, second-order one-sided where two on one side are, first-order otherwise.
fn derivative(u: &DenseField, mask: Option<&[bool]>, c: usize, axis: usize, ijk: [usize; 3]) -> f64 {
    let g = &u.grid;
    let n = g.len();
    let h = g.spacing[axis];
    let at = |s: isize| -> Option<f64> {
        let t = ijk[axis] as isize + s;
        if t < 0 || t >= g.dims[axis] as isize {
            return None;
        }
        let mut m = ijk;
        m[axis] = t as usize;
        let o = g.offset(m[0], m[1], m[2]);
        if mask.is_some_and(|mk| !mk[o]) {
            return None;
        }
        Some(u.values[c * n + o] as f64)
    };
    let f0 = at(0).unwrap_or(0.0);
    match (at(-1), at(1)) {
        (Some(a), Some(b)) => (b - a) / (2.0 * h),
        (None, Some(b)) => match at(2) {
            Some(b2) => (-3.0 * f0 + 4.0 * b - b2) / (2.0 * h),
            None => (b - f0) / h,
        },
        (Some(a), None) => match at(-2) {
            Some(a2) => (3.0 * f0 - 4.0 * a + a2) / (2.0 * h),
            None => (f0 - a) / h,
        },
        (None, None) => 0.0,
    }
}

fn check_vector(u: &DenseField) -> Result<()> {
    if u.components != 3 {
        return Err(Error::Invalid(format!("expected 3 velocity components, got {}", u.components)));
    }
    if u.grid.dims.iter().any(|d| *d < 3) {
        return Err(Error::Invalid(format!("grid {:?} too small for the difference stencil", u.grid.dims)));
    }
    Ok(())
}

pub fn divergence_field(u: &DenseField, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_vector(u)?;
    let g = &u.grid;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.dims[0] {
        for j in 0..g.dims[1] {
            for k in 0..g.dims[2] {
                let o = g.offset(i, j, k);
                if mask.is_some_and(|m| !m[o]) {
                    continue;
                }
                out[o] = (0..3).map(|a| derivative(u, mask, a, a, [i, j, k])).sum();
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMetrics {
    /// Volume-weighted L2 over fluid nodes: sqrt(sum div^2 * dual-cell volume),
    /// where a node on a domain face owns half a cell along that axis.
    pub eps2: f64,
    pub eps_inf: f64,
    pub fluid_nodes: usize,
    /// True when the mask selected no nodes and both norms are 0 by definition.
    pub empty: bool,
}

pub fn divergence_metrics(u: &DenseField, mask: Option<&[bool]>) -> Result<DivergenceMetrics> {
    let div = divergence_field(u, mask)?;
    let g = &u.grid;
    let vol: f64 = g.spacing.iter().product();
    let face = |i: usize, n: usize| if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
    let mut sum = Kahan::default();
    let mut inf: f64 = 0.0;
    let mut count = 0;
    for i in 0..g.dims[0] {
        for j in 0..g.dims[1] {
            for k in 0..g.dims[2] {
                let o = g.offset(i, j, k);
                if mask.is_some_and(|m| !m[o]) {
                    continue;
                }
                let w = vol * face(i, g.dims[0]) * face(j, g.dims[1]) * face(k, g.dims[2]);
                sum.add(div[o] * div[o] * w);
                inf = inf.max(div[o].abs());
                count += 1;
            }
        }
    }
    Ok(DivergenceMetrics { eps2: sum.value().sqrt(), eps_inf: inf, fluid_nodes: count, empty: count == 0 })
}

/// Streamwise flux through the x-plane `i`, fluid nodes only.
pub fn plane_flux(u: &DenseField, i: usize, mask: Option<&[bool]>) -> Result<f64> {
    check_vector(u)?;
    let g = &u.grid;
    if i >= g.dims[0] {
        return Err(Error::Invalid(format!("plane {i} outside 0..{}", g.dims[0])));
    }
    let area = g.spacing[1] * g.spacing[2];
    let mut k = Kahan::default();
    for j in 0..g.dims[1] {
        for kk in 0..g.dims[2] {
            let o = g.offset(i, j, kk);
            if mask.is_none_or(|m| m[o]) {
                k.add(u.values[o] as f64 * area);
            }
        }
    }
    Ok(k.value())
}

pub fn flux_imbalance(phi_in: f64, phi_out: f64) -> Result<f64> {
    if !(phi_in > 0.0) {
        return Err(Error::Invalid("no inflow".into()));
    }
    Ok((phi_in - phi_out).abs() / phi_in)
}

pub fn flux_balance(u: &DenseField, inlet: usize, outlet: usize, mask: Option<&[bool]>) -> Result<f64> {
    flux_imbalance(plane_flux(u, inlet, mask)?, plane_flux(u, outlet, mask)?)
}

/// |S| = sqrt(2 S_ij S_ij) per node.
pub fn strain_rate_magnitude(u: &DenseField, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_vector(u)?;
    let g = &u.grid;
    let mut out = vec![0.0; g.len()];
    for i in 0..g.dims[0] {
        for j in 0..g.dims[1] {
            for k in 0..g.dims[2] {
                let o = g.offset(i, j, k);
                if mask.is_some_and(|m| !m[o]) {
                    continue;
                }
                let mut grad = [[0.0; 3]; 3];
                for (c, row) in grad.iter_mut().enumerate() {
                    for (a, slot) in row.iter_mut().enumerate() {
                        *slot = derivative(u, mask, c, a, [i, j, k]);
                    }
                }
                let mut ss = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        let s = 0.5 * (grad[a][b] + grad[b][a]);
                        ss += s * s;
                    }
                }
                out[o] = (2.0 * ss).sqrt();
            }
        }
    }
    Ok(out)
}

/// Eddy viscosity (Cs * delta)^2 |S|.
pub fn smagorinsky_nut(u: &DenseField, cs: f64, delta: f64, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let s = strain_rate_magnitude(u, mask)?;
    let c = (cs * delta).powi(2);
    Ok(s.into_iter().map(|x| c * x).collect())
}

pub fn effective_viscosity(nu0: f64, nut: &[f64]) -> Vec<f64> {
    nut.iter().map(|t| nu0 + t).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub window: usize,
    pub eps_u: f64,
    pub eps2: f64,
    pub eps_inf: f64,
    pub delta_phi: f64,
    pub eps_u_max: f64,
    pub dphi_max: f64,
    pub divergence_empty: bool,
    pub pass: bool,
}

fn read_vector(path: &Path, grid: &GridSpec) -> Result<DenseField> {
    let arr = npy::read(path)?;
    let d = grid.dims;
    if arr.shape != [3, d[0], d[1], d[2]] {
        return Err(Error::format(path, format!("shape {:?} does not match the case grid", arr.shape)));
    }
    Ok(DenseField { grid: grid.clone(), components: 3, values: arr.to_f32().map_err(|m| Error::format(path, m))? })
}

/// Evaluate the two most recent window means and the final field of a case.
pub fn gate_case(case_dir: &Path, policy: &GatePolicy) -> Result<StationarityReport> {
    let m = CaseManifest::read(case_dir)?;
    let grid = m.grid_spec();
    let means_dir = case_dir.join(MEANS_DIR);
    let windows = util::list_with_extension(&means_dir, "npy")?;
    if windows.len() < 2 {
        return Err(Error::format(&means_dir, format!("need two window means, found {}", windows.len())));
    }
    let cur = read_vector(&windows[windows.len() - 1], &grid)?;
    let prev = read_vector(&windows[windows.len() - 2], &grid)?;
    let eps_u = stationarity_eps(&cur, &prev, policy.delta)?;
    let u = read_vector(&case_dir.join(VELOCITY_FILE), &grid)?;
    let sdf_path = case_dir.join(SDF_FILE);
    let mask: Option<Vec<bool>> = if sdf_path.exists() {
        let a = npy::read(&sdf_path)?;
        Some(a.to_f32().map_err(|e| Error::format(&sdf_path, e))?.iter().map(|p| *p > 0.0).collect())
    } else {
        None
    };
    let div = divergence_metrics(&u, mask.as_deref())?;
    let delta_phi = flux_balance(&u, 0, grid.dims[0] - 1, mask.as_deref()).map_err(|e| Error::format(case_dir, e.to_string()))?;
    let pass = eps_u <= policy.eps_u_max && delta_phi <= policy.dphi_max;
    let report = StationarityReport {
        window: windows.len() - 1,
        eps_u,
        eps2: div.eps2,
        eps_inf: div.eps_inf,
        delta_phi,
        eps_u_max: policy.eps_u_max,
        dphi_max: policy.dphi_max,
        divergence_empty: div.empty,
        pass,
    };
    util::write_atomic(&case_dir.join(STATIONARITY_FILE), serde_yaml::to_string(&report).expect("report serializes").as_bytes())?;
    Ok(report)
}
