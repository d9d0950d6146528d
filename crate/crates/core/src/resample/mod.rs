//! Point-to-grid resampling with normalized kernel weights.

pub mod ini;
pub mod kdtree;
pub mod kernel;

use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::geometry::V3;
use crate::sdf::{DenseField, GridSpec};
use crate::{npy, util, Error, Result};
pub use kdtree::KdTree;
pub use kernel::{default_k, kernel_weight, Footprint, KernelKind, KernelSpec};

/// Point samples with `components` values each, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePoints {
    pub positions: Vec<V3>,
    pub components: usize,
    pub values: Vec<f64>,
    pub structured: Option<GridSpec>,
}

impl SourcePoints {
    pub fn new(positions: Vec<V3>, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != positions.len() * components {
            return Err(Error::Invalid(format!(
                "{} values for {} points with {components} components",
                values.len(),
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Invalid("source positions must be finite".into()));
        }
        Ok(SourcePoints { positions, components, values, structured: None })
    }

    /// Nodes of a channels-first field become points.
    pub fn from_field(field: &DenseField) -> Self {
        let g = &field.grid;
        let n = g.len();
        let c = field.components;
        let mut positions = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * c);
        for i in 0..g.dims[0] {
            for j in 0..g.dims[1] {
                for k in 0..g.dims[2] {
                    positions.push(g.position(i, j, k));
                    let o = g.offset(i, j, k);
                    values.extend((0..c).map(|ch| field.values[ch * n + o] as f64));
                }
            }
        }
        SourcePoints { positions, components: c, values, structured: Some(g.clone()) }
    }

    /// CSV with columns x, y, z followed by one column per component.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Invalid(format!("csv header: {e}")))?.clone();
        if headers.len() < 4 {
            return Err(Error::Invalid("csv needs x,y,z and at least one value column".into()));
        }
        let c = headers.len() - 3;
        let mut positions = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Invalid(format!("csv row {}: {e}", row + 1)))?;
            let nums = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Invalid(format!("csv row {}: '{s}' is not a number", row + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if nums.len() != headers.len() {
                return Err(Error::Invalid(format!("csv row {} has {} columns", row + 1, nums.len())));
            }
            positions.push(V3::new(nums[0], nums[1], nums[2]));
            values.extend_from_slice(&nums[3..]);
        }
        Self::new(positions, c, values)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn make_target_grid(origin: [f64; 3], extent: [f64; 3], cells: [u32; 3]) -> Result<GridSpec> {
    let mut spacing = [0.0; 3];
    let mut dims = [0usize; 3];
    for k in 0..3 {
        if cells[k] == 0 {
            return Err(Error::invariant("cells", ">= 1 per axis"));
        }
        if !(extent[k] > 0.0) {
            return Err(Error::invariant("extent", "positive when an axis has more than one sample"));
        }
        dims[k] = cells[k] as usize + 1;
        spacing[k] = extent[k] / cells[k] as f64;
    }
    Ok(GridSpec { origin, spacing, aniso: [spacing[1] / spacing[0], spacing[2] / spacing[0]], dims })
}

pub fn tensor_bytes(samples: [usize; 3], components: usize) -> usize {
    samples.iter().product::<usize>() * components * 4
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub field: DenseField,
    /// Samples that fell back to the nearest source.
    pub holes: Vec<bool>,
}

impl Resampled {
    pub fn hole_count(&self) -> usize {
        self.holes.iter().filter(|h| **h).count()
    }
}

fn estimate(
    src: &SourcePoints,
    tree: &KdTree,
    q: &V3,
    kernel: &KernelSpec,
    fp: Footprint,
    out: &mut [f64],
) -> bool {
    let c = src.components;
    let nearest = |out: &mut [f64]| {
        let n = tree.knn(q, 1)[0];
        out.copy_from_slice(&src.values[n.id * c..(n.id + 1) * c]);
    };
    if kernel.kind == KernelKind::Voronoi {
        nearest(out);
        return false;
    }
    let (nbrs, r) = match fp {
        Footprint::NClosest(k) => {
            let n = tree.knn(q, k);
            let r = n.last().map(|x| x.dist2.sqrt()).unwrap_or(0.0);
            (n, r)
        }
        Footprint::Radius(r) => (tree.within(q, r), r),
    };
    // offsets from the nearest value, so a constant field comes back bit-exact
    let anchor: Vec<f64> = match nbrs.first() {
        Some(n) => src.values[n.id * c..(n.id + 1) * c].to_vec(),
        None => vec![0.0; c],
    };
    let mut wsum = 0.0;
    let mut acc = vec![0.0; c];
    let mut infinite: Vec<usize> = Vec::new();
    for n in &nbrs {
        let w = kernel_weight(kernel, &(src.positions[n.id] - q), r);
        if w.is_infinite() {
            infinite.push(n.id);
            continue;
        }
        wsum += w;
        for ch in 0..c {
            acc[ch] += w * (src.values[n.id * c + ch] - anchor[ch]);
        }
    }
    if !infinite.is_empty() {
        // coincident sources under an unregularized power kernel
        for ch in 0..c {
            let s: f64 = infinite.iter().map(|id| src.values[id * c + ch] - anchor[ch]).sum();
            out[ch] = anchor[ch] + s / infinite.len() as f64;
        }
        return false;
    }
    if wsum > 0.0 {
        for ch in 0..c {
            out[ch] = anchor[ch] + acc[ch] / wsum;
        }
        false
    } else {
        nearest(out);
        true
    }
}

/// Evaluate every target node in f64; values are channels-first, plus the hole flags.
pub fn interpolate_values(src: &SourcePoints, tree: &KdTree, target: &GridSpec, kernel: &KernelSpec, fp: Footprint) -> Result<(Vec<f64>, Vec<bool>)> {
    kernel.validate().map_err(|m| Error::invariant("kernel", m))?;
    match fp {
        Footprint::NClosest(0) => return Err(Error::invariant("footprint.k", "positive")),
        Footprint::Radius(r) if !(r >= 0.0) => return Err(Error::invariant("footprint.radius", ">= 0")),
        _ => {}
    }
    if tree.len() != src.len() {
        return Err(Error::Invalid("index was built for a different point set".into()));
    }
    let n = target.len();
    let c = src.components;
    let (d1, d2) = (target.dims[1], target.dims[2]);
    let eval = |o: usize| -> (Vec<f64>, bool) {
        let (i, rem) = (o / (d1 * d2), o % (d1 * d2));
        let q = target.position(i, rem / d2, rem % d2);
        let mut v = vec![0.0; c];
        let hole = estimate(src, tree, &q, kernel, fp, &mut v);
        (v, hole)
    };
    #[cfg(feature = "parallel")]
    let res: Vec<(Vec<f64>, bool)> = (0..n).into_par_iter().map(eval).collect();
    #[cfg(not(feature = "parallel"))]
    let res: Vec<(Vec<f64>, bool)> = (0..n).map(eval).collect();
    let mut values = vec![0.0; n * c];
    let mut holes = vec![false; n];
    for (o, (v, h)) in res.into_iter().enumerate() {
        for ch in 0..c {
            values[ch * n + o] = v[ch];
        }
        holes[o] = h;
    }
    Ok((values, holes))
}

/// [`interpolate_values`] stored as an f32 field.
pub fn interpolate(src: &SourcePoints, tree: &KdTree, target: &GridSpec, kernel: &KernelSpec, fp: Footprint) -> Result<Resampled> {
    let (values, holes) = interpolate_values(src, tree, target, kernel, fp)?;
    let field = DenseField { grid: target.clone(), components: src.components, values: values.iter().map(|v| *v as f32).collect() };
    Ok(Resampled { field, holes })
}

/// Same result without the tree: all-pairs distances, sorted by (distance, id).
pub fn interpolate_brute(src: &SourcePoints, target: &GridSpec, kernel: &KernelSpec, fp: Footprint) -> Vec<f64> {
    let n = target.len();
    let c = src.components;
    let mut out = vec![0.0; n * c];
    let d = target.dims;
    for i in 0..d[0] {
        for j in 0..d[1] {
            for k in 0..d[2] {
                let q = target.position(i, j, k);
                let mut all = kdtree::knn_brute(&src.positions, &q, src.len());
                if kernel.kind == KernelKind::Voronoi {
                    all.truncate(1);
                }
                let (sel, r): (Vec<_>, f64) = match fp {
                    _ if kernel.kind == KernelKind::Voronoi => (all, 0.0),
                    Footprint::NClosest(kk) => {
                        all.truncate(kk);
                        let r = all.last().unwrap().dist2.sqrt();
                        (all, r)
                    }
                    Footprint::Radius(r) => (all.into_iter().filter(|x| x.dist2 <= r * r).collect(), r),
                };
                let o = target.offset(i, j, k);
                let base: Vec<f64> = sel.first().map_or(vec![0.0; c], |nb| src.values[nb.id * c..(nb.id + 1) * c].to_vec());
                let mut ws = 0.0;
                let mut acc = vec![0.0; c];
                for nb in &sel {
                    let w = if kernel.kind == KernelKind::Voronoi { 1.0 } else { kernel_weight(kernel, &(src.positions[nb.id] - q), r) };
                    ws += w;
                    for ch in 0..c {
                        acc[ch] += w * (src.values[nb.id * c + ch] - base[ch]);
                    }
                }
                for ch in 0..c {
                    out[ch * n + o] = if ws > 0.0 { base[ch] + acc[ch] / ws } else { f64::NAN };
                }
            }
        }
    }
    out
}

/// Optional separable box filter on a structured source (odd width).
pub fn box_prefilter(field: &DenseField, width: u32) -> Result<DenseField> {
    if width % 2 == 0 {
        return Err(Error::invariant("prefilter_width", "odd"));
    }
    let h = (width / 2) as isize;
    let g = &field.grid;
    let n = g.len();
    let mut cur = field.values.clone();
    for axis in 0..3 {
        let mut next = cur.clone();
        for ch in 0..field.components {
            for i in 0..g.dims[0] {
                for j in 0..g.dims[1] {
                    for k in 0..g.dims[2] {
                        let idx = [i, j, k];
                        let mut sum = 0.0f64;
                        let mut cnt = 0;
                        for s in -h..=h {
                            let t = idx[axis] as isize + s;
                            if t < 0 || t >= g.dims[axis] as isize {
                                continue;
                            }
                            let mut m = idx;
                            m[axis] = t as usize;
                            sum += cur[ch * n + g.offset(m[0], m[1], m[2])] as f64;
                            cnt += 1;
                        }
                        next[ch * n + g.offset(i, j, k)] = (sum / cnt as f64) as f32;
                    }
                }
            }
        }
        cur = next;
    }
    Ok(DenseField { grid: g.clone(), components: field.components, values: cur })
}

/// Trilinear sample of a scalar field, clamped to the grid.
pub fn sample_trilinear(field: &DenseField, p: &V3) -> f32 {
    let g = &field.grid;
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for k in 0..3 {
        let t = ((p[k] - g.origin[k]) / g.spacing[k]).clamp(0.0, (g.dims[k] - 1) as f64);
        let b = (t.floor() as usize).min(g.dims[k].saturating_sub(2));
        base[k] = b;
        frac[k] = if g.dims[k] > 1 { t - b as f64 } else { 0.0 };
    }
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let up = (corner >> k) & 1 == 1;
            idx[k] = (base[k] + up as usize).min(g.dims[k] - 1);
            w *= if up { frac[k] } else { 1.0 - frac[k] };
        }
        if w != 0.0 {
            acc += w * field.at(idx[0], idx[1], idx[2]) as f64;
        }
    }
    acc as f32
}

/// Fluid mask M = 1{phi > 0} on the target nodes, phi resampled trilinearly.
pub fn fluid_mask(sdf: &DenseField, target: &GridSpec) -> (DenseField, Vec<bool>) {
    let d = target.dims;
    let mut phi = vec![0f32; target.len()];
    for i in 0..d[0] {
        for j in 0..d[1] {
            for k in 0..d[2] {
                phi[target.offset(i, j, k)] = sample_trilinear(sdf, &target.position(i, j, k));
            }
        }
    }
    let mask = phi.iter().map(|v| *v > 0.0).collect();
    (DenseField::scalar(target.clone(), phi), mask)
}

/// Velocity from NPY: channels-first (3, Nx, Ny, Nz), on `grid`.
pub fn read_structured_velocity(path: &Path, grid: &GridSpec) -> Result<DenseField> {
    let arr = npy::read(path)?;
    let d = grid.dims;
    let expect = vec![3, d[0], d[1], d[2]];
    if arr.shape != expect {
        return Err(Error::format(path, format!("shape {:?}, expected {:?}", arr.shape, expect)));
    }
    let values = arr.to_f32().map_err(|m| Error::format(path, m))?;
    Ok(DenseField { grid: grid.clone(), components: 3, values })
}

pub fn write_summary(path: &Path, r: &Resampled, kernel: &KernelSpec, fp: Footprint) -> Result<()> {
    let g = &r.field.grid;
    let (mode, k, radius) = match fp {
        Footprint::NClosest(k) => ("n_closest", Some(k), None),
        Footprint::Radius(x) => ("radius", None, Some(x)),
    };
    let doc = serde_yaml::to_value(serde_json::json!({
        "origin": g.origin,
        "spacing": g.spacing,
        "dims": g.dims,
        "sample_convention": crate::sdf::SAMPLE_CONVENTION,
        "components": r.field.components,
        "layout": "channels_first",
        "dtype": "<f4",
        "kernel": kernel.kind.name(),
        "sharpness": kernel.sharpness,
        "power": kernel.power,
        "eps": kernel.eps,
        "eccentricity": kernel.eccentricity,
        "footprint": mode,
        "k": k,
        "radius": radius,
        "hole_count": r.hole_count(),
    }))
    .expect("summary converts");
    util::write_atomic(path, serde_yaml::to_string(&doc).expect("summary serializes").as_bytes())
}
