//! Dataset coverage tables built from scene sidecars.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::scene::read_scene_yaml;
use crate::geometry::Family;
use crate::{util, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub x_range: [f64; 2],
    pub yz_range: [f64; 2],
    pub re_band: [f64; 2],
    pub placement_bins: usize,
    pub value_bins: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { x_range: [146.0, 1800.0], yz_range: [0.0, 512.0], re_band: [100.0, 15000.0], placement_bins: 20, value_bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub stem: String,
    pub families: Vec<Family>,
    pub centroids: Vec<[f64; 3]>,
    pub inlet: [f64; 3],
    pub re: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageReport {
    pub scenes: Vec<SceneSample>,
    pub skipped: usize,
    pub files: Vec<(String, String)>,
}

impl CoverageReport {
    /// Scenes breaking the streamwise, placement or Reynolds policy.
    pub fn violations(&self, opts: &ReportOptions) -> Vec<String> {
        let mut v = Vec::new();
        for s in &self.scenes {
            if !(s.inlet[0] > 0.0) {
                v.push(format!("{}: u_x = {}", s.stem, s.inlet[0]));
            }
            for c in &s.centroids {
                if c[0] < opts.x_range[0] || c[0] > opts.x_range[1] {
                    v.push(format!("{}: centroid x = {}", s.stem, c[0]));
                }
            }
            if s.re < opts.re_band[0] || s.re > opts.re_band[1] {
                v.push(format!("{}: Re = {}", s.stem, s.re));
            }
        }
        v
    }
}

pub fn read_scenes(dir: &Path) -> Result<(Vec<SceneSample>, usize)> {
    let mut scenes = Vec::new();
    let mut skipped = 0;
    for path in util::list_with_extension(dir, "yaml")? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        if stem.ends_with(".sdf") || !stem.ends_with(|c: char| c.is_ascii_digit()) {
            continue;
        }
        let parsed = util::read_string(&path).ok().and_then(|t| read_scene_yaml(&t).ok());
        let meta = match parsed {
            Some(m) if !m.objects.is_empty() => m,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let get = |k: &str| meta.sim_f64(k);
        let (Some(ux), Some(uy), Some(uz), Some(re)) = (get("inlet_velocity_x"), get("inlet_velocity_y"), get("inlet_velocity_z"), get("Re")) else {
            skipped += 1;
            continue;
        };
        scenes.push(SceneSample {
            stem,
            families: meta.objects.iter().map(|o| o.params.family()).collect(),
            centroids: meta.objects.iter().map(|o| o.pose.position.into()).collect(),
            inlet: [ux, uy, uz],
            re,
        });
    }
    Ok((scenes, skipped))
}

/// Wilson score interval at 95%.
pub fn wilson(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let z = 1.959963984540054;
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let den = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Equal-width bins over [lo, hi], last bin closed; returns (counts, under, over).
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<usize>, usize, usize) {
    let mut counts = vec![0; bins];
    let (mut under, mut over) = (0, 0);
    for &v in values {
        if v < lo {
            under += 1;
        } else if v > hi {
            over += 1;
        } else if hi == lo {
            counts[0] += 1;
        } else {
            let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
    }
    (counts, under, over)
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|b| lo + (hi - lo) * b as f64 / bins as f64).collect()
}

fn hist_rows(out: &mut String, label: &str, values: &[f64], lo: f64, hi: f64, bins: usize) {
    let (counts, under, over) = histogram(values, lo, hi, bins);
    let e = edges(lo, hi, bins);
    for b in 0..bins {
        let _ = writeln!(out, "{label},{},{},{}", e[b], e[b + 1], counts[b]);
    }
    let _ = writeln!(out, "{label},-inf,{lo},{under}");
    let _ = writeln!(out, "{label},{hi},inf,{over}");
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

pub fn render_tables(scenes: &[SceneSample], skipped: usize, opts: &ReportOptions) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let all: Vec<Family> = scenes.iter().flat_map(|s| s.families.iter().copied()).collect();
    let n = all.len();

    let mut t = String::from("# objects counted per family; 95% Wilson score interval\nfamily,count,proportion,ci_low,ci_high\n");
    for f in Family::ALL {
        let k = all.iter().filter(|x| **x == f).count();
        let (lo, hi) = wilson(k, n);
        let p = if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let _ = writeln!(t, "{},{k},{p},{lo},{hi}", f.name());
    }
    files.push(("shape_freq.csv".to_string(), t));

    let pb = opts.placement_bins;
    let mut t = format!(
        "# {pb} equal bins; x over [{}, {}], y and z over [{}, {}]; last bin closed; under/over rows count outliers\naxis,bin_lo,bin_hi,count\n",
        opts.x_range[0], opts.x_range[1], opts.yz_range[0], opts.yz_range[1]
    );
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let vals: Vec<f64> = scenes.iter().flat_map(|s| s.centroids.iter().map(move |c| c[axis])).collect();
        let r = if axis == 0 { opts.x_range } else { opts.yz_range };
        hist_rows(&mut t, name, &vals, r[0], r[1], pb);
    }
    files.push(("placement_hist.csv".to_string(), t));

    let vb = opts.value_bins;
    let mut t = format!("# {vb} equal bins per component over the observed [min, max]; last bin closed\ncomponent,bin_lo,bin_hi,count\n");
    let comps: [(&str, Vec<f64>); 4] = [
        ("u_x", scenes.iter().map(|s| s.inlet[0]).collect()),
        ("u_y", scenes.iter().map(|s| s.inlet[1]).collect()),
        ("u_z", scenes.iter().map(|s| s.inlet[2]).collect()),
        ("u_mag", scenes.iter().map(|s| s.inlet.iter().map(|c| c * c).sum::<f64>().sqrt()).collect()),
    ];
    for (name, vals) in &comps {
        let (lo, hi) = range(vals);
        hist_rows(&mut t, name, vals, lo, hi, vb);
    }
    files.push(("inlet_hist.csv".to_string(), t));

    let res: Vec<f64> = scenes.iter().map(|s| s.re).collect();
    let mut t = format!("# {vb} equal bins over re_band [{}, {}]; last bin closed\nseries,bin_lo,bin_hi,count\n", opts.re_band[0], opts.re_band[1]);
    hist_rows(&mut t, "Re", &res, opts.re_band[0], opts.re_band[1], vb);
    files.push(("re_hist.csv".to_string(), t));

    let mut t = String::from("# Re of every scene containing the family; quantiles by linear interpolation\nfamily,count,min,q1,median,q3,max\n");
    for f in Family::ALL {
        let mut v: Vec<f64> = scenes.iter().filter(|s| s.families.contains(&f)).map(|s| s.re).collect();
        if v.is_empty() {
            let _ = writeln!(t, "{},0,,,,,", f.name());
            continue;
        }
        v.sort_by(f64::total_cmp);
        let _ = writeln!(
            t,
            "{},{},{},{},{},{},{}",
            f.name(),
            v.len(),
            v[0],
            quantile(&v, 0.25),
            quantile(&v, 0.5),
            quantile(&v, 0.75),
            v[v.len() - 1]
        );
    }
    files.push(("re_by_family.csv".to_string(), t));

    let (ux_lo, _) = range(&comps[0].1);
    let xs: Vec<f64> = scenes.iter().flat_map(|s| s.centroids.iter().map(|c| c[0])).collect();
    let (x_lo, x_hi) = range(&xs);
    let (re_lo, re_hi) = range(&res);
    let mut t = String::from("metric,value\n");
    for (k, v) in [
        ("scenes", scenes.len().to_string()),
        ("objects", n.to_string()),
        ("skipped_sidecars", skipped.to_string()),
        ("min_u_x", ux_lo.to_string()),
        ("min_centroid_x", x_lo.to_string()),
        ("max_centroid_x", x_hi.to_string()),
        ("min_re", re_lo.to_string()),
        ("max_re", re_hi.to_string()),
    ] {
        let _ = writeln!(t, "{k},{v}");
    }
    files.push(("summary.csv".to_string(), t));
    files
}

/// Read every scene sidecar in `scenes_dir` and write the tables to `out_dir`.
pub fn coverage_report(scenes_dir: &Path, out_dir: &Path, opts: &ReportOptions) -> Result<CoverageReport> {
    let (scenes, skipped) = read_scenes(scenes_dir)?;
    if scenes.is_empty() {
        return Err(crate::Error::Invalid(format!("{}: no parseable scene sidecars", scenes_dir.display())));
    }
    let files = render_tables(&scenes, skipped, opts);
    util::create_dir_all(out_dir)?;
    for (name, text) in &files {
        util::write_atomic(&out_dir.join(name), text.as_bytes())?;
    }
    Ok(CoverageReport { scenes, skipped, files })
}
