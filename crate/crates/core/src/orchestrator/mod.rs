//! Run-capsule materialization, lane planning and job submission.

pub mod backend;
pub mod synthetic;
pub mod template;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{config_hash, ResolvedConfig};
use crate::geometry::scene::{read_scene_yaml, SceneMeta};
use crate::sdf::{GridSpec, SIGN_CONVENTION};
use crate::{util, Error, Result};
use template::{TemplateValue, Values};

pub use backend::{submit, Backend, SubmitOptions, SubmitReport};

pub const MANIFEST_FILE: &str = "manifest.yaml";
pub const INDEX_FILE: &str = "dataset_index.yaml";
pub const JOB_SCRIPT: &str = "job_script.slurm";
pub const TRAILER_MARKER: &str = "# --- provenance trailer ---";
pub const SDF_FILE: &str = "sdf.npy";
pub const SDF_SIDECAR: &str = "sdf.yaml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Submitted,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub index: u64,
    pub stem: String,
    pub stl_hash: String,
    pub yaml_hash: String,
    pub config_digest: String,
    pub lane: Option<usize>,
    pub status: Status,
    pub job_ids: Vec<String>,
    pub grid: GridRecord,
    pub units: String,
    pub sdf_sign: String,
    pub bc_policy: BTreeMap<String, String>,
    pub re_target: f64,
    pub ma_target: f64,
    pub omega: f64,
    pub tau: f64,
    pub nu0: f64,
    pub inlet_profile: String,
    pub inlet_velocity: [f64; 3],
    pub periodicity: [bool; 3],
    pub executable: String,
    pub parameter_file: String,
    pub job_identifier: String,
    pub tool_version: String,
    pub has_sdf: bool,
}

impl CaseManifest {
    pub fn job_id(&self) -> Option<&str> {
        self.job_ids.last().map(String::as_str)
    }

    pub fn grid_spec(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec { origin: g.origin, spacing: g.spacing, aniso: [g.spacing[1] / g.spacing[0], g.spacing[2] / g.spacing[0]], dims: g.dims }
    }

    pub fn read(case_dir: &Path) -> Result<Self> {
        let path = case_dir.join(MANIFEST_FILE);
        let text = util::read_string(&path)?;
        serde_yaml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn write(&self, case_dir: &Path) -> Result<()> {
        util::write_atomic(&case_dir.join(MANIFEST_FILE), serde_yaml::to_string(self).expect("manifest serializes").as_bytes())
    }
}

/// A geometry/metadata pair found in the geometry directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasePair {
    pub index: u64,
    pub stem: String,
    pub stl: PathBuf,
    pub yaml: PathBuf,
}

fn trailing_index(stem: &str) -> Option<u64> {
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        None
    } else {
        digits.chars().rev().collect::<String>().parse().ok()
    }
}

/// Pair `<stem>.stl` with `<stem>.yaml`, ordered by trailing integer then stem.
pub fn discover_pairs(dir: &Path) -> Result<Vec<CasePair>> {
    let stls = util::list_with_extension(dir, "stl")?;
    let yamls = util::list_with_extension(dir, "yaml")?;
    let stem = |p: &PathBuf| p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    let ystems: Vec<String> = yamls.iter().map(stem).collect();
    let sstems: Vec<String> = stls.iter().map(stem).collect();
    for (p, s) in yamls.iter().zip(&ystems) {
        if s.ends_with(".sdf") || p.file_name().is_some_and(|n| n == "resolved_config.yaml") {
            continue;
        }
        if !sstems.contains(s) && trailing_index(s).is_some() {
            return Err(Error::format(p, "orphan metadata: no matching .stl"));
        }
    }
    let mut pairs = Vec::new();
    for (p, s) in stls.iter().zip(&sstems) {
        if !ystems.contains(s) {
            return Err(Error::format(p, "orphan geometry: no matching .yaml"));
        }
        let index = trailing_index(s).ok_or_else(|| Error::format(p, "stem has no trailing case number"))?;
        pairs.push(CasePair { index, stem: s.clone(), stl: p.clone(), yaml: dir.join(format!("{s}.yaml")) });
    }
    pairs.sort_by(|a, b| a.index.cmp(&b.index).then(a.stem.cmp(&b.stem)));
    Ok(pairs)
}

pub fn case_id(stl: &[u8], yaml: &[u8], config_digest: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(stl);
    h.update(yaml);
    h.update(config_digest.as_bytes());
    hex::encode(h.finalize())
}

/// Metadata bytes without the appended trailer.
pub fn strip_trailer(yaml: &[u8]) -> &[u8] {
    let marker = format!("\n{TRAILER_MARKER}\n");
    match yaml.windows(marker.len()).position(|w| w == marker.as_bytes()) {
        Some(i) => &yaml[..i + 1],
        None => yaml,
    }
}

pub fn select_executable(refinement: u8) -> Result<(&'static str, &'static str)> {
    match refinement {
        0 => Ok(("LBComplexGeometryCGSmagorinsky", "D3Q27_cumulant_test_stability_1.prm")),
        1 => Ok(("ComplexGeometry_withRefinement", "D3Q27_cumulant_test_stability_cube_100_1.conf")),
        r => Err(Error::invariant("refinement_parameter", format!("0 or 1, got {r}"))),
    }
}

pub fn job_script(cfg: &ResolvedConfig, case_dir: &Path, executable: &str, parameter_file: &str) -> String {
    let j = &cfg.orchestration_policy.job;
    let mut s = String::from("#!/bin/bash\n");
    s += &format!("#SBATCH --nodes={}\n", j.nodes);
    s += &format!("#SBATCH --ntasks-per-node={}\n", j.ntasks_per_node);
    s += &format!("#SBATCH --partition={}\n", j.partition);
    s += &format!("#SBATCH --time={}\n", j.time);
    s += &format!("#SBATCH --export={}\n\n", j.export);
    for l in &j.setup_lines {
        s += l;
        s.push('\n');
    }
    s += &format!("\ncd {}\n{} ./{} {}\n", case_dir.display(), j.launch, executable, parameter_file);
    s
}

#[derive(Debug, Clone, Default)]
pub struct MaterializeOptions {
    pub templates_dir: Option<PathBuf>,
    pub executables_dir: Option<PathBuf>,
    /// Directory holding `<stem>.npy` / `<stem>.sdf.yaml` from the SDF stage.
    pub sdf_dir: Option<PathBuf>,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Materialized {
    Created,
    Unchanged,
    Replaced,
}

fn sim_values(meta: &SceneMeta, path: &Path) -> Result<(Values, [f64; 3], [bool; 3], u8)> {
    let f = |k: &str| meta.sim_f64(k).ok_or_else(|| Error::format(path, format!("simulation_parameters.{k} missing")));
    let flag = |k: &str| meta.sim_flag(k).ok_or_else(|| Error::format(path, format!("simulation_parameters.{k} missing")));
    let u = [f("inlet_velocity_x")?, f("inlet_velocity_y")?, f("inlet_velocity_z")?];
    let per = [flag("periodicity_x")?, flag("periodicity_y")?, flag("periodicity_z")?];
    let refinement = f("refinement_parameter")?;
    if refinement.fract() != 0.0 || !(0.0..=255.0).contains(&refinement) {
        return Err(Error::format(path, format!("refinement_parameter {refinement} is not a flag")));
    }
    let mut v = Values::new();
    for (k, x) in ["x", "y", "z"].iter().zip(u) {
        v.insert(format!("inlet_velocity_{k}"), x.into());
    }
    for (k, p) in ["x", "y", "z"].iter().zip(per) {
        v.insert(format!("periodicity_{k}"), p.into());
    }
    v.insert("omega".into(), f("omega")?.into());
    v.insert("tau".into(), f("tau")?.into());
    v.insert("nu0".into(), f("nu0")?.into());
    v.insert("re".into(), f("Re")?.into());
    Ok((v, u, per, refinement as u8))
}

fn load_template(opts: &MaterializeOptions, name: &str, refined: bool) -> Result<String> {
    match &opts.templates_dir {
        Some(dir) => util::read_string(&dir.join(name)),
        None => Ok(if refined { template::REFINED_TEMPLATE } else { template::STANDARD_TEMPLATE }.to_string()),
    }
}

/// Build (or reuse) the case directory for one pair under `dataset`.
pub fn materialize_case(pair: &CasePair, dataset: &Path, cfg: &ResolvedConfig, opts: &MaterializeOptions) -> Result<(CaseManifest, Materialized)> {
    let stl = util::read(&pair.stl)?;
    let yaml = util::read(&pair.yaml)?;
    let digest = config_hash(cfg);
    let id = case_id(&stl, &yaml, &digest);
    let dir = dataset.join(&id);
    let stl_hash = util::sha256_hex(&stl);
    let yaml_hash = util::sha256_hex(&yaml);
    let mut outcome = Materialized::Created;
    if dir.join(MANIFEST_FILE).exists() {
        let old = CaseManifest::read(&dir)?;
        if old.stl_hash != stl_hash || old.yaml_hash != yaml_hash || old.config_digest != digest {
            return Err(Error::Integrity(format!("{}: case_id {id} already holds different inputs", dir.display())));
        }
        if !(opts.force && old.status == Status::Completed) {
            return Ok((old, Materialized::Unchanged));
        }
        let keep = dir.join(format!("previous_{}", chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ")));
        util::create_dir_all(&keep)?;
        for name in [synthetic::VELOCITY_FILE, synthetic::MEANS_DIR, MANIFEST_FILE] {
            let src = dir.join(name);
            if src.exists() {
                std::fs::rename(&src, keep.join(name)).map_err(|e| Error::io(&src, e))?;
            }
        }
        outcome = Materialized::Replaced;
    }
    util::create_dir_all(&dir)?;

    let text = std::str::from_utf8(&yaml).map_err(|_| Error::format(&pair.yaml, "not utf-8"))?;
    let meta = read_scene_yaml(text).map_err(|m| Error::format(&pair.yaml, m))?;
    let (mut values, inlet, periodicity, refinement) = sim_values(&meta, &pair.yaml)?;
    let (exe, param_name) = select_executable(refinement)?;
    let grid = GridSpec::preset(cfg.sdf_policy.dx, &cfg.bounding_box, cfg.sdf_policy.aniso)?;
    let av = &cfg.orchestration_policy.averaging;
    let stl_name = format!("{}.stl", pair.stem);
    values.insert("timesteps".into(), (cfg.orchestration_policy.timesteps as i64).into());
    values.insert("smagorinsky_cs".into(), cfg.sim_param_policy.smagorinsky_cs.into());
    values.insert("geometry_file".into(), TemplateValue::Text(stl_name.clone()));
    values.insert("dx".into(), (cfg.sdf_policy.dx as i64).into());
    for (k, n) in ["x", "y", "z"].iter().zip(grid.dims) {
        values.insert(format!("grid_{k}"), (n as i64).into());
    }
    for (k, x) in [
        ("eval_interval", av.eval_interval),
        ("avg_start_timestep", av.avg_start_timestep),
        ("comp_interval", av.comp_interval),
        ("no_of_timesteps_to_average", av.no_of_timesteps_to_average),
        ("forced_write_interval", av.forced_write_interval),
    ] {
        values.insert(k.into(), (x as i64).into());
    }
    for (k, x) in [("dx_si", av.dx_si), ("dt_si", av.dt_si), ("rho_si", av.rho_si)] {
        values.insert(k.into(), x.into());
    }
    let tpl = load_template(opts, param_name, refinement == 1)?;
    let patched = template::patch_template(&tpl, &values, cfg.sim_param_policy.precision as usize)
        .map_err(|e| Error::Invalid(format!("{param_name}: {e}")))?;
    util::write_atomic(&dir.join(param_name), patched.as_bytes())?;
    if let Some(ed) = &opts.executables_dir {
        let src = ed.join(exe);
        util::write_atomic(&dir.join(exe), &util::read(&src)?)?;
    }

    let job = meta.sim.get("job_identifier_").cloned().unwrap_or_else(|| pair.stem.clone());
    let mut copy = yaml.clone();
    if !copy.ends_with(b"\n") {
        copy.push(b'\n');
    }
    let nu0 = meta.sim_f64("nu0").unwrap_or(0.0);
    let trailer = format!(
        "{TRAILER_MARKER}\nprovenance_trailer:\n  job_identifier: {job}\n  LU: {}\n  dx: {}\n",
        serde_yaml::to_string(&nu0).unwrap().trim(),
        cfg.sdf_policy.dx
    );
    copy.extend_from_slice(trailer.as_bytes());
    util::write_atomic(&dir.join(&stl_name), &stl)?;
    util::write_atomic(&dir.join(format!("{}.yaml", pair.stem)), &copy)?;

    let mut has_sdf = false;
    if let Some(sd) = &opts.sdf_dir {
        let npy = sd.join(format!("{}.npy", pair.stem));
        if npy.exists() {
            util::write_atomic(&dir.join(SDF_FILE), &util::read(&npy)?)?;
            let side = sd.join(format!("{}.sdf.yaml", pair.stem));
            if side.exists() {
                util::write_atomic(&dir.join(SDF_SIDECAR), &util::read(&side)?)?;
            }
            has_sdf = true;
        }
    }
    util::write_atomic(&dir.join(JOB_SCRIPT), job_script(cfg, &dir, exe, param_name).as_bytes())?;

    let speed = inlet.iter().map(|c| c * c).sum::<f64>().sqrt();
    let axes = ["x", "y", "z"];
    let mut bc = BTreeMap::new();
    bc.insert("inlet".into(), "velocity (x_min face)".into());
    bc.insert("outlet".into(), "pressure (x_max face)".into());
    bc.insert("obstacles".into(), "halfway bounce-back".into());
    for k in 1..3 {
        let face = if periodicity[k] { "periodic".to_string() } else { "no-slip halfway bounce-back".to_string() };
        bc.insert(format!("walls_{}", axes[k]), face);
    }
    if periodicity[0] {
        bc.insert("streamwise".into(), "periodic".into());
    }
    let manifest = CaseManifest {
        case_id: id,
        index: pair.index,
        stem: pair.stem.clone(),
        stl_hash,
        yaml_hash,
        config_digest: digest,
        lane: None,
        status: Status::Pending,
        job_ids: Vec::new(),
        grid: GridRecord { origin: grid.origin, spacing: grid.spacing, dims: grid.dims },
        units: "lu".into(),
        sdf_sign: SIGN_CONVENTION.into(),
        bc_policy: bc,
        re_target: meta.sim_f64("Re").unwrap_or(0.0),
        ma_target: meta.sim_f64("mach_inlet").unwrap_or(speed * 3f64.sqrt()),
        omega: meta.sim_f64("omega").unwrap_or(0.0),
        tau: meta.sim_f64("tau").unwrap_or(0.0),
        nu0,
        inlet_profile: "uniform".into(),
        inlet_velocity: inlet,
        periodicity,
        executable: exe.into(),
        parameter_file: param_name.into(),
        job_identifier: job,
        tool_version: crate::TOOL_VERSION.into(),
        has_sdf,
    };
    manifest.write(&dir)?;
    Ok((manifest, outcome))
}

/// Materialize every pair in `geometry_dir` and rewrite the dataset index.
pub fn materialize_all(geometry_dir: &Path, dataset: &Path, cfg: &ResolvedConfig, opts: &MaterializeOptions) -> Result<Vec<(CaseManifest, Materialized)>> {
    util::create_dir_all(dataset)?;
    let pairs = discover_pairs(geometry_dir)?;
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("{}: no geometry pairs", geometry_dir.display())));
    }
    let out = pairs.iter().map(|p| materialize_case(p, dataset, cfg, opts)).collect::<Result<Vec<_>>>()?;
    let cases: Vec<CaseManifest> = out.iter().map(|(m, _)| m.clone()).collect();
    write_index(dataset, &cases)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub case_id: String,
    pub index: u64,
    pub stem: String,
    pub lane: Option<usize>,
    pub status: Status,
    pub job_id: Option<String>,
}

pub fn write_index(dataset: &Path, cases: &[CaseManifest]) -> Result<()> {
    let entries: Vec<IndexEntry> = cases
        .iter()
        .map(|c| IndexEntry {
            case_id: c.case_id.clone(),
            index: c.index,
            stem: c.stem.clone(),
            lane: c.lane,
            status: c.status,
            job_id: c.job_id().map(str::to_string),
        })
        .collect();
    util::write_atomic(&dataset.join(INDEX_FILE), serde_yaml::to_string(&entries).expect("index serializes").as_bytes())
}

pub fn read_index(dataset: &Path) -> Result<Vec<IndexEntry>> {
    let path = dataset.join(INDEX_FILE);
    serde_yaml::from_str(&util::read_string(&path)?).map_err(|e| Error::format(&path, e.to_string()))
}

/// Manifests in index order.
pub fn load_cases(dataset: &Path) -> Result<Vec<CaseManifest>> {
    read_index(dataset)?.iter().map(|e| CaseManifest::read(&dataset.join(&e.case_id))).collect()
}

/// Recompute the case id from the bytes in a case directory.
pub fn verify_case_dir(case_dir: &Path) -> Result<String> {
    let m = CaseManifest::read(case_dir)?;
    let stl = util::read(&case_dir.join(format!("{}.stl", m.stem)))?;
    let yaml = util::read(&case_dir.join(format!("{}.yaml", m.stem)))?;
    let id = case_id(&stl, strip_trailer(&yaml), &m.config_digest);
    let name = case_dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if id != name || id != m.case_id {
        return Err(Error::Integrity(format!("{}: content hash {id} does not match", case_dir.display())));
    }
    Ok(id)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanePlan {
    pub lanes: Vec<Vec<u64>>,
}

impl LanePlan {
    /// (predecessor, successor) pairs.
    pub fn edges(&self) -> Vec<(u64, u64)> {
        self.lanes.iter().flat_map(|l| l.windows(2).map(|w| (w[0], w[1]))).collect()
    }

    pub fn lane_of(&self, case: u64) -> Option<usize> {
        self.lanes.iter().position(|l| l.contains(&case))
    }

    pub fn len(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Contiguous split of [start, end) into `k` lanes; earlier lanes take the extras.
pub fn plan_lanes(start: u64, end: u64, k: usize) -> Result<LanePlan> {
    if end <= start {
        return Err(Error::invariant("range", "end > start"));
    }
    if k == 0 {
        return Err(Error::invariant("lanes", ">= 1"));
    }
    let n = end - start;
    let (base, extra) = (n / k as u64, n % k as u64);
    let mut lanes = Vec::with_capacity(k);
    let mut next = start;
    for lane in 0..k as u64 {
        let size = base + (lane < extra) as u64;
        lanes.push((next..next + size).collect());
        next += size;
    }
    Ok(LanePlan { lanes })
}
