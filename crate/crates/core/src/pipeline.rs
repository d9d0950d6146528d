//! Stage drivers shared by the command line and the tests. Each stage reads
//! its inputs from disk and checks them before doing any work.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{write_provenance, ProvenanceRecord, ResolvedConfig};
use crate::diagnostics::coverage::{coverage_report, CoverageReport, ReportOptions};
use crate::diagnostics::{gate_case, StationarityReport};
use crate::geometry::sample::{check_ranges, draw_dimension};
use crate::geometry::scene::{build_scene, config_digest_of, export_scene, read_scene_yaml};
use crate::geometry::TriMesh;
use crate::orchestrator::synthetic::{synthetic_solver, VELOCITY_FILE};
use crate::orchestrator::{
    discover_pairs, load_cases, materialize_all, plan_lanes, submit, verify_case_dir, Backend, CaseManifest, MaterializeOptions,
    SubmitOptions, SubmitReport, SDF_FILE,
};
use crate::resample::ini::InterpolatorJob;
use crate::resample::kernel::FootprintMode;
use crate::resample::{box_prefilter, default_k, fluid_mask, interpolate, make_target_grid, write_summary, Footprint, KdTree, KernelSpec, SourcePoints};
use crate::sampling::{GeneratorState, STATE_FILE};
use crate::sdf::{voxelize, DenseField, GridSpec, SdfSidecar};
use crate::{npy, util, Error, Result};

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub state: GeneratorState,
}

/// Emit scenes until `repeat` have been generated. With `resume`, continue
/// from the saved generator state in `out_dir`.
pub fn generate(cfg: &ResolvedConfig, out_dir: &Path, resume: bool) -> Result<GenerateOutput> {
    check_ranges(cfg)?;
    util::create_dir_all(out_dir)?;
    let state_path = out_dir.join(STATE_FILE);
    let mut state = if resume && state_path.exists() {
        let s = GeneratorState::load(&state_path)?;
        if s.mode != cfg.sampling_mode() || s.seed != cfg.seed {
            return Err(Error::format(&state_path, "saved state was produced with a different mode or seed"));
        }
        s
    } else {
        let mut s = GeneratorState::new(cfg.sampling_mode(), cfg.seed);
        s.freeze_dimension(draw_dimension(cfg), cfg.initial_test_repeat())?;
        s
    };
    let digest = crate::config::config_hash(cfg);
    let mut pairs = Vec::new();
    while state.samples_generated < cfg.repeat {
        let index = state.samples_generated;
        let scene = build_scene(cfg, &mut state)?;
        pairs.push(export_scene(&scene, cfg, out_dir, index, &digest)?);
        state.save(out_dir)?;
    }
    state.save(out_dir)?;
    let mut rec = ProvenanceRecord::new(cfg, "generate");
    rec.samples_generated = state.samples_generated;
    rec.sobol_index = (state.mode == crate::sampling::SamplingMode::Sobol).then_some(state.index);
    write_provenance(&rec, cfg, out_dir)?;
    Ok(GenerateOutput { pairs, state })
}

pub fn sdf_grid(cfg: &ResolvedConfig, dx: Option<u32>) -> Result<GridSpec> {
    GridSpec::preset(dx.unwrap_or(cfg.sdf_policy.dx), &cfg.bounding_box, cfg.sdf_policy.aniso)
}

/// Voxelize every geometry pair; writes `<stem>.npy` and `<stem>.sdf.yaml`.
pub fn sdf_stage(cfg: &ResolvedConfig, geometry_dir: &Path, out_dir: &Path, dx: Option<u32>) -> Result<Vec<PathBuf>> {
    let grid = sdf_grid(cfg, dx)?;
    let pairs = discover_pairs(geometry_dir)?;
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("{}: no geometry pairs", geometry_dir.display())));
    }
    util::create_dir_all(out_dir)?;
    let band = cfg.sdf_policy.band;
    let mut written = Vec::new();
    for p in &pairs {
        let text = util::read_string(&p.yaml)?;
        read_scene_yaml(&text).map_err(|m| Error::format(&p.yaml, m))?;
        let bytes = util::read(&p.stl)?;
        let mesh = TriMesh::from_stl_bytes(&bytes).map_err(|m| Error::format(&p.stl, m))?;
        let field = voxelize(&mesh, &grid, band).map_err(|e| Error::format(&p.stl, e.to_string()))?;
        let npy_path = out_dir.join(format!("{}.npy", p.stem));
        field.export_npy(&npy_path)?;
        let mut side = SdfSidecar::new(&grid, band, &bytes);
        side.extra.insert("source_mesh".into(), format!("{}.stl", p.stem));
        if let Some(d) = config_digest_of(&text) {
            side.extra.insert("scene_config_digest".into(), d);
        }
        side.write(&out_dir.join(format!("{}.sdf.yaml", p.stem)))?;
        written.push(npy_path);
    }
    let mut rec = ProvenanceRecord::new(cfg, "sdf");
    rec.samples_generated = written.len() as u64;
    write_provenance(&rec, cfg, out_dir)?;
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct OrchestrateOptions {
    pub backend: Backend,
    pub force: bool,
    pub materialize: MaterializeOptions,
    pub submit_command: Option<String>,
}

#[derive(Debug, Clone)]
pub struct OrchestrateOutput {
    pub cases: Vec<CaseManifest>,
    pub report: SubmitReport,
    pub plan_file: Option<PathBuf>,
}

pub fn orchestrate(cfg: &ResolvedConfig, geometry_dir: &Path, dataset: &Path, opts: &OrchestrateOptions) -> Result<OrchestrateOutput> {
    let mut mopts = opts.materialize.clone();
    mopts.force = opts.force;
    if mopts.templates_dir.is_none() {
        mopts.templates_dir = cfg.orchestration_policy.templates_dir.as_ref().map(PathBuf::from);
    }
    if mopts.executables_dir.is_none() {
        mopts.executables_dir = cfg.orchestration_policy.executables_dir.as_ref().map(PathBuf::from);
    }
    let made = materialize_all(geometry_dir, dataset, cfg, &mopts)?;
    let n = made.len() as u64;
    let plan = plan_lanes(0, n, cfg.orchestration_policy.lanes)?;
    let sopts = SubmitOptions {
        submit_command: opts.submit_command.clone().unwrap_or_else(|| cfg.orchestration_policy.submit_command.clone()),
        force: opts.force,
    };
    let report = submit(dataset, &plan, opts.backend, &sopts, &synthetic_solver)?;
    let mut plan_file = None;
    if opts.backend == Backend::DryRun {
        let p = dataset.join("submit_plan.sh");
        util::write_atomic(&p, report.script.as_bytes())?;
        plan_file = Some(p);
    }
    let mut rec = ProvenanceRecord::new(cfg, "orchestrate");
    rec.samples_generated = n;
    write_provenance(&rec, cfg, dataset)?;
    Ok(OrchestrateOutput { cases: load_cases(dataset)?, report, plan_file })
}

/// Footprint for a target grid under the configured policy.
pub fn footprint_for(cfg: &ResolvedConfig, samples: [usize; 3]) -> Result<Footprint> {
    let f = &cfg.resample_policy.footprint;
    match f.mode {
        FootprintMode::NClosest => Ok(Footprint::NClosest(f.k.unwrap_or_else(|| default_k(samples)))),
        FootprintMode::Radius => f.radius.map(Footprint::Radius).ok_or_else(|| Error::invariant("footprint.radius", "required in radius mode")),
    }
}

fn dims_name(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

/// Resample one source onto every configured target grid under `out_dir`.
pub fn resample_source(cfg: &ResolvedConfig, src: &SourcePoints, sdf: Option<&DenseField>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rp = &cfg.resample_policy;
    let kernel = KernelSpec::from_config(&rp.kernel);
    let tree = KdTree::build(&src.positions).map_err(Error::Invalid)?;
    let mut written = Vec::new();
    for cells in &rp.targets {
        let target = make_target_grid(rp.origin, rp.extent, *cells)?;
        let fp = footprint_for(cfg, target.dims)?;
        let r = interpolate(src, &tree, &target, &kernel, fp)?;
        let dir = out_dir.join(dims_name(target.dims));
        util::create_dir_all(&dir)?;
        if rp.channels_first || r.field.components == 1 {
            r.field.export_npy(&dir.join("velocity.npy"))?;
        } else {
            let n = target.len();
            let d = target.dims;
            for (c, name) in ["u", "v", "w"].iter().enumerate().take(r.field.components) {
                npy::write_f32(&dir.join(format!("{name}.npy")), &d, &r.field.values[c * n..(c + 1) * n])?;
            }
        }
        if let Some(phi) = sdf {
            let (phi_t, mask) = fluid_mask(phi, &target);
            phi_t.export_npy(&dir.join("sdf.npy"))?;
            util::write_atomic(&dir.join("mask.npy"), &npy::to_bytes_bool(&target.dims, &mask))?;
        }
        let holes: Vec<f32> = r.holes.iter().map(|h| *h as u8 as f32).collect();
        if r.hole_count() > 0 {
            npy::write_f32(&dir.join("holes.npy"), &target.dims, &holes)?;
        }
        write_summary(&dir.join("summary.yaml"), &r, &kernel, fp)?;
        let job = InterpolatorJob {
            casefile: VELOCITY_FILE.into(),
            kernel,
            footprint: fp,
            cells: *cells,
            origin: rp.origin,
            extent: rp.extent,
            fields: (0..src.components).map(|c| ["velocity_x", "velocity_y", "velocity_z"].get(c).map(|s| s.to_string()).unwrap_or(format!("field_{c}"))).collect(),
            output_npy: true,
            output_path: ".".into(),
            index: 0,
        };
        util::write_atomic(&dir.join("interpolator.ini"), job.render().as_bytes())?;
        written.push(dir);
    }
    Ok(written)
}

fn read_case_field(path: &Path, grid: &GridSpec, components: usize) -> Result<DenseField> {
    let a = npy::read(path)?;
    let mut shape = Vec::new();
    if components > 1 {
        shape.push(components);
    }
    shape.extend(grid.dims);
    if a.shape != shape {
        return Err(Error::format(path, format!("shape {:?}, expected {:?}", a.shape, shape)));
    }
    Ok(DenseField { grid: grid.clone(), components, values: a.to_f32().map_err(|m| Error::format(path, m))? })
}

/// Resample the solver output of every case that has one into `<case>/resampled/`.
pub fn resample_dataset(cfg: &ResolvedConfig, dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for m in load_cases(dataset)? {
        let dir = dataset.join(&m.case_id);
        verify_case_dir(&dir)?;
        let vpath = dir.join(VELOCITY_FILE);
        if !vpath.exists() {
            continue;
        }
        let grid = m.grid_spec();
        let mut u = read_case_field(&vpath, &grid, 3)?;
        if let Some(w) = cfg.resample_policy.prefilter_width {
            u = box_prefilter(&u, w)?;
        }
        let sdf = if dir.join(SDF_FILE).exists() { Some(read_case_field(&dir.join(SDF_FILE), &grid, 1)?) } else { None };
        out.extend(resample_source(cfg, &SourcePoints::from_field(&u), sdf.as_ref(), &dir.join("resampled"))?);
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{}: no case has solver output", dataset.display())));
    }
    Ok(out)
}

/// Gate every case with solver output; writes `gate_summary.csv` in the dataset.
pub fn gate_dataset(cfg: &ResolvedConfig, dataset: &Path) -> Result<Vec<(String, StationarityReport)>> {
    let mut out = Vec::new();
    for m in load_cases(dataset)? {
        let dir = dataset.join(&m.case_id);
        if dir.join(VELOCITY_FILE).exists() {
            out.push((m.case_id.clone(), gate_case(&dir, &cfg.diagnostics)?));
        }
    }
    let mut csv = String::from("case_id,window,eps_u,eps2,eps_inf,delta_phi,pass\n");
    for (id, r) in &out {
        let _ = writeln!(csv, "{id},{},{},{},{},{},{}", r.window, r.eps_u, r.eps2, r.eps_inf, r.delta_phi, r.pass);
    }
    util::write_atomic(&dataset.join("gate_summary.csv"), csv.as_bytes())?;
    Ok(out)
}

pub fn report_options(cfg: &ResolvedConfig) -> ReportOptions {
    ReportOptions { x_range: [cfg.pose.x_min, cfg.pose.x_max], re_band: cfg.sim_param_policy.re_band, ..Default::default() }
}

pub fn report(cfg: &ResolvedConfig, scenes_dir: &Path, out_dir: &Path) -> Result<CoverageReport> {
    coverage_report(scenes_dir, out_dir, &report_options(cfg))
}
