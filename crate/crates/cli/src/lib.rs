//! `forge`: one entry point for every pipeline stage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use flowforge::config::{resolve_config, resolve_str, write_provenance, ProvenanceRecord, ResolvedConfig};
use flowforge::orchestrator::{Backend, MaterializeOptions};
use flowforge::pipeline::{self, OrchestrateOptions};
use flowforge::resample::ini::InterpolatorJob;
use flowforge::resample::{Footprint, SourcePoints};
use flowforge::{npy, util, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "forge", version, about = "Obstacle scenes, SDFs, run capsules and ML grids for channel-flow datasets")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Base YAML configuration; built-in defaults when absent.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted overrides, e.g. `repeat=3` or `sdf_policy.dx=8`.
    overrides: Vec<String>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BackendArg {
    Slurm,
    Local,
    DryRun,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample scenes and write STL + YAML pairs.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long, default_value = "scenes")]
        out: PathBuf,
        /// Continue from the saved generator state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Voxelize every geometry pair into a signed distance field.
    Sdf {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long, default_value = "scenes")]
        geometry: PathBuf,
        #[arg(short, long, default_value = "sdf")]
        out: PathBuf,
        /// Grid spacing in lattice units; must divide every domain extent.
        #[arg(long)]
        dx: Option<u32>,
        /// Also export a CSV slice, `axis:index` with axis x, y or z.
        #[arg(long)]
        slice: Option<String>,
    },
    /// Materialize run capsules and submit them in dependency-chained lanes.
    Orchestrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long, default_value = "scenes")]
        geometry: PathBuf,
        #[arg(long, default_value = "sdf")]
        sdf: PathBuf,
        #[arg(short, long, default_value = "dataset")]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        executables: Option<PathBuf>,
        #[arg(long)]
        submit_command: Option<String>,
        /// Same as `--backend dry_run`.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        force: bool,
    },
    /// Interpolate solver output (or a CSV point cloud) onto target grids.
    Resample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// CSV with columns x,y,z,f...
        #[arg(long)]
        source: Option<PathBuf>,
        /// Interpolator INI; overrides kernel, footprint and target grid.
        #[arg(long)]
        ini: Option<PathBuf>,
        #[arg(short, long, default_value = "resampled")]
        out: PathBuf,
    },
    /// Coverage tables from scene sidecars.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long, default_value = "scenes")]
        scenes: PathBuf,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
    },
    /// Stationarity gate for one case or a whole dataset.
    Gate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        eps_u: Option<f64>,
        #[arg(long)]
        dphi: Option<f64>,
    },
    /// Resolve and check a configuration; prints its digest.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Print the frozen configuration as well.
        #[arg(long)]
        print: bool,
    },
}

fn load(c: &ConfigArgs) -> Result<ResolvedConfig> {
    match &c.config {
        Some(p) => resolve_config(p, &c.overrides),
        None => resolve_str("{}", &c.overrides),
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn parse_slice(s: &str) -> Result<(usize, usize)> {
    let (a, i) = s.split_once(':').ok_or_else(|| Error::Invalid(format!("--slice '{s}': expected axis:index")))?;
    let axis = match a {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        _ => return Err(Error::Invalid(format!("--slice axis '{a}' is not x, y or z"))),
    };
    let index = i.parse().map_err(|_| Error::Invalid(format!("--slice index '{i}'")))?;
    Ok((axis, index))
}

fn apply_ini(cfg: &mut ResolvedConfig, path: &Path) -> Result<()> {
    let job = InterpolatorJob::parse(&util::read_string(path)?)?;
    let rp = &mut cfg.resample_policy;
    rp.kernel.kind = job.kernel.kind;
    rp.kernel.sharpness = job.kernel.sharpness;
    rp.kernel.power = job.kernel.power;
    rp.kernel.eps = job.kernel.eps;
    rp.kernel.eccentricity = job.kernel.eccentricity;
    match job.footprint {
        Footprint::NClosest(k) => {
            rp.footprint.mode = flowforge::resample::kernel::FootprintMode::NClosest;
            rp.footprint.k = Some(k);
        }
        Footprint::Radius(r) => {
            rp.footprint.mode = flowforge::resample::kernel::FootprintMode::Radius;
            rp.footprint.radius = Some(r);
        }
    }
    rp.targets = vec![job.cells];
    rp.origin = job.origin;
    rp.extent = job.extent;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    util::set_threads(cli.jobs)?;
    match cli.command {
        Command::Generate { cfg, out, resume } => {
            let c = stage("config", load(&cfg))?;
            let o = stage("generate", pipeline::generate(&c, &out, resume))?;
            println!("generate: {} scene(s) in {} (index {})", o.pairs.len(), out.display(), o.state.index);
        }
        Command::Sdf { cfg, geometry, out, dx, slice } => {
            let c = stage("config", load(&cfg))?;
            let sl = slice.as_deref().map(parse_slice).transpose()?;
            let written = stage("sdf", pipeline::sdf_stage(&c, &geometry, &out, dx))?;
            if let Some((axis, index)) = sl {
                let grid = stage("sdf", pipeline::sdf_grid(&c, dx))?;
                for p in &written {
                    let a = stage("sdf", npy::read(p))?;
                    let f = flowforge::sdf::DenseField::scalar(grid.clone(), a.to_f32().map_err(|m| Error::format(p, m).in_stage("sdf"))?);
                    let csv = f.extract_slice(axis, index).map_err(|e| Error::format(p, e.to_string()).in_stage("sdf"))?;
                    let name = format!("{}_slice_{}{index}.csv", p.file_stem().unwrap().to_string_lossy(), ["x", "y", "z"][axis]);
                    stage("sdf", util::write_atomic(&out.join(name), csv.as_bytes()))?;
                }
            }
            println!("sdf: {} field(s) in {}", written.len(), out.display());
        }
        Command::Orchestrate { cfg, geometry, sdf, dataset, backend, templates, executables, submit_command, dry_run, force } => {
            let c = stage("config", load(&cfg))?;
            let backend = match (dry_run, backend) {
                (true, _) | (false, Some(BackendArg::DryRun)) => Backend::DryRun,
                (false, Some(BackendArg::Slurm)) => Backend::Slurm,
                (false, Some(BackendArg::Local)) => Backend::Local,
                (false, None) => c.orchestration_policy.backend.into(),
            };
            let opts = OrchestrateOptions {
                backend,
                force,
                materialize: MaterializeOptions {
                    templates_dir: templates,
                    executables_dir: executables,
                    sdf_dir: sdf.is_dir().then_some(sdf),
                    force,
                },
                submit_command,
            };
            let o = stage("orchestrate", pipeline::orchestrate(&c, &geometry, &dataset, &opts))?;
            let r = &o.report;
            println!(
                "orchestrate: {} case(s), {} submission(s), {} completed, {} failed, {} skipped",
                o.cases.len(),
                r.submissions.len(),
                r.completed.len(),
                r.failed.len(),
                r.skipped.len()
            );
            if let Some(p) = &o.plan_file {
                println!("plan: {}", p.display());
            }
            if !r.failed.is_empty() {
                return Err(Error::Scheduler(format!("{} case(s) failed: {}", r.failed.len(), r.failed.join(", "))).in_stage("orchestrate"));
            }
        }
        Command::Resample { cfg, dataset, source, ini, out } => {
            let mut c = stage("config", load(&cfg))?;
            if let Some(p) = &ini {
                stage("resample", apply_ini(&mut c, p))?;
            }
            match (dataset, source) {
                (Some(d), None) => {
                    let dirs = stage("resample", pipeline::resample_dataset(&c, &d))?;
                    let mut rec = ProvenanceRecord::new(&c, "resample");
                    rec.samples_generated = stage("resample", flowforge::orchestrator::load_cases(&d))?.len() as u64;
                    stage("resample", write_provenance(&rec, &c, &d))?;
                    println!("resample: {} grid(s) written", dirs.len());
                }
                (None, Some(s)) => {
                    let text = stage("resample", util::read_string(&s))?;
                    let src = SourcePoints::from_csv(&text).map_err(|e| Error::format(&s, e.to_string()).in_stage("resample"))?;
                    let dirs = stage("resample", pipeline::resample_source(&c, &src, None, &out))?;
                    let mut rec = ProvenanceRecord::new(&c, "resample");
                    rec.samples_generated = dirs.len() as u64;
                    stage("resample", write_provenance(&rec, &c, &out))?;
                    println!("resample: {} grid(s) in {}", dirs.len(), out.display());
                }
                _ => return Err(Error::Invalid("give exactly one of --dataset or --source".into()).in_stage("resample")),
            }
        }
        Command::Report { cfg, scenes, out } => {
            let c = stage("config", load(&cfg))?;
            let r = stage("report", pipeline::report(&c, &scenes, &out))?;
            let mut rec = ProvenanceRecord::new(&c, "report");
            rec.samples_generated = r.scenes.len() as u64;
            stage("report", write_provenance(&rec, &c, &out))?;
            println!("report: {} scene(s), {} skipped sidecar(s), tables in {}", r.scenes.len(), r.skipped, out.display());
        }
        Command::Gate { cfg, case, dataset, eps_u, dphi } => {
            let mut c = stage("config", load(&cfg))?;
            if let Some(e) = eps_u {
                c.diagnostics.eps_u_max = e;
            }
            if let Some(d) = dphi {
                c.diagnostics.dphi_max = d;
            }
            let reports = match (case, dataset) {
                (Some(dir), None) => {
                    let r = stage("gate", flowforge::diagnostics::gate_case(&dir, &c.diagnostics))?;
                    vec![(dir.display().to_string(), r)]
                }
                (None, Some(d)) => stage("gate", pipeline::gate_dataset(&c, &d))?,
                _ => return Err(Error::Invalid("give exactly one of --case or --dataset".into()).in_stage("gate")),
            };
            let mut failed = 0;
            for (id, r) in &reports {
                println!(
                    "{id}: eps_u={:.3e} delta_phi={:.3e} eps2={:.3e} eps_inf={:.3e} {}",
                    r.eps_u,
                    r.delta_phi,
                    r.eps2,
                    r.eps_inf,
                    if r.pass { "pass" } else { "FAIL" }
                );
                failed += (!r.pass) as usize;
            }
            if failed > 0 {
                return Err(Error::Invalid(format!("{failed} case(s) failed the stationarity gate")).in_stage("gate"));
            }
        }
        Command::Validate { cfg, print } => {
            let c = stage("config", load(&cfg))?;
            stage("validate", flowforge::geometry::sample::check_ranges(&c))?;
            println!("config_digest {}", flowforge::config::config_hash(&c));
            if print {
                print!("{}", c.to_yaml());
            }
        }
    }
    Ok(())
}

/// Parse `argv` (program name first) and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("forge: {e}");
            e.exit_code()
        }
    }
}
