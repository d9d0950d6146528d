//! One hierarchical configuration for every stage: YAML base file, dotted
//! `key.path=value` overrides, `${key}` references, strict schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};

use crate::geometry::Family;
use crate::resample::kernel::{FootprintMode, KernelKind};
use crate::sampling::SamplingMode;
use crate::{util, Error, Result};

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const SNAPSHOT_FILE: &str = "resolved_config.yaml";

/// Paths whose value is a free-form map: a base file replaces them wholesale.
const FREE_FORM: &[&str] = &["shape_mix"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolvedConfig {
    pub bounding_box: BoundingBox,
    pub pose: PosePolicy,
    pub number_of_objects: u32,
    pub repeat: u64,
    /// Discovery draws skipped before the final run; defaults to `repeat`.
    pub initial_test_repeat: Option<u64>,
    pub use_sobol: bool,
    pub seed: u64,
    pub number_of_retries_object_creation: u32,
    pub global_scene_restart_budget: u32,
    pub prefix: String,
    pub name_object_out: bool,
    pub min_volume: f64,
    /// Minimum surface separation; defaults to twice the SDF spacing.
    pub clearance: Option<f64>,
    pub shape_mix: BTreeMap<String, f64>,
    pub geometries: GeometryRanges,
    pub tessellation: TessellationPolicy,
    pub sim_param_policy: SimParamPolicy,
    pub sdf_policy: SdfPolicy,
    pub resample_policy: ResamplePolicy,
    pub orchestration_policy: OrchestrationPolicy,
    pub diagnostics: GatePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl BoundingBox {
    pub fn min(&self) -> [f64; 3] {
        [self.x_min, self.y_min, self.z_min]
    }
    pub fn max(&self) -> [f64; 3] {
        [self.x_max, self.y_max, self.z_max]
    }
    pub fn extent(&self) -> [f64; 3] {
        [self.x_max - self.x_min, self.y_max - self.y_min, self.z_max - self.z_min]
    }
}

impl Default for BoundingBox {
    fn default() -> Self {
        BoundingBox { x_min: 0.0, x_max: 2048.0, y_min: 0.0, y_max: 512.0, z_min: 0.0, z_max: 512.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PosePolicy {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub decimals: u32,
    pub dir_vector_decimals: u32,
}

impl Default for PosePolicy {
    fn default() -> Self {
        PosePolicy {
            x_min: 146.0,
            x_max: 1800.0,
            y_min: 0.0,
            y_max: 512.0,
            z_min: 0.0,
            z_max: 512.0,
            decimals: 1,
            dir_vector_decimals: 2,
        }
    }
}

pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryRanges {
    pub decimals: u32,
    pub cuboid: CuboidRanges,
    pub cone: ConeRanges,
    pub cylinder: CylinderRanges,
    pub sphere: SphereRanges,
    pub torus: TorusRanges,
    pub wedge: WedgeRanges,
}

impl Default for GeometryRanges {
    fn default() -> Self {
        GeometryRanges {
            decimals: 1,
            cuboid: Default::default(),
            cone: Default::default(),
            cylinder: Default::default(),
            sphere: Default::default(),
            torus: Default::default(),
            wedge: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuboidRanges {
    pub height: Range,
    pub width: Range,
    pub thickness: Range,
}

impl Default for CuboidRanges {
    fn default() -> Self {
        CuboidRanges { height: [5.0, 200.0], width: [5.0, 200.0], thickness: [5.0, 200.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeRanges {
    pub radius_base: Range,
    pub radius_top: Range,
    pub height: Range,
    pub angle: Range,
    pub min_radius_sum: f64,
}

impl Default for ConeRanges {
    fn default() -> Self {
        ConeRanges {
            radius_base: [0.0, 200.0],
            radius_top: [0.0, 200.0],
            height: [5.0, 200.0],
            angle: [45.0, 360.0],
            min_radius_sum: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CylinderRanges {
    pub radius: Range,
    pub height: Range,
    pub angle: Range,
}

impl Default for CylinderRanges {
    fn default() -> Self {
        CylinderRanges { radius: [5.0, 200.0], height: [5.0, 200.0], angle: [45.0, 360.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SphereRanges {
    pub radius: Range,
    /// Sample latitude band and azimuthal sweep; off yields full spheres.
    pub sectors: bool,
    pub alpha: Range,
    pub beta: Range,
    pub gamma: Range,
}

impl Default for SphereRanges {
    fn default() -> Self {
        SphereRanges {
            radius: [5.0, 200.0],
            sectors: false,
            alpha: [-90.0, 90.0],
            beta: [0.0, 90.0],
            gamma: [10.0, 360.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorusRanges {
    pub major_radius: Range,
    pub minor_radius: Range,
}

impl Default for TorusRanges {
    fn default() -> Self {
        TorusRanges { major_radius: [5.0, 200.0], minor_radius: [5.0, 200.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WedgeRanges {
    pub length: Range,
    pub width: Range,
    pub height: Range,
    pub opening_angle: Range,
}

impl Default for WedgeRanges {
    fn default() -> Self {
        WedgeRanges {
            length: [10.0, 200.0],
            width: [30.0, 200.0],
            height: [5.0, 200.0],
            opening_angle: [30.0, 90.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TessellationPolicy {
    /// Fixed angular segment count; when absent it follows the chord rule.
    pub segments: Option<u32>,
    pub chord_dx: f64,
}

impl Default for TessellationPolicy {
    fn default() -> Self {
        TessellationPolicy { segments: None, chord_dx: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Axes<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Copy> Axes<T> {
    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl Default for Axes<bool> {
    fn default() -> Self {
        Axes { x: false, y: true, z: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParamPolicy {
    pub re_band: Range,
    pub magnitude_min: f64,
    pub magnitude_max: f64,
    pub min_x_component_generator: f64,
    pub min_x_component_after_scaling: f64,
    pub periodic_directions: Axes<bool>,
    pub periodic_probability: f64,
    pub refinement_probability: f64,
    pub precision: u32,
    pub l_char: f64,
    pub tau_cap: f64,
    pub ma_inlet_max: f64,
    pub ma_max: f64,
    pub smagorinsky_cs: f64,
    pub rejection_budget: u32,
}

impl Default for SimParamPolicy {
    fn default() -> Self {
        SimParamPolicy {
            re_band: [100.0, 15000.0],
            magnitude_min: 0.001488,
            magnitude_max: 0.1488,
            min_x_component_generator: 0.10,
            min_x_component_after_scaling: 0.001,
            periodic_directions: Axes::default(),
            periodic_probability: 0.5,
            refinement_probability: 0.20,
            precision: 5,
            l_char: 512.0,
            tau_cap: 1.99,
            ma_inlet_max: 0.12,
            ma_max: 0.20,
            smagorinsky_cs: 0.16,
            rejection_budget: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdfPolicy {
    pub dx: u32,
    pub band: u32,
    pub aniso: [f64; 2],
}

impl Default for SdfPolicy {
    fn default() -> Self {
        SdfPolicy { dx: 16, band: 8, aniso: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub sharpness: f64,
    pub power: f64,
    pub eps: f64,
    pub eccentricity: [f64; 3],
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { kind: KernelKind::Linear, sharpness: 2.0, power: 2.0, eps: 1e-12, eccentricity: [1.0, 1.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FootprintConfig {
    pub mode: FootprintMode,
    /// Neighbour count; absent picks 4/6/8 from the target grid size.
    pub k: Option<usize>,
    pub radius: Option<f64>,
}

impl Default for FootprintConfig {
    fn default() -> Self {
        FootprintConfig { mode: FootprintMode::NClosest, k: None, radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResamplePolicy {
    pub kernel: KernelConfig,
    pub footprint: FootprintConfig,
    /// Target grids as cell counts per axis (samples = cells + 1).
    pub targets: Vec<[u32; 3]>,
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub channels_first: bool,
    /// Optional box prefilter width in source samples (odd); off by default.
    pub prefilter_width: Option<u32>,
}

impl Default for ResamplePolicy {
    fn default() -> Self {
        ResamplePolicy {
            kernel: KernelConfig::default(),
            footprint: FootprintConfig::default(),
            targets: vec![[127, 31, 31]],
            origin: [0.0; 3],
            extent: [2048.0, 512.0, 512.0],
            channels_first: true,
            prefilter_width: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Slurm,
    Local,
    DryRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobScriptPolicy {
    pub nodes: u32,
    pub ntasks_per_node: u32,
    pub partition: String,
    pub time: String,
    pub export: String,
    pub setup_lines: Vec<String>,
    pub launch: String,
}

impl Default for JobScriptPolicy {
    fn default() -> Self {
        JobScriptPolicy {
            nodes: 1,
            ntasks_per_node: 72,
            partition: "singlenode".into(),
            time: "24:00:00".into(),
            export: "NONE".into(),
            setup_lines: vec![
                "source ~/.bashrc".into(),
                "conda activate walberla".into(),
                "module load intelmpi/2021.4.0".into(),
            ],
            launch: "mpirun -n 72".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AveragingParams {
    pub eval_interval: u64,
    pub avg_start_timestep: u64,
    pub comp_interval: u64,
    pub no_of_timesteps_to_average: u64,
    pub forced_write_interval: u64,
    pub dx_si: f64,
    pub dt_si: f64,
    pub rho_si: f64,
}

impl Default for AveragingParams {
    fn default() -> Self {
        AveragingParams {
            eval_interval: 1000,
            avg_start_timestep: 50000,
            comp_interval: 10,
            no_of_timesteps_to_average: 10000,
            forced_write_interval: 10000,
            dx_si: 1.0,
            dt_si: 1.0,
            rho_si: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestrationPolicy {
    pub lanes: usize,
    pub backend: BackendKind,
    pub templates_dir: Option<String>,
    pub executables_dir: Option<String>,
    pub submit_command: String,
    pub job: JobScriptPolicy,
    pub timesteps: u64,
    pub averaging: AveragingParams,
}

impl Default for OrchestrationPolicy {
    fn default() -> Self {
        OrchestrationPolicy {
            lanes: 3,
            backend: BackendKind::DryRun,
            templates_dir: None,
            executables_dir: None,
            submit_command: "sbatch".into(),
            job: JobScriptPolicy::default(),
            timesteps: 100000,
            averaging: AveragingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatePolicy {
    pub eps_u_max: f64,
    pub dphi_max: f64,
    pub delta: f64,
}

impl Default for GatePolicy {
    fn default() -> Self {
        GatePolicy { eps_u_max: 1e-3, dphi_max: 1e-2, delta: 1e-12 }
    }
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        let shape_mix = Family::ALL
            .iter()
            .map(|f| (f.name().to_string(), if *f == Family::Torus { 0.5 } else { 1.0 }))
            .collect();
        ResolvedConfig {
            bounding_box: BoundingBox::default(),
            pose: PosePolicy::default(),
            number_of_objects: 1,
            repeat: 10,
            initial_test_repeat: None,
            use_sobol: true,
            seed: 0,
            number_of_retries_object_creation: 100,
            global_scene_restart_budget: 1000,
            prefix: "object".into(),
            name_object_out: false,
            min_volume: 1000.0,
            clearance: None,
            shape_mix,
            geometries: GeometryRanges::default(),
            tessellation: TessellationPolicy::default(),
            sim_param_policy: SimParamPolicy::default(),
            sdf_policy: SdfPolicy::default(),
            resample_policy: ResamplePolicy::default(),
            orchestration_policy: OrchestrationPolicy::default(),
            diagnostics: GatePolicy::default(),
        }
    }
}

impl ResolvedConfig {
    pub fn sampling_mode(&self) -> SamplingMode {
        if self.use_sobol {
            SamplingMode::Sobol
        } else {
            SamplingMode::Uniform
        }
    }

    pub fn c_min(&self) -> f64 {
        self.clearance.unwrap_or(2.0 * self.sdf_policy.dx as f64)
    }

    pub fn initial_test_repeat(&self) -> u64 {
        self.initial_test_repeat.unwrap_or(self.repeat)
    }

    /// Shape weights in canonical family order.
    pub fn family_weights(&self) -> Vec<(Family, f64)> {
        Family::ALL
            .iter()
            .map(|f| (*f, self.shape_mix.get(f.name()).copied().unwrap_or(0.0)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounding_box;
        for (name, lo, hi) in [("x", b.x_min, b.x_max), ("y", b.y_min, b.y_max), ("z", b.z_min, b.z_max)] {
            if !(lo < hi) {
                return Err(Error::invariant(format!("bounding_box.{name}"), "min < max"));
            }
        }
        let p = &self.pose;
        for (name, lo, hi, dlo, dhi) in [
            ("x", p.x_min, p.x_max, b.x_min, b.x_max),
            ("y", p.y_min, p.y_max, b.y_min, b.y_max),
            ("z", p.z_min, p.z_max, b.z_min, b.z_max),
        ] {
            if !(lo <= hi) {
                return Err(Error::invariant(format!("pose.{name}"), "min <= max"));
            }
            if lo < dlo || hi > dhi {
                return Err(Error::invariant(format!("pose.{name}"), "placement interval inside bounding_box"));
            }
        }
        if self.number_of_objects == 0 {
            return Err(Error::invariant("number_of_objects", "positive"));
        }
        if self.repeat == 0 {
            return Err(Error::invariant("repeat", "positive"));
        }
        if self.number_of_retries_object_creation == 0 {
            return Err(Error::invariant("number_of_retries_object_creation", "positive"));
        }
        if !(self.min_volume >= 0.0) {
            return Err(Error::invariant("min_volume", "nonnegative"));
        }
        if let Some(c) = self.clearance {
            if !(c >= 0.0) {
                return Err(Error::invariant("clearance", "nonnegative"));
            }
        }
        let mut any_positive = false;
        for (name, w) in &self.shape_mix {
            if name.parse::<Family>().is_err() {
                return Err(Error::invariant(format!("shape_mix.{name}"), "known family name"));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::invariant(format!("shape_mix.{name}"), "weight >= 0"));
            }
            any_positive |= *w > 0.0;
        }
        if !any_positive {
            return Err(Error::invariant("shape_mix", "no positive weight"));
        }
        crate::geometry::sample::check_ranges(self)?;
        let s = &self.sim_param_policy;
        if !(s.re_band[0] > 0.0 && s.re_band[0] <= s.re_band[1]) {
            return Err(Error::invariant("sim_param_policy.re_band", "0 < min <= max"));
        }
        if !(s.magnitude_min > 0.0 && s.magnitude_min <= s.magnitude_max) {
            return Err(Error::invariant("sim_param_policy.magnitude_min", "0 < magnitude_min <= magnitude_max"));
        }
        if !(s.min_x_component_generator > 0.0 && s.min_x_component_generator <= 1.0) {
            return Err(Error::invariant("sim_param_policy.min_x_component_generator", "in (0, 1]"));
        }
        if s.min_x_component_after_scaling > s.magnitude_max {
            return Err(Error::invariant("sim_param_policy.min_x_component_after_scaling", "<= magnitude_max"));
        }
        if s.periodic_directions.x {
            return Err(Error::invariant("sim_param_policy.periodic_directions.x", "streamwise axis is never periodic"));
        }
        for (name, v) in [("periodic_probability", s.periodic_probability), ("refinement_probability", s.refinement_probability)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invariant(format!("sim_param_policy.{name}"), "in [0, 1]"));
            }
        }
        if !(s.l_char > 0.0) {
            return Err(Error::invariant("sim_param_policy.l_char", "positive"));
        }
        if !(0.12..=0.18).contains(&s.smagorinsky_cs) {
            return Err(Error::invariant("sim_param_policy.smagorinsky_cs", "in [0.12, 0.18]"));
        }
        if s.rejection_budget == 0 {
            return Err(Error::invariant("sim_param_policy.rejection_budget", "positive"));
        }
        crate::sdf::GridSpec::preset(self.sdf_policy.dx, &self.bounding_box, self.sdf_policy.aniso)
            .map_err(|_| Error::invariant("sdf_policy.dx", "dx divides every bounding_box extent exactly"))?;
        if self.sdf_policy.band == 0 {
            return Err(Error::invariant("sdf_policy.band", ">= 1"));
        }
        if !self.sdf_policy.aniso.iter().all(|s| *s > 0.0) {
            return Err(Error::invariant("sdf_policy.aniso", "positive scales"));
        }
        self.resample_policy_check()?;
        if self.orchestration_policy.lanes == 0 {
            return Err(Error::invariant("orchestration_policy.lanes", ">= 1"));
        }
        let g = &self.diagnostics;
        if !(g.delta > 0.0 && g.eps_u_max >= 0.0 && g.dphi_max >= 0.0) {
            return Err(Error::invariant("diagnostics", "delta > 0 and thresholds >= 0"));
        }
        Ok(())
    }

    fn resample_policy_check(&self) -> Result<()> {
        let r = &self.resample_policy;
        crate::resample::kernel::KernelSpec::from_config(&r.kernel)
            .validate()
            .map_err(|m| Error::invariant("resample_policy.kernel", m))?;
        match r.footprint.mode {
            FootprintMode::NClosest => {
                if r.footprint.k == Some(0) {
                    return Err(Error::invariant("resample_policy.footprint.k", "positive"));
                }
            }
            FootprintMode::Radius => match r.footprint.radius {
                Some(x) if x >= 0.0 => {}
                _ => return Err(Error::invariant("resample_policy.footprint.radius", "set and >= 0 in radius mode")),
            },
        }
        for t in &r.targets {
            if t.iter().any(|c| *c == 0) {
                return Err(Error::invariant("resample_policy.targets", "cells >= 1 per axis"));
            }
        }
        if let Some(w) = r.prefilter_width {
            if w % 2 == 0 {
                return Err(Error::invariant("resample_policy.prefilter_width", "odd"));
            }
        }
        Ok(())
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }
}

/// Load `base_file`, apply overrides in order, fill defaults, validate.
pub fn resolve_config(base_file: &Path, overrides: &[String]) -> Result<ResolvedConfig> {
    let text = util::read_string(base_file)?;
    resolve_str(&text, overrides).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", base_file.display())),
        e => e,
    })
}

pub fn resolve_str(text: &str, overrides: &[String]) -> Result<ResolvedConfig> {
    let base: Value = if text.trim().is_empty() {
        Value::Mapping(Mapping::new())
    } else {
        serde_yaml::from_str(text).map_err(|e| match e.location() {
            Some(loc) => Error::Config(format!("line {} column {}: {e}", loc.line(), loc.column())),
            None => Error::Config(e.to_string()),
        })?
    };
    if !base.is_mapping() {
        return Err(Error::Config("top level is not a mapping".into()));
    }
    let mut tree = serde_yaml::to_value(ResolvedConfig::default()).expect("defaults serialize");
    merge(&mut tree, base, "");
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    interpolate(&mut tree)?;
    let mut cfg: ResolvedConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("at '{path}': {}", e.into_inner()))
    })?;
    if cfg.initial_test_repeat.is_none() {
        cfg.initial_test_repeat = Some(cfg.repeat);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn merge(dst: &mut Value, src: Value, path: &str) {
    match (dst, src) {
        (Value::Mapping(d), Value::Mapping(s)) if !FREE_FORM.contains(&path) => {
            for (k, v) in s {
                let key = k.as_str().map(str::to_string).unwrap_or_default();
                let child = if path.is_empty() { key } else { format!("{path}.{key}") };
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v, &child),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

/// Apply one `dotted.key=value` override; the value is read as YAML.
pub fn apply_override(tree: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override '{item}' has an empty key")));
    }
    let value: Value = serde_yaml::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    let mut walked = String::new();
    for (i, part) in parts.iter().enumerate() {
        let free_form = FREE_FORM.contains(&walked.as_str());
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        if node.is_null() {
            *node = Value::Mapping(Mapping::new());
        }
        let map = node
            .as_mapping_mut()
            .ok_or_else(|| Error::Config(format!("unknown override key '{key}': '{walked}' has no children")))?;
        let k = Value::String(part.to_string());
        if !map.contains_key(&k) {
            // A null parent is a declared-optional node and may gain children.
            if !free_form && !(i > 0 && map.is_empty()) {
                return Err(Error::Config(format!("unknown override key '{key}'")));
            }
            map.insert(k.clone(), Value::Null);
        }
        node = map.get_mut(&k).unwrap();
        if i == parts.len() - 1 {
            *node = value.clone();
        }
    }
    Ok(())
}

fn lookup<'a>(tree: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(tree, |node, part| node.as_mapping()?.get(part))
}

fn interpolate(tree: &mut Value) -> Result<()> {
    let snapshot = tree.clone();
    fn walk(node: &mut Value, root: &Value, depth: usize) -> Result<()> {
        if depth > 16 {
            return Err(Error::Config("interpolation nests too deeply".into()));
        }
        match node {
            Value::String(s) => {
                if let Some(inner) = s.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
                    let mut v = lookup(root, inner.trim())
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("unresolved reference '${{{inner}}}'")))?;
                    walk(&mut v, root, depth + 1)?;
                    *node = v;
                }
            }
            Value::Mapping(m) => {
                for (_, v) in m.iter_mut() {
                    walk(v, root, depth)?;
                }
            }
            Value::Sequence(s) => {
                for v in s.iter_mut() {
                    walk(v, root, depth)?;
                }
            }
            _ => {}
        }
        Ok(())
    }
    walk(tree, &snapshot, 0)
}

/// Sorted keys at every level, shortest round-trip floats, no whitespace.
pub fn canonical_json(cfg: &ResolvedConfig) -> String {
    fn emit(v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).unwrap());
                    out.push(':');
                    emit(&m[*k], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(a) => {
                out.push('[');
                for (i, x) in a.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    emit(x, out);
                }
                out.push(']');
            }
            other => out.push_str(&serde_json::to_string(other).unwrap()),
        }
    }
    let v = serde_json::to_value(cfg).expect("config serializes");
    let mut out = String::new();
    emit(&v, &mut out);
    out
}

pub fn config_hash(cfg: &ResolvedConfig) -> String {
    util::sha256_hex(canonical_json(cfg).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub config_digest: String,
    pub seed: u64,
    pub sobol_index: Option<u64>,
    pub samples_generated: u64,
    pub tool_version: String,
    pub timestamp: String,
    pub stage: String,
    pub mode: String,
}

impl ProvenanceRecord {
    pub fn new(cfg: &ResolvedConfig, stage: &str) -> Self {
        ProvenanceRecord {
            config_digest: config_hash(cfg),
            seed: cfg.seed,
            sobol_index: None,
            samples_generated: 0,
            tool_version: crate::TOOL_VERSION.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            stage: stage.to_string(),
            mode: cfg.sampling_mode().to_string(),
        }
    }
}

/// Write `provenance.json` (sorted keys) and the frozen config snapshot.
pub fn write_provenance(record: &ProvenanceRecord, cfg: &ResolvedConfig, dir: &Path) -> Result<()> {
    if record.config_digest.len() != 64 || !record.config_digest.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(Error::invariant("config_digest", "64 lowercase hex characters"));
    }
    let path = dir.join(PROVENANCE_FILE);
    if path.exists() {
        if let Ok(old) = read_provenance(dir) {
            if old.samples_generated > record.samples_generated {
                return Err(Error::Invalid(format!(
                    "{}: counter regression ({} -> {})",
                    path.display(),
                    old.samples_generated,
                    record.samples_generated
                )));
            }
        }
    }
    let value = serde_json::to_value(record).expect("record serializes");
    let sorted: BTreeMap<String, serde_json::Value> = value.as_object().unwrap().clone().into_iter().collect();
    let mut text = serde_json::to_string_pretty(&sorted).unwrap();
    text.push('\n');
    util::write_atomic(&dir.join(SNAPSHOT_FILE), cfg.to_yaml().as_bytes())?;
    util::write_atomic(&path, text.as_bytes())
}

pub fn read_provenance(dir: &Path) -> Result<ProvenanceRecord> {
    let path = dir.join(PROVENANCE_FILE);
    let text = util::read_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PAPER_STYLE: &str = r#"
bounding_box:
  x_min: 0
  x_max: 2048
  y_min: 0
  y_max: 512
  z_min: 0
  z_max: 512
number_of_objects: 1
repeat: 100
shape_mix:
  cuboid: 1.0
  cone: 1.0
  cylinder: 1.0
  sphere: 1.0
  torus: 0.5
  wedge: 1.0
use_sobol: true
initial_test_repeat: ${repeat}
number_of_retries_object_creation: 100
"#;

    #[test]
    fn defaults_and_interpolation() {
        let cfg = resolve_str(PAPER_STYLE, &[]).unwrap();
        assert_eq!(cfg.initial_test_repeat, Some(100));
        assert_eq!(cfg.sdf_policy.dx, 16);
        assert_eq!(cfg.c_min(), 32.0);
        let cfg = resolve_str(PAPER_STYLE, &["repeat=7".into()]).unwrap();
        assert_eq!(cfg.initial_test_repeat(), 7);
    }

    #[test]
    fn overrides() {
        let cfg = resolve_str("repeat: 3\n", &["sdf_policy.dx=8".into(), "number_of_objects=2".into()]).unwrap();
        assert_eq!(cfg.sdf_policy.dx, 8);
        assert_eq!(cfg.number_of_objects, 2);
        let g = crate::sdf::GridSpec::preset(8, &cfg.bounding_box, [1.0, 1.0]).unwrap();
        assert_eq!(g.dims, [256, 64, 64]);
        let cfg = resolve_str("", &["sim_param_policy.re_band=[500, 5000]".into(), "clearance=12".into()]).unwrap();
        assert_eq!(cfg.sim_param_policy.re_band, [500.0, 5000.0]);
        assert_eq!(cfg.c_min(), 12.0);
        let cfg = resolve_str("", &["resample_policy.footprint.k=5".into()]).unwrap();
        assert_eq!(cfg.resample_policy.footprint.k, Some(5));
        let err = resolve_str("", &["sdf_policy.dxx=8".into()]).unwrap_err().to_string();
        assert!(err.contains("sdf_policy.dxx"), "{err}");
        assert!(resolve_str("", &["nope=1".into()]).is_err());
    }

    #[test]
    fn strict_schema_and_invariants() {
        let err = resolve_str("repaet: 3\n", &[]).unwrap_err().to_string();
        assert!(err.contains("repaet"), "{err}");
        let zero = "shape_mix: {cuboid: 0, cone: 0}\n";
        assert!(resolve_str(zero, &[]).unwrap_err().to_string().contains("no positive weight"));
        assert!(resolve_str("sdf_policy: {dx: 5}\n", &[]).unwrap_err().to_string().contains("sdf_policy.dx"));
        assert!(resolve_str("pose: {x_min: -5}\n", &[]).is_err());
        let e = resolve_str("repeat: [1\n", &[]).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
        assert!(resolve_str("shape_mix: {blob: 1}\n", &[]).is_err());
    }

    #[test]
    fn shape_mix_replaces_defaults() {
        let cfg = resolve_str("shape_mix: {cuboid: 1}\n", &[]).unwrap();
        assert_eq!(cfg.shape_mix.len(), 1);
        let cfg = resolve_str("shape_mix: {cuboid: 1}\n", &["shape_mix.torus=2".into()]).unwrap();
        assert_eq!(cfg.shape_mix.get("torus"), Some(&2.0));
    }

    #[test]
    fn hash_ignores_order_and_comments() {
        let a = resolve_str("repeat: 3\nseed: 9\n", &[]).unwrap();
        let b = resolve_str("# note\nseed: 9\n\nrepeat: 3   # trailing\n", &[]).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = resolve_str("repeat: 3\nseed: 10\n", &[]).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn frozen_snapshot_fidelity() {
        let cfg = resolve_str(PAPER_STYLE, &["number_of_objects=2".into(), "sdf_policy.aniso=[1.0, 1.0142]".into()]).unwrap();
        let again = resolve_str(&cfg.to_yaml(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(config_hash(&cfg), config_hash(&again));
    }

    #[test]
    fn provenance_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ResolvedConfig::default();
        let mut rec = ProvenanceRecord::new(&cfg, "generate");
        rec.samples_generated = 3;
        rec.sobol_index = Some(12);
        write_provenance(&rec, &cfg, dir.path()).unwrap();
        assert_eq!(read_provenance(dir.path()).unwrap(), rec);
        rec.samples_generated = 5;
        write_provenance(&rec, &cfg, dir.path()).unwrap();
        assert_eq!(read_provenance(dir.path()).unwrap().samples_generated, 5);
        rec.samples_generated = 2;
        let err = write_provenance(&rec, &cfg, dir.path()).unwrap_err().to_string();
        assert!(err.contains("counter regression"));
        let text = std::fs::read_to_string(dir.path().join(PROVENANCE_FILE)).unwrap();
        let keys: Vec<_> = text.lines().filter_map(|l| l.trim().strip_prefix('"')?.split('"').next()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let frozen = resolve_config(&dir.path().join(SNAPSHOT_FILE), &[]).unwrap();
        assert_eq!(frozen.initial_test_repeat, Some(10));
    }

    proptest! {
        #[test]
        fn hash_tracks_values(seed in any::<u64>(), repeat in 1u64..1000, w in 0.01f64..10.0) {
            let text = format!("seed: {seed}\nrepeat: {repeat}\nshape_mix: {{cuboid: {w}, torus: 1.0}}\n");
            let reordered = format!("shape_mix: {{torus: 1.0, cuboid: {w}}}\nrepeat: {repeat}\nseed: {seed}\n");
            let a = resolve_str(&text, &[]).unwrap();
            let b = resolve_str(&reordered, &[]).unwrap();
            prop_assert_eq!(config_hash(&a), config_hash(&b));
            let c = resolve_str(&text, &[format!("seed={}", seed.wrapping_add(1))]).unwrap();
            prop_assert_ne!(config_hash(&a), config_hash(&c));
        }

        #[test]
        fn disjoint_overrides_commute(objs in 1u32..5, dx in prop::sample::select(vec![4u32, 8, 16]), seed in any::<u64>()) {
            let a = format!("number_of_objects={objs}");
            let b = format!("sdf_policy.dx={dx}");
            let c = format!("seed={seed}");
            let one = resolve_str("", &[a.clone(), b.clone(), c.clone()]).unwrap();
            let two = resolve_str("", &[c, b, a]).unwrap();
            prop_assert_eq!(one, two);
        }
    }
}
