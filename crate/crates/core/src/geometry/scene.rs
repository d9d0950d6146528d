//! Scene assembly with retries and restarts, plus STL/YAML export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde_yaml::{Mapping, Value};

use super::sample::{draw_dimension, param_count, pick_family, sample_pose, sample_shape, Draw, POSE_DIMS};
use super::validate::{validate_solid, Guard, Limits, Solid, Verdict};
use super::{Family, PlacedShape, Pose, Resolution, ShapeParams, SphereSector, TriMesh, V3};
use crate::config::ResolvedConfig;
use crate::sampling::{GeneratorState, Phase};
use crate::simparams::{sample_sim_params, SimParams, RE_RULE};
use crate::{util, Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneProvenance {
    pub seed: u64,
    pub mode: String,
    /// Ordinal of this scene among emitted scenes.
    pub scene_index: u64,
    pub start_index: u64,
    pub end_index: u64,
    /// Rejected candidates before acceptance, per object slot.
    pub retries: Vec<u32>,
    pub restarts: u32,
    pub rejections: BTreeMap<String, u32>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub objects: Vec<PlacedShape>,
    pub sim_params: SimParams,
    pub provenance: SceneProvenance,
}

pub fn resolution(cfg: &ResolvedConfig) -> Resolution {
    match cfg.tessellation.segments {
        Some(n) => Resolution::Fixed(n),
        None => Resolution::Chord(cfg.tessellation.chord_dx),
    }
}

enum Slot {
    Placed(Solid, u32),
    Exhausted,
}

fn fill_slot(cfg: &ResolvedConfig, state: &mut GeneratorState, context: &[Solid], lim: &Limits, rejections: &mut BTreeMap<String, u32>) -> Result<Slot> {
    let weights = cfg.family_weights();
    let d = state.dimension.ok_or_else(|| Error::Invalid("dimension not frozen".into()))?;
    let res = resolution(cfg);
    let mut reject = |state: &mut GeneratorState, why: &str| {
        *rejections.entry(why.to_string()).or_insert(0) += 1;
        state.advance_on_reject();
    };
    for attempt in 0..cfg.number_of_retries_object_creation {
        let u = state.next_point()?;
        let family = pick_family(&weights, u[0]);
        let n = param_count(family, &cfg.geometries);
        let params = match sample_shape(family, &cfg.geometries, &u[1..1 + n])? {
            Draw::Accept(p) => p,
            Draw::Reject(_) => {
                reject(state, "parameters");
                continue;
            }
        };
        let pose = sample_pose(&cfg.pose, &u[d - POSE_DIMS..]);
        let placed = match PlacedShape::new(params, pose, res) {
            Ok(p) => p,
            Err(_) => {
                reject(state, "degenerate");
                continue;
            }
        };
        let quick = Limits { c_min: 0.0, v_min: f64::NEG_INFINITY, ..lim.clone() };
        let (lo, hi) = placed.mesh.aabb();
        let p = placed.pose.position;
        let inside = (0..3).all(|k| {
            lo[k] >= quick.domain_min[k] - quick.eps
                && hi[k] <= quick.domain_max[k] + quick.eps
                && p[k] >= quick.roi_min[k]
                && p[k] <= quick.roi_max[k]
        });
        if !inside {
            reject(state, Guard::InBounds.name());
            continue;
        }
        let solid = Solid::new(placed)?;
        match validate_solid(&solid, context, lim) {
            Verdict::Accept => return Ok(Slot::Placed(solid, attempt)),
            Verdict::Reject(g) => reject(state, g.name()),
        }
    }
    Ok(Slot::Exhausted)
}

/// Draw one feasible scene; the caller persists the advanced state.
pub fn build_scene(cfg: &ResolvedConfig, state: &mut GeneratorState) -> Result<Scene> {
    if state.phase != Phase::FinalRun {
        return Err(Error::Invalid("scene generation requires final_run phase".into()));
    }
    if state.dimension != Some(draw_dimension(cfg)) {
        return Err(Error::Invalid(format!(
            "generator dimension {:?} does not match the configuration ({})",
            state.dimension,
            draw_dimension(cfg)
        )));
    }
    let lim = Limits::from_config(cfg);
    let start_index = state.index;
    let mut restarts = 0u32;
    let mut rejections = BTreeMap::new();
    'scene: loop {
        if restarts > cfg.global_scene_restart_budget {
            return Err(Error::Invalid(format!(
                "infeasible configuration: {} scene restarts exhausted",
                cfg.global_scene_restart_budget
            )));
        }
        let mut solids: Vec<Solid> = Vec::new();
        let mut retries = Vec::new();
        for _ in 0..cfg.number_of_objects {
            match fill_slot(cfg, state, &solids, &lim, &mut rejections)? {
                Slot::Placed(s, r) => {
                    solids.push(s);
                    retries.push(r);
                }
                Slot::Exhausted => {
                    restarts += 1;
                    continue 'scene;
                }
            }
        }
        let sim = match sample_sim_params(&cfg.sim_param_policy, state, cfg.sdf_policy.dx) {
            Ok(s) => s,
            Err(_) => {
                *rejections.entry("sim_params".to_string()).or_insert(0) += 1;
                restarts += 1;
                continue 'scene;
            }
        };
        let provenance = SceneProvenance {
            seed: state.seed,
            mode: state.mode.to_string(),
            scene_index: state.samples_generated,
            start_index,
            end_index: state.index,
            retries,
            restarts,
            rejections,
        };
        state.record_accept();
        return Ok(Scene { objects: solids.into_iter().map(|s| s.shape).collect(), sim_params: sim, provenance });
    }
}

impl Scene {
    /// Disjoint union of the object meshes.
    pub fn fused_mesh(&self) -> TriMesh {
        let mut m = TriMesh::default();
        for o in &self.objects {
            m.append(&o.mesh);
        }
        m
    }

    pub fn last_family(&self) -> Option<Family> {
        self.objects.last().map(|o| o.family())
    }

    pub fn job_identifier(&self, index: u64) -> String {
        let family = self.last_family().map(|f| f.name()).unwrap_or("scene");
        let mode = if self.provenance.mode == "sobol" { "sobol" } else { "random" };
        format!("{family}_{mode}{index}")
    }
}

pub fn scene_stem(prefix: &str, index: u64, family: Option<Family>, name_object_out: bool) -> String {
    match (name_object_out, family) {
        (true, Some(f)) => format!("{prefix}_{f}_{index}"),
        _ => format!("{prefix}_{index}"),
    }
}

fn num(x: f64) -> Value {
    Value::from(if x == 0.0 { 0.0 } else { x })
}

fn map(entries: Vec<(&str, Value)>) -> Value {
    let mut m = Mapping::new();
    for (k, v) in entries {
        m.insert(Value::from(k), v);
    }
    Value::Mapping(m)
}

fn object_record(o: &PlacedShape) -> Value {
    let mut e: Vec<(&str, Value)> = vec![("type", Value::from(o.family().name()))];
    match o.params {
        ShapeParams::Cuboid { height, width, thickness } => {
            e.extend([("height", num(height)), ("width", num(width)), ("thickness", num(thickness))]);
        }
        ShapeParams::Cone { radius_base, radius_top, height, sweep } => {
            e.extend([("radius_1", num(radius_base)), ("radius_2", num(radius_top)), ("height", num(height)), ("angle", num(sweep))]);
        }
        ShapeParams::Cylinder { radius, height, sweep } => {
            e.extend([("radius", num(radius)), ("height", num(height)), ("angle", num(sweep))]);
        }
        ShapeParams::Sphere { radius, sector } => {
            e.push(("radius", num(radius)));
            if let Some(s) = sector {
                e.extend([("alpha", num(s.alpha)), ("beta", num(s.beta)), ("gamma", num(s.gamma))]);
            }
        }
        ShapeParams::Torus { major_radius, minor_radius } => {
            e.extend([("major_radius", num(major_radius)), ("minor_radius", num(minor_radius))]);
        }
        ShapeParams::Wedge { length, width, height, opening_angle } => {
            e.extend([
                ("length", num(length)),
                ("width", num(width)),
                ("height", num(height)),
                ("opening_angle", num(opening_angle)),
                ("x_min", num(0.0)),
                ("x_max", num(length)),
                ("section", Value::from("triangle (0,0) (length,0) (height*cot(opening_angle),height) in x-z, extruded along y by width")),
            ]);
        }
    }
    let p = o.pose.position;
    let d = o.pose.dir_vector;
    let q = o.pose.orientation.quaternion();
    e.extend([
        ("pos_x", num(p.x)),
        ("pos_y", num(p.y)),
        ("pos_z", num(p.z)),
        ("dir_vec_x", num(d.x)),
        ("dir_vec_y", num(d.y)),
        ("dir_vec_z", num(d.z)),
        ("quaternion", Value::Sequence(vec![num(q.w), num(q.i), num(q.j), num(q.k)])),
        ("volume", num(o.volume)),
    ]);
    map(e)
}

fn sim_record(s: &SimParams, job: String) -> Value {
    let flag = |b: bool| Value::from(b as u8);
    map(vec![
        ("LU", num(s.nu0)),
        ("Re", num(s.re)),
        ("dx", Value::from(s.dx_meta)),
        ("inlet_velocity_x", num(s.inlet_velocity[0])),
        ("inlet_velocity_y", num(s.inlet_velocity[1])),
        ("inlet_velocity_z", num(s.inlet_velocity[2])),
        ("job_identifier_", Value::from(job)),
        ("periodicity_x", flag(s.periodicity[0])),
        ("periodicity_y", flag(s.periodicity[1])),
        ("periodicity_z", flag(s.periodicity[2])),
        ("refinement_parameter", flag(s.refinement)),
        ("vector_magnitude", num(s.vector_magnitude)),
        ("nu0", num(s.nu0)),
        ("tau", num(s.tau)),
        ("omega", num(s.omega)),
        ("l_char", num(s.l_char)),
        ("re_rule", Value::from(RE_RULE)),
        ("mach_inlet", num(s.mach_inlet)),
        ("mach_inlet_ok", Value::from(s.mach_inlet_ok)),
        ("mach_global_ok", Value::from(s.mach_global_ok)),
        ("tau_warning", Value::from(s.tau_warning)),
    ])
}

pub fn scene_yaml(scene: &Scene, cfg: &ResolvedConfig, index: u64, config_digest: &str) -> String {
    let b = &cfg.bounding_box;
    let pv = &scene.provenance;
    let rejections = pv.rejections.iter().map(|(k, v)| (Value::from(k.as_str()), Value::from(*v))).collect::<Mapping>();
    let doc = map(vec![
        (
            "domain",
            map(vec![
                ("units", Value::from("lu")),
                ("bounds", Value::Sequence([b.x_min, b.x_max, b.y_min, b.y_max, b.z_min, b.z_max].map(num).to_vec())),
            ]),
        ),
        ("geometries", Value::Sequence(scene.objects.iter().map(object_record).collect())),
        ("simulation_parameters", sim_record(&scene.sim_params, scene.job_identifier(index))),
        (
            "provenance",
            map(vec![
                ("config_digest", Value::from(config_digest)),
                ("tool_version", Value::from(crate::TOOL_VERSION)),
                ("seed", Value::from(pv.seed)),
                ("mode", Value::from(pv.mode.as_str())),
                ("scene_index", Value::from(pv.scene_index)),
                ("start_index", Value::from(pv.start_index)),
                ("end_index", Value::from(pv.end_index)),
                ("retries", Value::Sequence(pv.retries.iter().map(|r| Value::from(*r)).collect())),
                ("restarts", Value::from(pv.restarts)),
                ("rejections", Value::Mapping(rejections)),
            ]),
        ),
    ]);
    serde_yaml::to_string(&doc).expect("scene serializes")
}

/// Write `<stem>.stl` and `<stem>.yaml`; returns both paths.
pub fn export_scene(scene: &Scene, cfg: &ResolvedConfig, out_dir: &Path, index: u64, config_digest: &str) -> Result<(PathBuf, PathBuf)> {
    for (i, o) in scene.objects.iter().enumerate() {
        o.mesh
            .check_watertight()
            .map_err(|m| Error::Integrity(format!("object {i} mesh: {m}")))?;
    }
    let stem = scene_stem(&cfg.prefix, index, scene.last_family(), cfg.name_object_out);
    let stl = out_dir.join(format!("{stem}.stl"));
    let yaml = out_dir.join(format!("{stem}.yaml"));
    util::write_atomic(&stl, &scene.fused_mesh().to_stl_bytes())?;
    util::write_atomic(&yaml, scene_yaml(scene, cfg, index, config_digest).as_bytes())?;
    Ok((stl, yaml))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMeta {
    pub params: ShapeParams,
    pub pose: Pose,
    pub volume: Option<f64>,
}

/// Sidecar contents as read back; scalar values may be numbers or quoted strings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneMeta {
    pub objects: Vec<ObjectMeta>,
    pub sim: BTreeMap<String, String>,
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

impl SceneMeta {
    pub fn sim_f64(&self, key: &str) -> Option<f64> {
        self.sim.get(key).and_then(|s| s.trim().parse().ok())
    }

    pub fn sim_flag(&self, key: &str) -> Option<bool> {
        self.sim.get(key).and_then(|s| match s.trim() {
            "1" | "true" | "True" => Some(true),
            "0" | "false" | "False" => Some(false),
            _ => None,
        })
    }
}

/// `provenance.config_digest` of a scene sidecar, when present.
pub fn config_digest_of(text: &str) -> Option<String> {
    let doc: Value = serde_yaml::from_str(text).ok()?;
    doc.get("provenance")?.get("config_digest")?.as_str().map(str::to_string)
}

pub fn read_scene_yaml(text: &str) -> std::result::Result<SceneMeta, String> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    let mut meta = SceneMeta::default();
    if let Some(Value::Mapping(sim)) = doc.get("simulation_parameters") {
        for (k, v) in sim {
            if let (Some(k), Some(v)) = (k.as_str(), scalar_text(v)) {
                meta.sim.insert(k.to_string(), v);
            }
        }
    }
    let geoms = match doc.get("geometries") {
        Some(Value::Sequence(g)) => g.clone(),
        None => Vec::new(),
        Some(_) => return Err("geometries must be a list".into()),
    };
    for (i, g) in geoms.iter().enumerate() {
        let get = |k: &str| -> Option<f64> { g.get(k).and_then(scalar_text).and_then(|s| s.trim().parse().ok()) };
        let need = |k: &str| get(k).ok_or_else(|| format!("geometries[{i}] lacks numeric '{k}'"));
        let ty = g.get("type").and_then(scalar_text).ok_or_else(|| format!("geometries[{i}] lacks 'type'"))?;
        let family: Family = ty.parse()?;
        let params = match family {
            Family::Cuboid => ShapeParams::Cuboid { height: need("height")?, width: need("width")?, thickness: need("thickness")? },
            Family::Cone => ShapeParams::Cone {
                radius_base: need("radius_1")?,
                radius_top: need("radius_2")?,
                height: need("height")?,
                sweep: get("angle").unwrap_or(360.0),
            },
            Family::Cylinder => ShapeParams::Cylinder { radius: need("radius")?, height: need("height")?, sweep: get("angle").unwrap_or(360.0) },
            Family::Sphere => {
                let sector = match (get("alpha"), get("beta"), get("gamma")) {
                    (None, None, None) => None,
                    (a, b, c) => Some(SphereSector { alpha: a.unwrap_or(-90.0), beta: b.unwrap_or(90.0), gamma: c.unwrap_or(360.0) }),
                };
                ShapeParams::Sphere { radius: need("radius")?, sector }
            }
            Family::Torus => ShapeParams::Torus { major_radius: need("major_radius")?, minor_radius: need("minor_radius")? },
            Family::Wedge => ShapeParams::Wedge {
                length: need("length")?,
                width: need("width")?,
                height: need("height")?,
                opening_angle: get("opening_angle").unwrap_or(90.0),
            },
        };
        let position = V3::new(need("pos_x")?, need("pos_y")?, need("pos_z")?);
        let dir_vector = V3::new(get("dir_vec_x").unwrap_or(0.0), get("dir_vec_y").unwrap_or(0.0), get("dir_vec_z").unwrap_or(1.0));
        let orientation = match g.get("quaternion") {
            Some(Value::Sequence(q)) if q.len() == 4 => {
                let c: Vec<f64> = q.iter().filter_map(scalar_text).filter_map(|s| s.parse().ok()).collect();
                if c.len() != 4 {
                    return Err(format!("geometries[{i}] quaternion is not numeric"));
                }
                UnitQuaternion::new_normalize(Quaternion::new(c[0], c[1], c[2], c[3]))
            }
            _ => UnitQuaternion::identity(),
        };
        meta.objects.push(ObjectMeta { params, pose: Pose { position, orientation, dir_vector }, volume: get("volume") });
    }
    Ok(meta)
}
