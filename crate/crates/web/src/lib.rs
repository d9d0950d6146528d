//! Browser bindings: scene sampling, SDF slices and lattice parameters.

use wasm_bindgen::prelude::*;

use flowforge::config::{config_hash, resolve_str, ResolvedConfig};
use flowforge::geometry::sample::{check_ranges, draw_dimension};
use flowforge::geometry::scene::{build_scene, scene_yaml, Scene};
use flowforge::sampling::GeneratorState;
use flowforge::sdf::{voxelize, GridSpec};
use flowforge::simparams;

fn js(e: flowforge::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn config(overrides: &str) -> Result<ResolvedConfig, flowforge::Error> {
    let items: Vec<String> = overrides.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect();
    resolve_str("{}", &items)
}

fn scene_at(cfg: &ResolvedConfig, index: u32) -> Result<Scene, flowforge::Error> {
    check_ranges(cfg)?;
    let mut state = GeneratorState::new(cfg.sampling_mode(), cfg.seed);
    state.freeze_dimension(draw_dimension(cfg), cfg.initial_test_repeat())?;
    let mut scene = build_scene(cfg, &mut state)?;
    for _ in 0..index {
        scene = build_scene(cfg, &mut state)?;
    }
    Ok(scene)
}

/// Scene `index` of the stream defined by `overrides` (one `key=value` per line), as YAML.
#[wasm_bindgen]
pub fn generate_scene(overrides: &str, index: u32) -> Result<String, JsValue> {
    let cfg = config(overrides).map_err(js)?;
    let scene = scene_at(&cfg, index).map_err(js)?;
    Ok(scene_yaml(&scene, &cfg, index as u64, &config_hash(&cfg)))
}

#[wasm_bindgen]
pub struct SdfSlice {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

#[wasm_bindgen]
impl SdfSlice {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major, `height` rows of `width` values.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }
}

/// Signed distance of scene `index` on the plane `z = layer` (node index), grid spacing `dx`.
#[wasm_bindgen]
pub fn sdf_slice(overrides: &str, index: u32, dx: u32, layer: usize) -> Result<SdfSlice, JsValue> {
    let cfg = config(overrides).map_err(js)?;
    let scene = scene_at(&cfg, index).map_err(js)?;
    let grid = GridSpec::preset(dx, &cfg.bounding_box, cfg.sdf_policy.aniso).map_err(js)?;
    let [nx, ny, nz] = grid.dims;
    if layer >= nz {
        return Err(JsValue::from_str(&format!("layer {layer} outside 0..{nz}")));
    }
    let field = voxelize(&scene.fused_mesh(), &grid, cfg.sdf_policy.band).map_err(js)?;
    let mut values = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            values.push(field.at(i, j, layer));
        }
    }
    Ok(SdfSlice { width: nx, height: ny, values })
}

/// `[nu0, tau, omega, mach]` for a target Reynolds number, bulk speed and length (lattice units).
#[wasm_bindgen]
pub fn lattice_params(re: f64, u: f64, l: f64) -> Result<Vec<f64>, JsValue> {
    let (nu0, tau) = simparams::target_reynolds(re, u, l).map_err(js)?;
    let m = simparams::mach_check(u, 0.1, 0.3);
    Ok(vec![nu0, tau, simparams::omega(tau), m.mach])
}
