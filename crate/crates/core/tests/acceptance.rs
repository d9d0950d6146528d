//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowforge::config::{resolve_str, ResolvedConfig};
use flowforge::diagnostics::{divergence_metrics, flux_balance, smagorinsky_nut, stationarity_eps};
use flowforge::geometry::sample::draw_dimension;
use flowforge::geometry::scene::{build_scene, export_scene};
use flowforge::geometry::{Family, PlacedShape, Pose, Resolution, ShapeParams};
use flowforge::geometry::tessellate::tessellate;
use flowforge::orchestrator::{
    load_cases, materialize_all, plan_lanes, submit, Backend, MaterializeOptions, Status, SubmitOptions,
};
use flowforge::pipeline::{self, OrchestrateOptions};
use flowforge::resample::{interpolate, interpolate_brute, interpolate_values, make_target_grid, tensor_bytes, Footprint, KdTree, KernelKind, KernelSpec, SourcePoints};
use flowforge::sampling::{sobol, GeneratorState, SamplingMode};
use flowforge::sdf::{voxelize, DenseField, GridSpec};
use flowforge::{simparams, util, Error};
use nalgebra::Vector3;

type V3 = Vector3<f64>;
type Outcome = Result<String, String>;

fn cfg(overrides: &[&str]) -> ResolvedConfig {
    let items: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    resolve_str("{}", &items).expect("config")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn c01_grid_presets() -> Outcome {
    let b = ResolvedConfig::default().bounding_box;
    for (dx, dims) in [(16, [128, 32, 32]), (8, [256, 64, 64]), (4, [512, 128, 128])] {
        let g = GridSpec::preset(dx, &b, [1.0, 1.0]).map_err(e2s)?;
        ensure(g.dims == dims, || format!("dx={dx}: {:?}", g.dims))?;
        ensure(g.spacing == [dx as f64; 3], || format!("dx={dx}: spacing {:?}", g.spacing))?;
    }
    Ok("16/8/4 -> 128x32x32 / 256x64x64 / 512x128x128".into())
}

struct SphereCase {
    grid: GridSpec,
    phi: DenseField,
    centre: V3,
    radius: f64,
    band: f64,
    seconds: f64,
}

fn sphere_case() -> Result<SphereCase, String> {
    let c = ResolvedConfig::default();
    let grid = GridSpec::preset(4, &c.bounding_box, [1.0, 1.0]).map_err(e2s)?;
    let centre = V3::new(1024.0, 256.0, 256.0);
    let radius = 64.0;
    let mesh = tessellate(&ShapeParams::Sphere { radius, sector: None }, &Pose::at(centre), Resolution::Fixed(128)).map_err(e2s)?;
    let t = Instant::now();
    let phi = voxelize(&mesh, &grid, c.sdf_policy.band).map_err(e2s)?;
    let seconds = t.elapsed().as_secs_f64();
    Ok(SphereCase { band: c.sdf_policy.band as f64 * grid.dx(), grid, phi, centre, radius, seconds })
}

fn c02_sdf_fidelity(s: &SphereCase) -> Outcome {
    let [nx, ny, nz] = s.grid.dims;
    // UV-sphere facets sit at most r (1 - cos^2(pi/n)) inside the true surface
    let chord = s.radius * (1.0 - (std::f64::consts::PI / 128.0).cos().powi(2));
    let (mut max_err, mut unclamped, mut sign_checked, mut sign_bad) = (0f64, 0usize, 0usize, 0usize);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let exact = (s.grid.position(i, j, k) - s.centre).norm() - s.radius;
                let v = s.phi.at(i, j, k) as f64;
                if v.abs() < s.band {
                    unclamped += 1;
                    max_err = max_err.max((v - exact).abs());
                }
                if exact.abs() > chord {
                    sign_checked += 1;
                    sign_bad += (v.signum() != exact.signum()) as usize;
                }
            }
        }
    }
    ensure(unclamped > 0, || "no unclamped samples".into())?;
    ensure(max_err <= 0.5, || format!("max |phi - analytic| = {max_err:.4} > 0.5"))?;
    ensure(sign_bad == 0, || format!("{sign_bad}/{sign_checked} sign mismatches"))?;
    ensure(s.seconds < 60.0, || format!("voxelization took {:.1} s", s.seconds))?;
    Ok(format!(
        "max err {max_err:.4} lu over {unclamped} unclamped samples, signs {sign_checked}/{sign_checked}, {:.2} s on 512x128x128",
        s.seconds
    ))
}

fn c03_eikonal(s: &SphereCase) -> Outcome {
    let [nx, ny, nz] = s.grid.dims;
    let h = s.grid.dx();
    let (mut lo, mut hi, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            for k in 1..nz - 1 {
                let v = s.phi.at(i, j, k) as f64;
                let r = (s.grid.position(i, j, k) - s.centre).norm();
                // keep the stencil off the surface kink, the centre and the clamp
                if v.abs() < 2.0 * h || v.abs() > s.band - 2.0 * h || r < 2.0 * h {
                    continue;
                }
                let d = |a: f32, b: f32| (a - b) as f64 / (2.0 * h);
                let g = V3::new(
                    d(s.phi.at(i + 1, j, k), s.phi.at(i - 1, j, k)),
                    d(s.phi.at(i, j + 1, k), s.phi.at(i, j - 1, k)),
                    d(s.phi.at(i, j, k + 1), s.phi.at(i, j, k - 1)),
                )
                .norm();
                lo = lo.min(g);
                hi = hi.max(g);
                n += 1;
            }
        }
    }
    ensure(n > 0, || "no samples in the test band".into())?;
    ensure(lo >= 0.9 && hi <= 1.1, || format!("|grad phi| in [{lo:.4}, {hi:.4}] over {n} samples"))?;
    Ok(format!("|grad phi| in [{lo:.4}, {hi:.4}] over {n} samples"))
}

fn c04_storage() -> Outcome {
    let want = [([128, 32, 32], 1_572_864), ([256, 64, 64], 12_582_912), ([512, 128, 128], 100_663_296)];
    for (dims, bytes) in want {
        let got = tensor_bytes(dims, 3);
        ensure(got == bytes, || format!("{dims:?}: {got} != {bytes}"))?;
    }
    Ok("1572864 / 12582912 / 100663296 bytes".into())
}

fn c05_interpolator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let positions: Vec<V3> = (0..n).map(|_| V3::new(rng.gen::<f64>() * 40.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0)).collect();
    let values: Vec<f64> = (0..n * 2).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let src = SourcePoints::new(positions.clone(), 2, values).map_err(e2s)?;
    let constant = SourcePoints::new(positions, 1, vec![0.3; n]).map_err(e2s)?;
    let tree = KdTree::build(&src.positions)?;
    let target = make_target_grid([0.0; 3], [40.0, 10.0, 10.0], [19, 4, 4]).map_err(e2s)?;
    let mut worst = 0f64;
    let mut combos = 0;
    for kind in [KernelKind::Linear, KernelKind::Gaussian, KernelKind::Shepard, KernelKind::Voronoi, KernelKind::EllipsoidalGaussian] {
        let spec = KernelSpec::of(kind);
        for fp in [Footprint::NClosest(12), Footprint::Radius(2.5)] {
            let (fast, _) = interpolate_values(&src, &tree, &target, &spec, fp).map_err(e2s)?;
            let slow = interpolate_brute(&src, &target, &spec, fp);
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
            let c = interpolate(&constant, &tree, &target, &spec, fp).map_err(e2s)?;
            let off = c.field.values.iter().filter(|v| **v != 0.3f32).count();
            ensure(off == 0, || format!("{kind:?}/{fp:?}: {off} nodes do not reproduce the constant"))?;
            let brute_off = interpolate_brute(&constant, &target, &spec, fp).iter().filter(|v| **v != 0.3).count();
            ensure(brute_off == 0, || format!("{kind:?}/{fp:?}: oracle misses the constant at {brute_off} nodes"))?;
            combos += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("max |fast - brute| = {worst:e}"))?;
    Ok(format!("{combos} kernel/footprint pairs on {n} points, max diff {worst:e}, constants exact"))
}

/// Gray-code Sobol from the recurrence, for the first two dimensions.
fn sobol_reference(count: usize) -> Vec<[f64; 2]> {
    let mut v = [[0u32; 32]; 2];
    for b in 0..32 {
        v[0][b] = 1 << (31 - b);
    }
    // primitive polynomial x + 1 (s = 1, a = 0, m1 = 1)
    v[1][0] = 1 << 31;
    for b in 1..32 {
        v[1][b] = v[1][b - 1] ^ (v[1][b - 1] >> 1);
    }
    let mut x = [0u32; 2];
    let mut out = vec![[0.0; 2]];
    for i in 1..count {
        let c = (i as u32).trailing_zeros() as usize;
        for d in 0..2 {
            x[d] ^= v[d][c];
        }
        out.push([x[0] as f64 / 4294967296.0, x[1] as f64 / 4294967296.0]);
    }
    out.truncate(count);
    out
}

fn stream_bits(points: &[Vec<f64>]) -> Vec<u64> {
    points.iter().flatten().map(|x| x.to_bits()).collect()
}

fn c06_sobol() -> Outcome {
    let reference = sobol_reference(8);
    let first: Vec<f64> = (0..8).map(|i| sobol::point_at(i, 1).map(|p| p[0])).collect::<Result<_, _>>().map_err(e2s)?;
    ensure(first == [0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125], || format!("1-D: {first:?}"))?;
    for (i, r) in reference.iter().enumerate() {
        let p = sobol::point_at(i as u64, 2).map_err(e2s)?;
        ensure(p[0] == r[0] && p[1] == r[1], || format!("index {i}: {p:?} vs {r:?}"))?;
    }

    let d = 17;
    let fresh = || {
        let mut s = GeneratorState::new(SamplingMode::Sobol, 0);
        s.freeze_dimension(d, 3).unwrap();
        s
    };
    let total = 64;
    let mut s = fresh();
    let full: Vec<Vec<f64>> = (0..total).map(|_| s.next_point().unwrap()).collect();
    for cut in 0..total {
        let mut a = fresh();
        let mut got: Vec<Vec<f64>> = (0..cut).map(|_| a.next_point().unwrap()).collect();
        let mut b = GeneratorState::from_text(&a.to_text())?;
        got.extend((cut..total).map(|_| b.next_point().unwrap()));
        ensure(stream_bits(&got) == stream_bits(&full), || format!("resume at {cut} diverges"))?;
    }

    // rejections: the accepted draws are an order-preserving subsequence of the stream
    let mut s = fresh();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut accepted = Vec::new();
    while s.index < total as u64 + 3 {
        if rng.gen_bool(0.3) {
            s.advance_on_reject();
        } else {
            let ord = s.index - 3;
            accepted.push((ord, s.next_point().unwrap()));
        }
    }
    let mut last = None;
    for (ord, p) in &accepted {
        ensure(stream_bits(std::slice::from_ref(p)) == stream_bits(&full[*ord as usize..*ord as usize + 1]), || format!("ordinal {ord} mismatch"))?;
        ensure(last.map_or(true, |l| *ord > l), || "rejection reordered the stream".into())?;
        last = Some(*ord);
    }

    // resumed scene generation reproduces the uninterrupted artifact tree
    let t = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    pipeline::generate(&cfg(&["repeat=6", "seed=4"]), &a, false).map_err(e2s)?;
    // stop after two scenes the way an interrupted run leaves its directory
    let c6 = cfg(&["repeat=6", "seed=4"]);
    let digest = flowforge::config::config_hash(&c6);
    let mut st = GeneratorState::new(c6.sampling_mode(), c6.seed);
    st.freeze_dimension(draw_dimension(&c6), c6.initial_test_repeat()).map_err(e2s)?;
    for i in 0..2 {
        let scene = build_scene(&c6, &mut st).map_err(e2s)?;
        export_scene(&scene, &c6, &b, i, &digest).map_err(e2s)?;
    }
    st.save(&b).map_err(e2s)?;
    pipeline::generate(&c6, &b, true).map_err(e2s)?;
    let diff = compare_trees(&a, &b, &["stl", "yaml"])?;
    ensure(diff.is_empty(), || format!("resumed scenes differ: {diff:?}"))?;
    Ok(format!("reference points match, resume identical at all {total} cut points, {} accepted draws in order", accepted.len()))
}

fn lattice_points(s: &PlacedShape, h: f64) -> Vec<V3> {
    let (lo, hi) = s.mesh.aabb();
    let idx = |x: f64| (x / h).floor() as i64;
    let mut out = Vec::new();
    for i in idx(lo.x)..=idx(hi.x) + 1 {
        for j in idx(lo.y)..=idx(hi.y) + 1 {
            for k in idx(lo.z)..=idx(hi.z) + 1 {
                let p = V3::new(i as f64 * h, j as f64 * h, k as f64 * h);
                if s.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn c07_feasibility() -> Outcome {
    let c = cfg(&["number_of_objects=2", "seed=7"]);
    let mut state = GeneratorState::new(c.sampling_mode(), c.seed);
    state.freeze_dimension(draw_dimension(&c), c.initial_test_repeat()).map_err(e2s)?;
    let cmin = c.c_min();
    let h = cmin / 4.0;
    let (b, p) = (&c.bounding_box, &c.pose);
    let mut violations: BTreeMap<&str, usize> = BTreeMap::new();
    let mut points = 0usize;
    let scenes = 200;
    for _ in 0..scenes {
        let scene = build_scene(&c, &mut state).map_err(e2s)?;
        let clouds: Vec<Vec<V3>> = scene.objects.iter().map(|o| lattice_points(o, h)).collect();
        points += clouds.iter().map(Vec::len).sum::<usize>();
        for (o, cloud) in scene.objects.iter().zip(&clouds) {
            let q = o.pose.position;
            if !(q.x >= p.x_min && q.x <= p.x_max && q.y >= p.y_min && q.y <= p.y_max && q.z >= p.z_min && q.z <= p.z_max) {
                *violations.entry("roi").or_default() += 1;
            }
            let outside = |v: &V3| v.x < b.x_min || v.x > b.x_max || v.y < b.y_min || v.y > b.y_max || v.z < b.z_min || v.z > b.z_max;
            if cloud.iter().chain(&o.mesh.vertices).any(outside) {
                *violations.entry("in_bounds").or_default() += 1;
            }
            let analytic = o.params.analytic_volume();
            let mesh = o.mesh.signed_volume();
            if analytic < c.min_volume || mesh < 0.98 * analytic {
                *violations.entry("min_volume").or_default() += 1;
            }
        }
        for a in 0..scene.objects.len() {
            for bi in a + 1..scene.objects.len() {
                if clouds[a].iter().any(|v| scene.objects[bi].contains(v)) || clouds[bi].iter().any(|v| scene.objects[a].contains(v)) {
                    *violations.entry("intersection").or_default() += 1;
                }
                // interior points are never closer than the solids themselves
                if !clouds[bi].is_empty() {
                    let tree = KdTree::build(&clouds[bi])?;
                    if clouds[a].iter().any(|v| tree.knn(v, 1)[0].dist2.sqrt() < cmin - 1e-9) {
                        *violations.entry("clearance").or_default() += 1;
                    }
                }
            }
        }
    }
    ensure(violations.is_empty(), || format!("violations {violations:?}"))?;
    Ok(format!("{scenes} two-object scenes, {points} interior samples at h = {h}, zero violations"))
}

fn c08_shape_mix() -> Outcome {
    let c = cfg(&[
        "use_sobol=false",
        "seed=8",
        "min_volume=0.001",
        "geometries.cuboid.height=[10,40]",
        "geometries.cuboid.width=[10,40]",
        "geometries.cuboid.thickness=[10,40]",
        "geometries.cone.radius_base=[10,40]",
        "geometries.cone.radius_top=[0,40]",
        "geometries.cone.height=[10,40]",
        "geometries.cylinder.radius=[10,40]",
        "geometries.cylinder.height=[10,40]",
        "geometries.sphere.radius=[10,40]",
        "geometries.torus.major_radius=[20,40]",
        "geometries.torus.minor_radius=[5,10]",
        "geometries.wedge.length=[10,40]",
        "geometries.wedge.width=[30,40]",
        "geometries.wedge.height=[10,40]",
        "pose.x_min=900",
        "pose.x_max=1100",
        "pose.y_min=200",
        "pose.y_max=300",
        "pose.z_min=200",
        "pose.z_max=300",
    ]);
    let mut state = GeneratorState::new(c.sampling_mode(), c.seed);
    state.freeze_dimension(draw_dimension(&c), c.initial_test_repeat()).map_err(e2s)?;
    let draws = 10_000;
    let mut counts: BTreeMap<Family, usize> = BTreeMap::new();
    let mut rejected = 0u32;
    for _ in 0..draws {
        let s = build_scene(&c, &mut state).map_err(e2s)?;
        rejected += s.provenance.rejections.iter().filter(|(k, _)| k.as_str() != "sim_params").map(|(_, v)| *v).sum::<u32>();
        *counts.entry(s.last_family().unwrap()).or_default() += 1;
    }
    ensure(rejected == 0, || format!("{rejected} geometric rejections; the relaxed setup is not always feasible"))?;
    let weights = c.family_weights();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let mut worst = 0f64;
    for (f, w) in &weights {
        let p = w / total;
        let expect = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let got = counts.get(f).copied().unwrap_or(0) as f64;
        let z = (got - expect).abs() / sigma;
        worst = worst.max(z);
        ensure(z <= 3.0, || format!("{}: {got} vs {expect:.1} ({z:.2} sigma)", f.name()))?;
    }
    Ok(format!(
        "{draws} draws, torus {} / cuboid {}, worst deviation {worst:.2} sigma",
        counts.get(&Family::Torus).unwrap_or(&0),
        counts.get(&Family::Cuboid).unwrap_or(&0)
    ))
}

fn c09_solver_policy() -> Outcome {
    let mut worst = 0f64;
    for nu in [1e-5, 3.2e-3, 0.0125, 0.1, 0.5, 1.7] {
        let back = simparams::nu_from_tau(simparams::tau_from_nu(nu).map_err(e2s)?).map_err(e2s)?;
        worst = worst.max((back - nu).abs());
    }
    ensure(worst <= 1e-12, || format!("nu/tau round trip error {worst:e}"))?;
    let mut re_worst = 0f64;
    for (re, u, l) in [(100.0, 0.05, 64.0), (15000.0, 0.08, 128.0), (2500.0, 0.03, 30.0), (731.0, 0.0618, 97.3)] {
        let (nu0, _) = simparams::target_reynolds(re, u, l).map_err(e2s)?;
        let got = simparams::achieved_reynolds(u, l, nu0);
        re_worst = re_worst.max((got - re).abs() / re);
    }
    ensure(re_worst <= 1e-12, || format!("target Re missed by {re_worst:e} (relative)"))?;
    let strict = simparams::mach_check(0.1488, 0.12, 0.12);
    let loose = simparams::mach_check(0.1488, 0.20, 0.20);
    ensure(!strict.inlet_ok && !loose.inlet_ok && !loose.global_ok, || format!("Ma = {:.4} not flagged", strict.mach))?;
    Ok(format!("round trip {worst:e}, Re rel err {re_worst:e}, |u| = 0.1488 -> Ma = {:.4} violates 0.12 and 0.20", strict.mach))
}

fn c10_orchestration() -> Outcome {
    let plan = plan_lanes(0, 10, 3).map_err(e2s)?;
    let sizes: Vec<usize> = plan.lanes.iter().map(Vec::len).collect();
    ensure(sizes == [4, 3, 3], || format!("lane sizes {sizes:?}"))?;
    ensure(plan.edges().len() == 7, || format!("{} edges", plan.edges().len()))?;

    let t = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = cfg(&["repeat=10", "seed=10", "orchestration_policy.lanes=3"]);
    let scenes = t.path().join("scenes");
    pipeline::generate(&c, &scenes, false).map_err(e2s)?;
    let opts = MaterializeOptions::default();
    let ok = |_: &Path| -> flowforge::Result<()> { Ok(()) };

    let dry = t.path().join("dry");
    materialize_all(&scenes, &dry, &c, &opts).map_err(e2s)?;
    let r = submit(&dry, &plan, Backend::DryRun, &SubmitOptions::default(), &ok).map_err(e2s)?;
    ensure(r.submissions.len() == 10, || format!("dry run: {} submissions", r.submissions.len()))?;
    let chained = r.script.matches("--dependency=afterok:").count();
    ensure(chained == 7, || format!("dry run: {chained} dependent submissions"))?;

    let local = t.path().join("local");
    materialize_all(&scenes, &local, &c, &opts).map_err(e2s)?;
    let ids: Vec<String> = load_cases(&local).map_err(e2s)?.iter().map(|m| m.case_id.clone()).collect();
    let bad = ids[plan.lanes[1][0] as usize].clone();
    let failing = |dir: &Path| -> flowforge::Result<()> {
        if dir.ends_with(&bad) {
            Err(Error::Stage { stage: "solver", source: Box::new(Error::Invalid("injected".into())) })
        } else {
            Ok(())
        }
    };
    let r = submit(&local, &plan, Backend::Local, &SubmitOptions::default(), &failing).map_err(e2s)?;
    let lane2: Vec<String> = plan.lanes[1][1..].iter().map(|c| ids[*c as usize].clone()).collect();
    ensure(r.failed == [bad.clone()], || format!("failed {:?}", r.failed))?;
    ensure(r.skipped == lane2, || format!("skipped {:?}", r.skipped))?;
    ensure(r.completed.len() == 7, || format!("{} completed", r.completed.len()))?;
    let after = load_cases(&local).map_err(e2s)?;
    let pending = after.iter().filter(|m| m.status != Status::Completed).count();
    ensure(pending == 3, || format!("{pending} cases left incomplete"))?;
    // retry picks up exactly the broken lane, then everything is done
    let r = submit(&local, &plan, Backend::Local, &SubmitOptions::default(), &ok).map_err(e2s)?;
    ensure(r.submissions.len() == 3, || format!("retry submitted {}", r.submissions.len()))?;
    let r = submit(&local, &plan, Backend::Local, &SubmitOptions::default(), &ok).map_err(e2s)?;
    ensure(r.submissions.is_empty(), || format!("rerun submitted {}", r.submissions.len()))?;
    let again = materialize_all(&scenes, &local, &c, &opts).map_err(e2s)?;
    ensure(again.iter().all(|(m, _)| m.status == Status::Completed), || "re-materialize reset a completed case".into())?;
    Ok("lanes [4,3,3], 7 edges, 10 dry-run submissions, lane-2 failure skips 2 successors only, rerun submits 0".into())
}

fn shear_field(n: [usize; 3], f: impl Fn(&V3) -> [f64; 3], h: f64) -> DenseField {
    let grid = GridSpec { origin: [0.0; 3], spacing: [h; 3], aniso: [1.0, 1.0], dims: n };
    let len = grid.len();
    let mut values = vec![0f32; 3 * len];
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let o = grid.offset(i, j, k);
                let u = f(&grid.position(i, j, k));
                for c in 0..3 {
                    values[c * len + o] = u[c] as f32;
                }
            }
        }
    }
    DenseField { grid, components: 3, values }
}

fn c11_diagnostics() -> Outcome {
    let base = shear_field([12, 6, 5], |p| [0.05 + 0.001 * p.y, 0.002 * p.z.sin(), -0.001], 1.0);
    let doubled = DenseField { values: base.values.iter().map(|v| 2.0 * v).collect(), ..base.clone() };
    let same = stationarity_eps(&base, &base, 1e-12).map_err(e2s)?;
    let half = stationarity_eps(&doubled, &base, 1e-12).map_err(e2s)?;
    ensure(same == 0.0, || format!("eps_u(equal) = {same:e}"))?;
    ensure((half - 0.5).abs() <= 1e-9, || format!("eps_u(doubled) = {half}"))?;

    let n = [10, 4, 4];
    let mut outlet = shear_field(n, |_| [0.05, 0.0, 0.0], 1.0);
    let len = outlet.grid.len();
    for j in 0..4 {
        for k in 0..4 {
            let o = outlet.grid.offset(9, j, k);
            outlet.values[o] = 0.045;
        }
    }
    let _ = len;
    let dphi = flux_balance(&outlet, 0, 9, None).map_err(e2s)?;
    ensure((dphi - 0.1).abs() <= 1e-6, || format!("delta_phi = {dphi}"))?;

    // divergence-free analytic field; the discrete divergence is pure truncation error
    let mut errs = Vec::new();
    for m in [16usize, 32, 64] {
        let h = std::f64::consts::PI / m as f64;
        let u = shear_field([m + 1, m / 4 + 1, m / 8 + 1], |p| [p.x.sin(), -p.y * p.x.cos(), 0.0], h);
        errs.push(divergence_metrics(&u, None).map_err(e2s)?.eps2);
    }
    let rates: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(rates.iter().all(|r| (1.8..=2.2).contains(r)), || format!("rates {rates:?} (eps2 {errs:?})"))?;

    let gamma = 0.01;
    let shear = shear_field([6, 6, 6], |p| [gamma * p.z, 0.0, 0.0], 1.0);
    let nut = smagorinsky_nut(&shear, 0.16, 1.0, None).map_err(e2s)?;
    let worst = nut.iter().map(|v| (v - 2.56e-4).abs()).fold(0f64, f64::max);
    ensure(worst <= 1e-9, || format!("nu_t off by {worst:e}"))?;
    Ok(format!("eps_u 0 / {half:.6}, delta_phi {dphi:.6}, divergence rates {:.3} {:.3}, nu_t 2.56e-4 (err {worst:.1e})", rates[0], rates[1]))
}

fn files_with(dir: &Path, exts: &[&str]) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| format!("{}: {e}", d.display()))? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| exts.iter().any(|e| x == *e)) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn compare_trees(a: &Path, b: &Path, exts: &[&str]) -> Result<Vec<String>, String> {
    let (fa, fb) = (files_with(a, exts)?, files_with(b, exts)?);
    let mut diff = Vec::new();
    for k in fa.keys().chain(fb.keys()) {
        if fa.get(k) != fb.get(k) && !diff.contains(&k.display().to_string()) {
            diff.push(k.display().to_string());
        }
    }
    if fa.is_empty() {
        diff.push("no files".into());
    }
    Ok(diff)
}

fn full_run(c: &ResolvedConfig, root: &Path) -> flowforge::Result<()> {
    let (scenes, sdf, dataset, report) = (root.join("scenes"), root.join("sdf"), root.join("dataset"), root.join("report"));
    pipeline::generate(c, &scenes, false)?;
    pipeline::sdf_stage(c, &scenes, &sdf, None)?;
    let opts = OrchestrateOptions {
        backend: Backend::Local,
        force: false,
        materialize: MaterializeOptions { sdf_dir: Some(sdf), ..Default::default() },
        submit_command: None,
    };
    pipeline::orchestrate(c, &scenes, &dataset, &opts)?;
    pipeline::resample_dataset(c, &dataset)?;
    pipeline::gate_dataset(c, &dataset)?;
    pipeline::report(c, &scenes, &report)?;
    Ok(())
}

fn c12_determinism() -> Outcome {
    let t = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = cfg(&["repeat=20", "seed=12", "number_of_objects=2", "sdf_policy.dx=16"]);
    // same absolute location both times, so embedded paths agree
    let run = t.path().join("run");
    let first = t.path().join("first");
    let t0 = Instant::now();
    full_run(&c, &run).map_err(e2s)?;
    std::fs::rename(&run, &first).map_err(|e| e.to_string())?;
    full_run(&c, &run).map_err(e2s)?;
    let secs = t0.elapsed().as_secs_f64();
    let exts = ["stl", "yaml", "npy", "csv"];
    let diff = compare_trees(&first, &run, &exts)?;
    ensure(diff.is_empty(), || format!("{} differing files, e.g. {:?}", diff.len(), &diff[..diff.len().min(5)]))?;
    let n = files_with(&run, &exts)?.len();
    ensure(secs < 300.0, || format!("two runs took {secs:.1} s"))?;
    Ok(format!("{n} STL/YAML/NPY/CSV files byte-identical across two 20-scene runs ({secs:.1} s total)"))
}

fn c13_coverage() -> Outcome {
    let t = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = cfg(&["repeat=60", "seed=13", "number_of_objects=2"]);
    let scenes = t.path().join("scenes");
    pipeline::generate(&c, &scenes, false).map_err(e2s)?;
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let ra = pipeline::report(&c, &scenes, &a).map_err(e2s)?;
    pipeline::report(&c, &scenes, &b).map_err(e2s)?;
    ensure(ra.scenes.len() == 60, || format!("{} scenes read", ra.scenes.len()))?;
    let v = ra.violations(&pipeline::report_options(&c));
    ensure(v.is_empty(), || format!("{} violations: {:?}", v.len(), &v[..v.len().min(3)]))?;
    for s in &ra.scenes {
        ensure(s.inlet[0] > 0.0, || format!("{}: u_x = {}", s.stem, s.inlet[0]))?;
        ensure(s.centroids.iter().all(|p| (146.0..=1800.0).contains(&p[0])), || format!("{}: centroid out of range", s.stem))?;
        ensure((100.0..=15000.0).contains(&s.re), || format!("{}: Re = {}", s.stem, s.re))?;
    }
    let diff = compare_trees(&a, &b, &["csv"])?;
    ensure(diff.is_empty(), || format!("report CSVs differ: {diff:?}"))?;
    Ok(format!("60 scenes within policy, {} CSV tables regenerate identically", files_with(&a, &["csv"])?.len()))
}

fn main() {
    // SDF timing is a single-thread figure; run everything on one worker
    util::set_threads(1).expect("thread pool");
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let s = t.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("[{tag}] {id:02} {name}: {detail} ({s:.2} s)");
        results.push((id, name, r, s));
    };
    record(1, "grid presets", &c01_grid_presets);
    let sphere = sphere_case();
    match &sphere {
        Ok(s) => {
            record(2, "sdf fidelity", &|| c02_sdf_fidelity(s));
            record(3, "eikonal bracket", &|| c03_eikonal(s));
        }
        Err(e) => {
            let e = e.clone();
            record(2, "sdf fidelity", &|| Err(e.clone()));
            record(3, "eikonal bracket", &|| Err(e.clone()));
        }
    }
    record(4, "storage arithmetic", &c04_storage);
    record(5, "interpolator oracle", &c05_interpolator);
    record(6, "sobol correctness", &c06_sobol);
    record(7, "feasibility soundness", &c07_feasibility);
    record(8, "shape-mix statistics", &c08_shape_mix);
    record(9, "solver-policy algebra", &c09_solver_policy);
    record(10, "orchestration", &c10_orchestration);
    record(11, "diagnostics", &c11_diagnostics);
    record(12, "end-to-end determinism", &c12_determinism);
    record(13, "coverage reports", &c13_coverage);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
