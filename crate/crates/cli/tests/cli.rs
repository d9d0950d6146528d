use std::path::Path;

fn forge(args: &[&str]) -> i32 {
    let mut argv = vec!["forge"];
    argv.extend_from_slice(args);
    flowforge_cli::run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_local() {
    let t = tempfile::tempdir().unwrap();
    let scenes = t.path().join("scenes");
    let sdf = t.path().join("sdf");
    let dataset = t.path().join("dataset");
    let report = t.path().join("report");
    let ov = ["repeat=3", "seed=11", "orchestration_policy.lanes=2", "resample_policy.targets=[[15,7,7]]"];
    let with = |head: &[&str]| -> Vec<String> { head.iter().map(|x| x.to_string()).chain(ov.iter().map(|x| x.to_string())).collect() };
    let call = |v: Vec<String>| forge(&v.iter().map(String::as_str).collect::<Vec<_>>());

    assert_eq!(call(with(&["generate", "--out", s(&scenes)])), 0);
    assert_eq!(std::fs::read_dir(&scenes).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "stl")).count(), 3);
    assert_eq!(call(with(&["sdf", "-g", s(&scenes), "-o", s(&sdf), "--dx", "16", "--slice", "z:16"])), 0);
    assert!(std::fs::read_dir(&sdf).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with("_slice_z16.csv")));
    assert_eq!(
        call(with(&["orchestrate", "-g", s(&scenes), "--sdf", s(&sdf), "-d", s(&dataset), "--backend", "local", "sdf_policy.dx=16"])),
        0
    );
    assert_eq!(call(with(&["resample", "-d", s(&dataset), "sdf_policy.dx=16"])), 0);
    assert_eq!(call(with(&["gate", "-d", s(&dataset)])), 0);
    assert!(dataset.join("gate_summary.csv").exists());
    // a drifting mean fails the gate with a validation exit
    let case = std::fs::read_dir(&dataset).unwrap().map(|e| e.unwrap().path()).find(|p| p.join("means").is_dir()).unwrap();
    let w = case.join("means").join("window_001.npy");
    let a = flowforge::npy::read(&w).unwrap();
    let v: Vec<f32> = a.to_f32().unwrap().iter().map(|x| 1.5 * x + 0.01).collect();
    flowforge::npy::write_f32(&w, &a.shape, &v).unwrap();
    assert_eq!(call(with(&["gate", "--case", s(&case)])), 1);
    assert_eq!(call(with(&["report", "-s", s(&scenes), "-o", s(&report)])), 0);
    assert!(report.join("summary.csv").exists());
    assert!(report.join("provenance.json").exists());
}

#[test]
fn dry_run_writes_plan() {
    let t = tempfile::tempdir().unwrap();
    let scenes = t.path().join("scenes");
    let dataset = t.path().join("dataset");
    assert_eq!(forge(&["generate", "-o", s(&scenes), "repeat=4", "seed=2"]), 0);
    assert_eq!(forge(&["orchestrate", "-g", s(&scenes), "--sdf", s(&t.path().join("none")), "-d", s(&dataset), "--dry-run", "repeat=4", "orchestration_policy.lanes=2"]), 0);
    let plan = std::fs::read_to_string(dataset.join("submit_plan.sh")).unwrap();
    assert_eq!(plan.lines().filter(|l| l.starts_with("JOB_")).count(), 4);
    assert_eq!(plan.matches("--dependency=afterok:").count(), 2);
}

#[test]
fn validate_and_errors() {
    assert_eq!(forge(&["validate"]), 0);
    assert_eq!(forge(&["validate", "repeat=-1"]), 1);
    assert_eq!(forge(&["validate", "no_such_key=1"]), 1);
    assert_eq!(forge(&["validate", "-c", "/nonexistent/base.yaml"]), 2);
    assert_eq!(forge(&["bogus"]), 1);
    assert_eq!(forge(&["--help"]), 0);
}

#[test]
fn resample_csv_source() {
    let t = tempfile::tempdir().unwrap();
    let csv = t.path().join("pts.csv");
    let mut text = String::from("x,y,z,f\n");
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..5 {
                let (x, y, z) = (i as f64 * 2.0, j as f64, k as f64);
                text += &format!("{x},{y},{z},{}\n", 3.0 * x - y + 0.5 * z);
            }
        }
    }
    std::fs::write(&csv, text).unwrap();
    let ini = t.path().join("job.ini");
    std::fs::write(
        &ini,
        "[reader]\ncasefile_name = pts.csv\n[interpolation]\nkernel = Linear_Kernel\n[Linear_Kernel]\nkernel_footprint = N Closest\nnum_neighbours = 8\n\
         [gridsize]\nnum_cells_x = 4\nnum_cells_y = 2\nnum_cells_z = 2\norigin_x = 0\norigin_y = 0\norigin_z = 0\nscale_x = 8\nscale_y = 4\nscale_z = 4\n\
         [output]\nnum_fields = 1\nfield_1 = f\noutput_npy = 1\nglobal_output_path = .\nindex = 0\n",
    )
    .unwrap();
    let out = t.path().join("out");
    assert_eq!(forge(&["resample", "--source", s(&csv), "--ini", s(&ini), "-o", s(&out)]), 0);
    assert!(out.join("provenance.json").exists());
    assert_eq!(forge(&["resample", "-o", s(&out)]), 1);
}
