use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use flowforge::config::{resolve_str, ResolvedConfig};
use flowforge::orchestrator::{
    load_cases, materialize_all, plan_lanes, submit, verify_case_dir, Backend, MaterializeOptions, Materialized, Status, SubmitOptions,
};
use flowforge::pipeline;

fn cfg(extra: &[&str]) -> ResolvedConfig {
    let items: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    resolve_str("{}", &items).unwrap()
}

/// A stand-in `sbatch` that numbers jobs from 101 and logs its arguments.
fn fake_sbatch(dir: &Path, fail_on: Option<u32>) -> PathBuf {
    let exe = dir.join("sbatch");
    let fail = fail_on.map(|n| format!("[ $n -eq {n} ] && {{ echo refused >&2; exit 1; }}\n")).unwrap_or_default();
    let script = format!(
        "#!/bin/sh\nn=$(cat {s} 2>/dev/null || echo 100)\nn=$((n+1))\necho $n > {s}\n{fail}echo \"$@\" >> {l}\necho \"Submitted batch job $n\"\n",
        s = dir.join("counter").display(),
        l = dir.join("log").display(),
    );
    std::fs::write(&exe, script).unwrap();
    std::fs::set_permissions(&exe, std::fs::Permissions::from_mode(0o755)).unwrap();
    exe
}

fn never(_: &Path) -> flowforge::Result<()> {
    unreachable!("slurm backend does not run cases in-process")
}

fn dataset(t: &Path, n: u64) -> (ResolvedConfig, PathBuf, PathBuf) {
    let c = cfg(&[&format!("repeat={n}"), "seed=21"]);
    let scenes = t.join("scenes");
    pipeline::generate(&c, &scenes, false).unwrap();
    let ds = t.join("dataset");
    materialize_all(&scenes, &ds, &c, &MaterializeOptions::default()).unwrap();
    (c, scenes, ds)
}

#[test]
fn slurm_chains_and_idempotency() {
    let t = tempfile::tempdir().unwrap();
    let (_, _, ds) = dataset(t.path(), 5);
    let sb = fake_sbatch(t.path(), None);
    let plan = plan_lanes(0, 5, 2).unwrap();
    let opts = SubmitOptions { submit_command: sb.display().to_string(), force: false };
    let r = submit(&ds, &plan, Backend::Slurm, &opts, &never).unwrap();
    assert_eq!(r.submissions.len(), 5);
    let log = std::fs::read_to_string(t.path().join("log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    // lane 0 = cases 0,1,2 -> jobs 101..103, lane 1 = cases 3,4 -> 104,105
    assert_eq!(lines, ["job_script.slurm", "--dependency=afterok:101 job_script.slurm", "--dependency=afterok:102 job_script.slurm", "job_script.slurm", "--dependency=afterok:104 job_script.slurm"]);
    let cases = load_cases(&ds).unwrap();
    assert!(cases.iter().all(|m| m.status == Status::Submitted));
    assert_eq!(cases[4].job_id(), Some("105"));
    assert_eq!(cases[3].lane, Some(1));

    let again = submit(&ds, &plan, Backend::Slurm, &opts, &never).unwrap();
    assert!(again.submissions.is_empty());
    let forced = submit(&ds, &plan, Backend::Slurm, &SubmitOptions { force: true, ..opts }, &never).unwrap();
    assert_eq!(forced.submissions.len(), 5);
    assert_eq!(load_cases(&ds).unwrap()[0].job_ids, ["101", "106"]);
}

#[test]
fn slurm_refusal_breaks_only_its_lane() {
    let t = tempfile::tempdir().unwrap();
    let (_, _, ds) = dataset(t.path(), 6);
    // third call is the second case of lane 0
    let sb = fake_sbatch(t.path(), Some(102));
    let plan = plan_lanes(0, 6, 2).unwrap();
    let opts = SubmitOptions { submit_command: sb.display().to_string(), force: false };
    let r = submit(&ds, &plan, Backend::Slurm, &opts, &never).unwrap();
    let cases = load_cases(&ds).unwrap();
    assert_eq!(r.failed, [cases[1].case_id.clone()]);
    assert_eq!(r.skipped, [cases[2].case_id.clone()]);
    assert_eq!(cases[1].status, Status::Failed);
    assert_eq!(cases[2].status, Status::Pending);
    assert!(cases[3..].iter().all(|m| m.status == Status::Submitted));
}

#[test]
fn unparseable_scheduler_output_is_an_error() {
    let t = tempfile::tempdir().unwrap();
    let (_, _, ds) = dataset(t.path(), 2);
    let exe = t.path().join("quiet");
    std::fs::write(&exe, "#!/bin/sh\necho ok\n").unwrap();
    std::fs::set_permissions(&exe, std::fs::Permissions::from_mode(0o755)).unwrap();
    let plan = plan_lanes(0, 2, 1).unwrap();
    let err = submit(&ds, &plan, Backend::Slurm, &SubmitOptions { submit_command: exe.display().to_string(), force: false }, &never).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn case_dirs_are_content_addressed() {
    let t = tempfile::tempdir().unwrap();
    let (c, scenes, ds) = dataset(t.path(), 3);
    let cases = load_cases(&ds).unwrap();
    for m in &cases {
        assert_eq!(verify_case_dir(&ds.join(&m.case_id)).unwrap(), m.case_id);
    }
    let again = materialize_all(&scenes, &ds, &c, &MaterializeOptions::default()).unwrap();
    assert!(again.iter().all(|(_, s)| *s == Materialized::Unchanged));
    // tampering with a copied input is detected
    let dir = ds.join(&cases[0].case_id);
    let stl = dir.join(format!("{}.stl", cases[0].stem));
    let mut bytes = std::fs::read(&stl).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    std::fs::write(&stl, bytes).unwrap();
    assert_eq!(verify_case_dir(&dir).unwrap_err().exit_code(), 2);
    // a different config digest gives different case ids
    let other = cfg(&["repeat=3", "seed=21", "sdf_policy.band=6"]);
    let ds2 = t.path().join("other");
    let made = materialize_all(&scenes, &ds2, &other, &MaterializeOptions::default()).unwrap();
    assert!(made.iter().all(|(m, _)| cases.iter().all(|c| c.case_id != m.case_id)));
}
