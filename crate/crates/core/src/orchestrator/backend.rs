use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::{load_cases, write_index, CaseManifest, LanePlan, Status, JOB_SCRIPT};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Slurm,
    Local,
    DryRun,
}

impl From<crate::config::BackendKind> for Backend {
    fn from(b: crate::config::BackendKind) -> Self {
        match b {
            crate::config::BackendKind::Slurm => Backend::Slurm,
            crate::config::BackendKind::Local => Backend::Local,
            crate::config::BackendKind::DryRun => Backend::DryRun,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubmitOptions {
    /// Batch command, e.g. `sbatch`; extra words become leading arguments.
    pub submit_command: String,
    /// Resubmit cases that already completed or hold a job id.
    pub force: bool,
}

impl Default for SubmitOptions {
    fn default() -> Self {
        SubmitOptions { submit_command: "sbatch".into(), force: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub case_id: String,
    pub lane: usize,
    pub depends_on: Option<String>,
    pub command: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmitReport {
    pub submissions: Vec<Submission>,
    pub job_ids: BTreeMap<String, String>,
    pub completed: Vec<String>,
    pub failed: Vec<String>,
    /// Successors never started because an earlier case in the lane failed.
    pub skipped: Vec<String>,
    pub script: String,
}

pub type Runner<'a> = dyn Fn(&Path) -> Result<()> + Sync + 'a;

fn parse_job_id(stdout: &str) -> Option<String> {
    stdout.lines().find_map(|l| {
        let rest = l.trim().strip_prefix("Submitted batch job ")?;
        let id = rest.split_whitespace().next()?;
        id.bytes().all(|b| b.is_ascii_digit()).then(|| id.to_string())
    })
}

fn needs_run(m: &CaseManifest, backend: Backend, force: bool) -> bool {
    if force {
        return true;
    }
    match m.status {
        Status::Completed => false,
        Status::Submitted => backend == Backend::Local,
        Status::Pending | Status::Failed => true,
    }
}

fn validate_plan(plan: &LanePlan, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &c in plan.lanes.iter().flatten() {
        let i = c as usize;
        if i >= n {
            return Err(Error::Invalid(format!("plan references case {c}, dataset has {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid(format!("case {c} appears in two lanes")));
        }
    }
    Ok(())
}

/// Submit the cases of `dataset` (plan entries are positions in index order).
pub fn submit(dataset: &Path, plan: &LanePlan, backend: Backend, opts: &SubmitOptions, runner: &Runner<'_>) -> Result<SubmitReport> {
    let mut cases = load_cases(dataset)?;
    validate_plan(plan, cases.len())?;
    let mut report = SubmitReport::default();
    match backend {
        Backend::DryRun => dry_run(dataset, &cases, plan, opts, &mut report),
        Backend::Slurm => {
            slurm(dataset, &mut cases, plan, opts, &mut report)?;
            write_index(dataset, &cases)?;
        }
        Backend::Local => {
            local(dataset, &mut cases, plan, opts, runner, &mut report)?;
            write_index(dataset, &cases)?;
        }
    }
    Ok(report)
}

fn dry_run(dataset: &Path, cases: &[CaseManifest], plan: &LanePlan, opts: &SubmitOptions, report: &mut SubmitReport) {
    let mut script = String::from("#!/bin/bash\nset -e\n");
    for (lane, items) in plan.lanes.iter().enumerate() {
        let mut prev: Option<String> = None;
        for &c in items {
            let m = &cases[c as usize];
            if !needs_run(m, Backend::Slurm, opts.force) {
                prev = m.job_id().filter(|_| m.status == Status::Submitted).map(str::to_string);
                continue;
            }
            let var = format!("JOB_{c}");
            let dep = prev.as_ref().map(|p| format!(" --dependency=afterok:{p}")).unwrap_or_default();
            let script_path = dataset.join(&m.case_id).join(JOB_SCRIPT);
            let command = format!("{var}=$({} --parsable{dep} {})", opts.submit_command, script_path.display());
            script += &command;
            script.push('\n');
            report.submissions.push(Submission { case_id: m.case_id.clone(), lane, depends_on: prev.clone(), command });
            prev = Some(format!("${var}"));
        }
    }
    report.script = script;
}

fn slurm(dataset: &Path, cases: &mut [CaseManifest], plan: &LanePlan, opts: &SubmitOptions, report: &mut SubmitReport) -> Result<()> {
    let words: Vec<&str> = opts.submit_command.split_whitespace().collect();
    let (prog, lead) = words.split_first().ok_or_else(|| Error::Scheduler("empty submit command".into()))?;
    for (lane, items) in plan.lanes.iter().enumerate() {
        let mut prev: Option<String> = None;
        let mut broken = false;
        for &c in items {
            let m = &mut cases[c as usize];
            m.lane = Some(lane);
            if broken {
                report.skipped.push(m.case_id.clone());
                continue;
            }
            if !needs_run(m, Backend::Slurm, opts.force) {
                prev = m.job_id().filter(|_| m.status == Status::Submitted).map(str::to_string);
                m.write(&dataset.join(&m.case_id))?;
                continue;
            }
            let dir = dataset.join(&m.case_id);
            let mut cmd = Command::new(prog);
            cmd.args(lead).current_dir(&dir);
            if let Some(p) = &prev {
                cmd.arg(format!("--dependency=afterok:{p}"));
            }
            cmd.arg(JOB_SCRIPT);
            let shown = format!("{cmd:?}");
            let out = cmd.output().map_err(|e| Error::Scheduler(format!("{prog}: {e}")))?;
            report.submissions.push(Submission { case_id: m.case_id.clone(), lane, depends_on: prev.clone(), command: shown });
            let stdout = String::from_utf8_lossy(&out.stdout).to_string();
            if !out.status.success() {
                m.status = Status::Failed;
                m.write(&dir)?;
                report.failed.push(m.case_id.clone());
                broken = true;
                continue;
            }
            let id = parse_job_id(&stdout).ok_or_else(|| {
                Error::Scheduler(format!("cannot parse job id from {prog} output: {:?} (stderr: {:?})", stdout, String::from_utf8_lossy(&out.stderr)))
            })?;
            m.status = Status::Submitted;
            m.job_ids.push(id.clone());
            m.write(&dir)?;
            report.job_ids.insert(m.case_id.clone(), id.clone());
            prev = Some(id);
        }
    }
    Ok(())
}

enum Event {
    Started { case: usize, lane: usize, ack: mpsc::Sender<()> },
    Finished { case: usize, ok: bool },
    Skipped { case: usize },
}

fn local(dataset: &Path, cases: &mut [CaseManifest], plan: &LanePlan, opts: &SubmitOptions, runner: &Runner<'_>, report: &mut SubmitReport) -> Result<()> {
    let todo: Vec<bool> = cases.iter().map(|m| needs_run(m, Backend::Local, opts.force)).collect();
    let ids: Vec<String> = cases.iter().map(|m| m.case_id.clone()).collect();
    let (tx, rx) = mpsc::channel::<Event>();
    std::thread::scope(|s| -> Result<()> {
        for (lane, items) in plan.lanes.iter().enumerate() {
            let tx = tx.clone();
            let (todo, ids) = (&todo, &ids);
            s.spawn(move || {
                let mut broken = false;
                for &c in items {
                    let c = c as usize;
                    if !todo[c] {
                        continue;
                    }
                    if broken {
                        let _ = tx.send(Event::Skipped { case: c });
                        continue;
                    }
                    let (ack_tx, ack_rx) = mpsc::channel();
                    if tx.send(Event::Started { case: c, lane, ack: ack_tx }).is_err() || ack_rx.recv().is_err() {
                        return;
                    }
                    let ok = runner(&dataset.join(&ids[c])).is_ok();
                    broken = !ok;
                    let _ = tx.send(Event::Finished { case: c, ok });
                }
            });
        }
        drop(tx);
        // single writer: every status change lands here before the lane proceeds
        let mut first_err = None;
        for ev in rx {
            let res = match ev {
                Event::Started { case, lane, ack } => {
                    let m = &mut cases[case];
                    m.lane = Some(lane);
                    m.status = Status::Submitted;
                    m.job_ids.push(format!("local-{lane}-{case}"));
                    report.submissions.push(Submission { case_id: m.case_id.clone(), lane, depends_on: None, command: "synthetic".into() });
                    let r = m.write(&dataset.join(&m.case_id));
                    let _ = ack.send(());
                    r
                }
                Event::Finished { case, ok } => {
                    let m = &mut cases[case];
                    m.status = if ok { Status::Completed } else { Status::Failed };
                    if ok { &mut report.completed } else { &mut report.failed }.push(m.case_id.clone());
                    m.write(&dataset.join(&m.case_id))
                }
                Event::Skipped { case } => {
                    report.skipped.push(cases[case].case_id.clone());
                    Ok(())
                }
            };
            if let Err(e) = res {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    })?;
    // predecessors in the same lane are recorded as dependencies
    for sub in report.submissions.iter_mut() {
        let pos = ids.iter().position(|i| *i == sub.case_id).unwrap() as u64;
        let lane = &plan.lanes[sub.lane];
        let at = lane.iter().position(|c| *c == pos).unwrap();
        sub.depends_on = lane[..at].iter().rev().find(|c| todo[**c as usize]).map(|c| format!("local-{}-{c}", sub.lane));
    }
    report.submissions.sort_by_key(|s| (s.lane, ids.iter().position(|i| *i == s.case_id)));
    for m in cases.iter() {
        if let Some(j) = m.job_id() {
            report.job_ids.insert(m.case_id.clone(), j.to_string());
        }
    }
    Ok(())
}
