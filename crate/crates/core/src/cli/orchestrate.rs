//! Runs a plan as one worker process per job.

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::jobs::{Job, JobFile, JOB_FILE, LOG_FILE};
use super::matrix::{pretrain_complete, run_complete, Plan};
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub kind: String,
    pub reason: String,
    pub log: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pretrain_run: usize,
    pub pretrain_skipped: usize,
    pub runs_completed: usize,
    pub runs_skipped: usize,
    pub failures: Vec<Failure>,
    /// Job ids in the order their processes started.
    pub started: Vec<String>,
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// How workers are launched: `program args... <job file>`.
#[derive(Clone, Debug)]
pub struct Launcher {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl Launcher {
    /// The `run-job` subcommand of `exe`.
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Self { program: exe.into(), args: vec!["run-job".into()] }
    }
}

/// Execute the pending jobs of `plan` with at most `parallelism` concurrent
/// worker processes: pretraining first, then fine-tuning. A failed job never
/// stops its siblings; runs whose pretraining failed are recorded as failed.
pub fn orchestrate(plan: &Plan, corpus: &Path, root: &Path, launcher: &Launcher, parallelism: usize) -> Result<Summary> {
    if parallelism == 0 {
        return Err(Error::InvalidArgument("parallelism must be at least 1".into()));
    }
    let mut summary = Summary::default();
    let mut pre_jobs = Vec::new();
    for j in &plan.pretrain {
        if pretrain_complete(root, j) {
            summary.pretrain_skipped += 1;
        } else {
            pre_jobs.push(Job::Pretrain(j.clone()));
        }
    }
    let pre = run_all(&pre_jobs, corpus, root, launcher, parallelism)?;
    let failed_pre: BTreeSet<String> = pre.failures.iter().map(|f| f.id.clone()).collect();
    summary.pretrain_run = pre_jobs.len() - pre.failures.len();
    summary.started.extend(pre.started);
    summary.failures.extend(pre.failures);

    let mut ft_jobs = Vec::new();
    for j in &plan.runs {
        let pid = j.pretrain.id();
        if run_complete(root, j) {
            summary.runs_skipped += 1;
        } else if failed_pre.contains(&pid) {
            summary.failures.push(Failure {
                id: j.id(),
                kind: "finetune".into(),
                reason: format!("pretraining {pid} failed"),
                log: Job::Pretrain(j.pretrain.clone()).dir(root).join(LOG_FILE),
            });
        } else {
            ft_jobs.push(Job::Finetune(j.clone()));
        }
    }
    let ft = run_all(&ft_jobs, corpus, root, launcher, parallelism)?;
    summary.runs_completed = ft_jobs.len() - ft.failures.len();
    summary.started.extend(ft.started);
    summary.failures.extend(ft.failures);
    crate::fsutil::write_json(&root.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

struct Batch {
    started: Vec<String>,
    failures: Vec<Failure>,
}

fn run_all(jobs: &[Job], corpus: &Path, root: &Path, launcher: &Launcher, parallelism: usize) -> Result<Batch> {
    let queue = Mutex::new(jobs.iter().collect::<VecDeque<_>>());
    let started = Mutex::new(Vec::new());
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..parallelism.min(jobs.len()) {
            s.spawn(|| loop {
                let Some(job) = queue.lock().unwrap().pop_front() else { break };
                started.lock().unwrap().push(job.id());
                if let Err(reason) = run_one(job, corpus, root, launcher) {
                    failures.lock().unwrap().push(Failure {
                        id: job.id(),
                        kind: match job {
                            Job::Pretrain(_) => "pretrain".into(),
                            Job::Finetune(_) => "finetune".into(),
                        },
                        reason,
                        log: job.dir(root).join(LOG_FILE),
                    });
                }
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by_key(|f| jobs.iter().position(|j| j.id() == f.id));
    Ok(Batch { started: started.into_inner().unwrap(), failures })
}

fn run_one(job: &Job, corpus: &Path, root: &Path, launcher: &Launcher) -> std::result::Result<(), String> {
    let dir = job.dir(root);
    let file = JobFile { corpus: corpus.to_path_buf(), root: root.to_path_buf(), job: job.clone() };
    let job_path = dir.join(JOB_FILE);
    crate::fsutil::write_json(&job_path, &file).map_err(|e| e.to_string())?;
    let log_path = dir.join(LOG_FILE);
    let log = std::fs::File::create(&log_path).map_err(|e| format!("{}: {e}", log_path.display()))?;
    let err_log = log.try_clone().map_err(|e| e.to_string())?;
    let status = Command::new(&launcher.program)
        .args(&launcher.args)
        .arg(&job_path)
        .stdin(Stdio::null())
        .stdout(log)
        .stderr(err_log)
        .status()
        .map_err(|e| format!("cannot start {}: {e}", launcher.program.display()))?;
    if !status.success() {
        return Err(format!("worker exited with {status}"));
    }
    let complete = match job {
        Job::Pretrain(j) => pretrain_complete(root, j),
        Job::Finetune(j) => run_complete(root, j),
    };
    if complete {
        Ok(())
    } else {
        Err("worker succeeded but left no verifiable output".into())
    }
}
