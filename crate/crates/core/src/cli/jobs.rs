//! Execution of a single pretraining or fine-tuning job, in-process.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::{pretrain_dir, run_dir, FinetuneJob, PretrainJob};
use crate::backbones::{load_checkpoint, save_checkpoint, CheckpointMeta, Encoder};
use crate::error::Result;
use crate::eval::{RunResult, RESULT_FILE};
use crate::finetune::{attach_head, finetune, target_classes, Classifier, RunLabel};
use crate::harmonize::Corpus;
use crate::pretrain::PretrainSet;
use crate::splits::{build_lodo_with, LodoSplit};

pub const JOB_FILE: &str = "job.json";
pub const LOG_FILE: &str = "log.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Job {
    Pretrain(PretrainJob),
    Finetune(FinetuneJob),
}

impl Job {
    pub fn id(&self) -> String {
        match self {
            Job::Pretrain(j) => j.id(),
            Job::Finetune(j) => j.id(),
        }
    }

    /// Directory holding the job file, log and outputs.
    pub fn dir(&self, root: &Path) -> PathBuf {
        match self {
            Job::Pretrain(j) => pretrain_dir(root, &j.id()),
            Job::Finetune(j) => run_dir(root, &j.id()),
        }
    }
}

/// Everything a worker process needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFile {
    pub corpus: PathBuf,
    pub root: PathBuf,
    pub job: Job,
}

pub fn job_split(corpus: &Corpus, job: &PretrainJob) -> Result<LodoSplit> {
    build_lodo_with(corpus, &job.fold, job.split_seed, &job.scarcity_counts)
}

/// Pretrain and write the checkpoint into `out`.
pub fn run_pretrain(corpus: &Corpus, job: &PretrainJob, out: &Path) -> Result<CheckpointMeta> {
    let split = job_split(corpus, job)?;
    let data = PretrainSet::from_split(corpus, &split)?;
    let encoder = Encoder::init(job.encoder.clone(), job.seed)?;
    let trained = job.method.run(&data, encoder, &job.schedule, job.adam, job.seed)?;
    trained.save(out, job.seed, Some(&job.fold), job.method.keep_prefixes())
}

/// Fine-tune from the checkpoint in `checkpoint`; returns the result and the
/// selected model.
pub fn run_finetune(corpus: &Corpus, job: &FinetuneJob, checkpoint: &Path) -> Result<(RunResult, Classifier)> {
    let split = job_split(corpus, &job.pretrain)?;
    let (meta, params) = load_checkpoint(checkpoint)?;
    let classes = target_classes(corpus, &split)?;
    let model = attach_head(&meta.encoder, &params, &classes, job.spec.seed)?;
    let label = RunLabel {
        run_id: job.id(),
        method: job.pretrain.method.method(),
        hyperparameters: serde_json::to_value(&job.pretrain)?,
    };
    finetune(model, corpus, &split, &job.spec, &label)
}

/// Save a fine-tuned model as a checkpoint whose metadata lists its classes.
pub fn save_classifier(dir: &Path, model: &Classifier, result: &RunResult) -> Result<CheckpointMeta> {
    let meta = CheckpointMeta {
        encoder: model.encoder.clone(),
        method: "finetuned".into(),
        seed: result.seed,
        fold_id: Some(result.fold_id.clone()),
        encoder_digest: String::new(),
        extra: serde_json::json!({ "classes": model.classes, "pretrain_method": result.method, "run_id": result.run_id }),
    };
    save_checkpoint(dir, &meta, &model.params)
}

/// Run the job described by `file` and write its outputs under the root.
pub fn execute(file: &JobFile) -> Result<()> {
    let corpus = Corpus::load(&file.corpus)?;
    match &file.job {
        Job::Pretrain(j) => {
            run_pretrain(&corpus, j, &pretrain_dir(&file.root, &j.id()))?;
        }
        Job::Finetune(j) => {
            let (result, _) = run_finetune(&corpus, j, &pretrain_dir(&file.root, &j.pretrain.id()))?;
            crate::fsutil::write_json(&run_dir(&file.root, &j.id()).join(RESULT_FILE), &result)?;
        }
    }
    Ok(())
}
