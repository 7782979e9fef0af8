//! Expansion of a config into pretraining and fine-tuning jobs with
//! content-hash ids.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::backbones::{load_checkpoint, EncoderConfig, Family};
use crate::error::{Error, Result};
use crate::eval::{RunResult, RESULT_FILE};
use crate::finetune::FinetuneSpec;
use crate::pretrain::{config_hash, PretrainConfig};
use crate::trainer::{AdamConfig, TrainSchedule};

const ID_LEN: usize = 16;

/// One pretraining run. Every field feeds the id; paths do not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainJob {
    pub fold: String,
    pub family: Family,
    pub seed: u64,
    pub split_seed: u64,
    pub scarcity_counts: Vec<usize>,
    pub encoder: EncoderConfig,
    pub method: PretrainConfig,
    pub schedule: TrainSchedule,
    pub adam: AdamConfig,
}

impl PretrainJob {
    pub fn id(&self) -> String {
        config_hash(self)[..ID_LEN].to_string()
    }
}

/// One fine-tuning run on top of a pretraining run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub pretrain: PretrainJob,
    pub spec: FinetuneSpec,
}

impl FinetuneJob {
    pub fn id(&self) -> String {
        config_hash(self)[..ID_LEN].to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Plan {
    /// Distinct pretraining jobs in first-use order.
    pub pretrain: Vec<PretrainJob>,
    pub runs: Vec<FinetuneJob>,
}

/// Cartesian product folds × families × methods × seeds × scenarios ×
/// frozen modes, in that nesting order.
pub fn expand_matrix(cfg: &ExperimentConfig) -> Result<Plan> {
    if cfg.folds.is_empty() {
        return Err(Error::config("folds", "no folds to expand (resolve them against the corpus first)"));
    }
    let counts = cfg.scarcity_counts();
    let mut plan = Plan::default();
    for fold in &cfg.folds {
        for &family in &cfg.families {
            for &method in &cfg.methods {
                for &seed in &cfg.seeds {
                    let pretrain = PretrainJob {
                        fold: fold.clone(),
                        family,
                        seed: if cfg.share_pretraining { cfg.seeds[0] } else { seed },
                        split_seed: cfg.split_seed,
                        scarcity_counts: counts.clone(),
                        encoder: cfg.encoder.get(family).clone(),
                        method: cfg.pretrain_config(method, family),
                        schedule: cfg.pretrain.schedule(),
                        adam: cfg.pretrain.adam(),
                    };
                    if !plan.pretrain.contains(&pretrain) {
                        plan.pretrain.push(pretrain.clone());
                    }
                    for &scenario in &cfg.scenarios {
                        for &frozen in &cfg.frozen {
                            let spec = cfg.finetune.spec(frozen, scenario, seed);
                            plan.runs.push(FinetuneJob { pretrain: pretrain.clone(), spec });
                        }
                    }
                }
            }
        }
    }
    Ok(plan)
}

pub fn pretrain_dir(root: &Path, id: &str) -> PathBuf {
    root.join("pretrain").join(id)
}

pub fn run_dir(root: &Path, id: &str) -> PathBuf {
    root.join("runs").join(id)
}

/// A run is complete when its result file parses and carries its id.
pub fn run_complete(root: &Path, job: &FinetuneJob) -> bool {
    let id = job.id();
    crate::fsutil::read_json::<RunResult>(&run_dir(root, &id).join(RESULT_FILE)).is_ok_and(|r| r.run_id == id)
}

/// A pretraining job is complete when its checkpoint loads and verifies.
pub fn pretrain_complete(root: &Path, job: &PretrainJob) -> bool {
    load_checkpoint(&pretrain_dir(root, &job.id())).is_ok_and(|(meta, _)| meta.encoder == job.encoder)
}

/// Runs without a verified result under `root`.
pub fn pending<'a>(plan: &'a Plan, root: &Path) -> Vec<&'a FinetuneJob> {
    plan.runs.iter().filter(|j| !run_complete(root, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::parse_config_str;
    use crate::pretrain::Method;
    use crate::splits::Scenario;
    use std::collections::BTreeSet;

    fn config() -> ExperimentConfig {
        parse_config_str(
            "folds = [\"A\", \"B\", \"C\"]\nmethods = [\"mae\", \"simclr\"]\nfamilies = [\"transformer\"]\n\
             scenarios = [\"full\", 10]\nfrozen = [true]\nseeds = [0, 1, 2, 3, 4]\n",
        )
        .unwrap()
    }

    #[test]
    fn product_size_and_ids() {
        let plan = expand_matrix(&config()).unwrap();
        assert_eq!(plan.runs.len(), 60);
        assert_eq!(plan.pretrain.len(), 30);
        let ids: BTreeSet<String> = plan.runs.iter().map(|j| j.id()).collect();
        assert_eq!(ids.len(), 60);
        assert_eq!(plan, expand_matrix(&config()).unwrap());
        let mut shared = config();
        shared.share_pretraining = true;
        let p = expand_matrix(&shared).unwrap();
        assert_eq!((p.pretrain.len(), p.runs.len()), (6, 60));
        assert!(p.runs.iter().all(|j| j.pretrain.seed == 0));
        let m = plan.runs.iter().find(|j| j.pretrain.method.method() == Method::Mae).unwrap();
        assert_eq!(m.spec.schedule.epochs, if m.spec.scenario == Scenario::Full { 100 } else { 50 });
    }

    #[test]
    fn ids_ignore_paths_and_track_hyperparameters() {
        let a = expand_matrix(&config()).unwrap();
        let mut moved = config();
        moved.output = "/elsewhere".into();
        moved.corpus = "/other/corpus".into();
        assert_eq!(a.runs.iter().map(FinetuneJob::id).collect::<Vec<_>>(), expand_matrix(&moved).unwrap().runs.iter().map(FinetuneJob::id).collect::<Vec<_>>());
        let mut tweaked = config();
        tweaked.mae.transformer.mask_ratio = 0.7;
        let b = expand_matrix(&tweaked).unwrap();
        let changed = a.runs.iter().zip(&b.runs).filter(|(x, y)| x.id() != y.id()).count();
        assert_eq!(changed, 30);
    }

    #[test]
    fn resume_skips_verified_results() {
        let plan = expand_matrix(&config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for job in &plan.runs[..10] {
            let mut r = crate::eval::tests::result("A", 0.5, 0);
            r.run_id = job.id();
            crate::fsutil::write_json(&run_dir(dir.path(), &job.id()).join(RESULT_FILE), &r).unwrap();
        }
        let bad = plan.runs[10].id();
        crate::fsutil::write_json(&run_dir(dir.path(), &bad).join(RESULT_FILE), &crate::eval::tests::result("A", 0.5, 0)).unwrap();
        assert_eq!(pending(&plan, dir.path()).len(), 50);
        assert!(!pretrain_complete(dir.path(), &plan.pretrain[0]));
    }

    #[test]
    fn needs_folds() {
        let mut c = config();
        c.folds.clear();
        assert!(matches!(expand_matrix(&c), Err(Error::Config { .. })));
    }
}
