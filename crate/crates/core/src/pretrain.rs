//! Plumbing shared by the pretraining methods.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbones::{save_checkpoint, CheckpointMeta, Encoder, EncoderConfig, ENCODER_PREFIX};
use crate::data2vec::{d2v_pretrain, D2vConfig};
use crate::error::{Error, Result};
use crate::harmonize::{Corpus, SensorWindow};
use crate::mae::{mae_pretrain, MaeConfig, MASK_TOKEN_PREFIX};
use crate::params::ParamStore;
use crate::simclr::{simclr_pretrain, SimclrConfig};
use crate::splits::{resolve, LodoSplit};
use crate::trainer::{AdamConfig, History, RunManifest, TrainSchedule};

/// Source of the encoder weights that fine-tuning starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Supervised,
    Simclr,
    Mae,
    Data2vec,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Random, Method::Supervised, Method::Simclr, Method::Mae, Method::Data2vec];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Supervised => "supervised",
            Method::Simclr => "simclr",
            Method::Mae => "mae",
            Method::Data2vec => "data2vec",
        }
    }

    pub fn is_self_supervised(self) -> bool {
        matches!(self, Method::Simclr | Method::Mae | Method::Data2vec)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Training and validation windows for pretraining, as corpus positions.
pub struct PretrainSet<'a> {
    pub corpus: &'a Corpus,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl<'a> PretrainSet<'a> {
    pub fn from_split(corpus: &'a Corpus, split: &LodoSplit) -> Result<Self> {
        Ok(Self { corpus, train: resolve(corpus, &split.pretrain_train)?, val: resolve(corpus, &split.pretrain_val)? })
    }

    pub fn windows(&self, idx: &[usize]) -> Vec<&'a SensorWindow> {
        idx.iter().map(|&i| self.corpus.window(i)).collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "pretraining needs training and validation windows (have {} / {})",
                self.train.len(),
                self.val.len()
            )));
        }
        Ok(())
    }
}

/// Result of a pretraining run: every trained array (encoder and
/// method-specific parts) at the best validation epoch.
pub struct Pretrained {
    pub method: Method,
    pub encoder: EncoderConfig,
    pub params: ParamStore,
    pub manifest: RunManifest,
}

impl Pretrained {
    /// Write the encoder (plus `keep` prefixes such as mask tokens) as a
    /// checkpoint, and the run manifest next to it.
    pub fn save(&self, dir: &Path, seed: u64, fold_id: Option<&str>, keep: &[&str]) -> Result<CheckpointMeta> {
        let mut store = self.params.with_prefix(ENCODER_PREFIX);
        for p in keep {
            store.extend_from(&self.params.with_prefix(p));
        }
        let meta = CheckpointMeta {
            encoder: self.encoder.clone(),
            method: self.method.to_string(),
            seed,
            fold_id: fold_id.map(String::from),
            encoder_digest: String::new(),
            extra: self.manifest.extra.clone(),
        };
        let meta = save_checkpoint(dir, &meta, &store)?;
        crate::fsutil::write_json(&dir.join("run_manifest.json"), &self.manifest)?;
        Ok(meta)
    }
}

/// A pretraining method together with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "config", rename_all = "lowercase")]
pub enum PretrainConfig {
    Random,
    Supervised,
    Simclr(SimclrConfig),
    Mae(MaeConfig),
    Data2vec(D2vConfig),
}

impl PretrainConfig {
    pub fn method(&self) -> Method {
        match self {
            PretrainConfig::Random => Method::Random,
            PretrainConfig::Supervised => Method::Supervised,
            PretrainConfig::Simclr(_) => Method::Simclr,
            PretrainConfig::Mae(_) => Method::Mae,
            PretrainConfig::Data2vec(_) => Method::Data2vec,
        }
    }

    /// Non-encoder prefixes worth keeping in the checkpoint.
    pub fn keep_prefixes(&self) -> &'static [&'static str] {
        match self {
            PretrainConfig::Mae(_) => &[MASK_TOKEN_PREFIX],
            _ => &[],
        }
    }

    /// Pretrain `encoder` on `data`. `Random` returns the initialization.
    pub fn run(
        &self,
        data: &PretrainSet,
        encoder: Encoder,
        schedule: &TrainSchedule,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Pretrained> {
        match self {
            PretrainConfig::Random => {
                let manifest = RunManifest {
                    config_hash: config_hash(&encoder.config),
                    seed,
                    schedule: schedule.clone(),
                    optimizer: adam,
                    history: History::default(),
                    best_epoch: 0,
                    stopped_early: false,
                    steps: 0,
                    step_ms_median: 0.0,
                    extra: serde_json::json!({ "method": "random" }),
                };
                Ok(Pretrained { method: Method::Random, encoder: encoder.config, params: encoder.params, manifest })
            }
            PretrainConfig::Supervised => crate::finetune::supervised_pretrain(data, encoder, schedule, adam, seed),
            PretrainConfig::Simclr(c) => simclr_pretrain(data, encoder, c, schedule, adam, seed),
            PretrainConfig::Mae(c) => mae_pretrain(data, encoder, c, schedule, adam, seed),
            PretrainConfig::Data2vec(c) => d2v_pretrain(data, encoder, c, schedule, adam, seed),
        }
    }
}

/// Deterministic hash of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(&serde_json::to_value(value).expect("serializable config")).expect("json");
    hex::encode(Sha256::digest(bytes))
}
