//! Experiment configuration: a TOML file layered over the shipped defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::{EncoderConfig, Family};
use crate::data2vec::D2vConfig;
use crate::error::{Error, Result};
use crate::finetune::FinetuneSpec;
use crate::harmonize::Corpus;
use crate::mae::MaeConfig;
use crate::pretrain::{Method, PretrainConfig};
use crate::simclr::SimclrConfig;
use crate::splits::Scenario;
use crate::trainer::{AdamConfig, Monitor, TrainSchedule};

/// The shipped defaults, including the grid-searched per-method blocks.
pub const DEFAULTS: &str = include_str!("../../defaults/table1.toml");
pub const SCHEMA_VERSION: u32 = 1;
/// Overrides the configured results root.
pub const RESULTS_ENV: &str = "SSLHAR_RESULTS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerFamily<T> {
    pub conv: T,
    pub transformer: T,
}

impl<T> PerFamily<T> {
    pub fn get(&self, family: Family) -> &T {
        match family {
            Family::ConvInception => &self.conv,
            Family::SensorwiseTransformer => &self.transformer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderPreset {
    Reference,
    Desk,
}

impl EncoderPreset {
    pub fn config(self, family: Family) -> EncoderConfig {
        match self {
            EncoderPreset::Reference => EncoderConfig::reference(family),
            EncoderPreset::Desk => EncoderConfig::desk(family),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainStage {
    pub epochs: usize,
    pub batch_size: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// 0 disables clipping.
    pub clip_norm: f64,
}

impl PretrainStage {
    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: (self.patience > 0).then_some(self.patience),
            monitor: Monitor::Loss,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneStage {
    pub epochs_full: usize,
    pub epochs_scarce: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl FinetuneStage {
    pub fn spec(&self, frozen: bool, scenario: Scenario, seed: u64) -> FinetuneSpec {
        let mut spec = FinetuneSpec::new(frozen, scenario, seed);
        spec.schedule.epochs = if scenario.is_scarce() { self.epochs_scarce } else { self.epochs_full };
        spec.schedule.batch_size = self.batch_size;
        spec.adam = AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps };
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub corpus: PathBuf,
    pub output: PathBuf,
    /// Left-out datasets; empty means every dataset in the corpus.
    pub folds: Vec<String>,
    pub methods: Vec<Method>,
    pub families: Vec<Family>,
    pub scenarios: Vec<Scenario>,
    pub frozen: Vec<bool>,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub share_pretraining: bool,
    pub encoder_preset: EncoderPreset,
    pub encoder: PerFamily<EncoderConfig>,
    pub pretrain: PretrainStage,
    pub finetune: FinetuneStage,
    pub simclr: PerFamily<SimclrConfig>,
    pub mae: PerFamily<MaeConfig>,
    pub data2vec: PerFamily<D2vConfig>,
}

impl ExperimentConfig {
    /// The defaults alone.
    pub fn defaults() -> Self {
        parse_config_str("").expect("shipped defaults are valid")
    }

    pub fn pretrain_config(&self, method: Method, family: Family) -> PretrainConfig {
        match method {
            Method::Random => PretrainConfig::Random,
            Method::Supervised => PretrainConfig::Supervised,
            Method::Simclr => PretrainConfig::Simclr(self.simclr.get(family).clone()),
            Method::Mae => PretrainConfig::Mae(self.mae.get(family).clone()),
            Method::Data2vec => PretrainConfig::Data2vec(self.data2vec.get(family).clone()),
        }
    }

    /// Per-class counts requested by the scarce scenarios, sorted.
    pub fn scarcity_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .scenarios
            .iter()
            .filter_map(|s| match s {
                Scenario::PerClass(n) => Some(*n),
                Scenario::Full => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `output`, unless the results environment variable is set.
    pub fn results_root(&self) -> PathBuf {
        results_root_from(std::env::var_os(RESULTS_ENV).map(PathBuf::from), &self.output)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let nonempty = [
            ("methods", self.methods.is_empty()),
            ("families", self.families.is_empty()),
            ("scenarios", self.scenarios.is_empty()),
            ("frozen", self.frozen.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((key, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::config(*key, "must not be empty"));
        }
        for (key, stage_bad) in [
            ("pretrain", self.pretrain.epochs == 0 || self.pretrain.batch_size == 0 || !(self.pretrain.lr > 0.0)),
            ("finetune", self.finetune.epochs_full == 0 || self.finetune.epochs_scarce == 0 || self.finetune.batch_size == 0 || !(self.finetune.lr > 0.0)),
        ] {
            if stage_bad {
                return Err(Error::config(key, "epochs, batch_size and lr must be positive"));
            }
        }
        for family in Family::ALL {
            let f = family.short();
            let enc = self.encoder.get(family);
            enc.validate().map_err(|e| Error::config(format!("encoder.{f}"), e.to_string()))?;
            self.simclr.get(family).validate().map_err(|e| Error::config(format!("simclr.{f}"), e.to_string()))?;
            self.mae.get(family).validate(enc).map_err(|e| Error::config(format!("mae.{f}"), e.to_string()))?;
            self.data2vec
                .get(family)
                .validate(enc)
                .map_err(|e| Error::config(format!("data2vec.{f}"), e.to_string()))?;
        }
        Ok(())
    }

    /// Check the folds against a corpus; an empty fold list becomes every dataset.
    pub fn resolve_folds(&mut self, corpus: &Corpus) -> Result<()> {
        let available = corpus.dataset_ids();
        if self.folds.is_empty() {
            self.folds = available.clone();
        }
        if let Some(missing) = self.folds.iter().find(|f| !available.contains(f)) {
            return Err(Error::config("folds", format!("dataset {missing:?} is not in the corpus ({available:?})")));
        }
        if available.len() < 2 {
            return Err(Error::config("corpus", "leave-one-dataset-out needs at least two datasets"));
        }
        Ok(())
    }
}

pub fn results_root_from(env: Option<PathBuf>, configured: &Path) -> PathBuf {
    env.filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| configured.to_path_buf())
}

/// Parse a config file. Relative paths resolve against its directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let mut cfg = parse_config_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.corpus, &mut cfg.output] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

/// Parse config text layered over [`DEFAULTS`] and validate it.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let user: toml::Table = toml::from_str(text).map_err(|e| Error::config("<toml>", e.message().trim()))?;
    let mut merged: toml::Table = toml::from_str(DEFAULTS).expect("defaults parse");
    let preset_value = user.get("encoder_preset").or_else(|| merged.get("encoder_preset")).cloned();
    let preset: EncoderPreset = preset_value
        .map(|v| v.try_into())
        .transpose()
        .map_err(|e: toml::de::Error| Error::config("encoder_preset", e.message().trim()))?
        .unwrap_or(EncoderPreset::Reference);
    let encoders = PerFamily { conv: preset.config(Family::ConvInception), transformer: preset.config(Family::SensorwiseTransformer) };
    merged.insert("encoder".into(), toml::Value::try_from(&encoders).expect("encoder configs serialize"));
    merge(&mut merged, user);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message().trim())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
