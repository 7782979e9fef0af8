//! Checkpoint directories: `params.safetensors` (float64 arrays by name) and
//! `config.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderConfig, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_PARAMS: &str = "params.safetensors";
pub const CHECKPOINT_CONFIG: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    /// Producing method: `random`, `supervised`, `simclr`, `mae`, `data2vec` or `finetuned`.
    pub method: String,
    pub seed: u64,
    #[serde(default)]
    pub fold_id: Option<String>,
    /// Digest of the `encoder.*` arrays, checked on load.
    pub encoder_digest: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Write `params` and `meta` under `dir`. `meta.encoder_digest` is filled in.
pub fn save_checkpoint(dir: &Path, meta: &CheckpointMeta, params: &ParamStore) -> Result<CheckpointMeta> {
    Encoder::check_shapes(&meta.encoder, params)?;
    let mut meta = meta.clone();
    meta.encoder_digest = params.digest(ENCODER_PREFIX);
    params.save(&dir.join(CHECKPOINT_PARAMS))?;
    crate::fsutil::write_json(&dir.join(CHECKPOINT_CONFIG), &meta)?;
    Ok(meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointMeta, ParamStore)> {
    let meta: CheckpointMeta = crate::fsutil::read_json(&dir.join(CHECKPOINT_CONFIG))?;
    let params = ParamStore::load(&dir.join(CHECKPOINT_PARAMS))?;
    Encoder::check_shapes(&meta.encoder, &params)?;
    let digest = params.digest(ENCODER_PREFIX);
    if digest != meta.encoder_digest {
        return Err(Error::Checkpoint(format!(
            "{}: encoder digest {digest} does not match recorded {}",
            dir.display(),
            meta.encoder_digest
        )));
    }
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::Family;

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let enc = Encoder::init(EncoderConfig::desk(Family::ConvInception), 5).unwrap();
        let meta = CheckpointMeta {
            encoder: enc.config.clone(),
            method: "random".into(),
            seed: 5,
            fold_id: Some("A".into()),
            encoder_digest: String::new(),
            extra: serde_json::json!({"note": 1}),
        };
        let saved = save_checkpoint(dir.path(), &meta, &enc.params).unwrap();
        let (m, p) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m, saved);
        assert_eq!(p, enc.params);

        let mut bad = p.clone();
        bad.get_mut("encoder.block0.pool.b").unwrap().data_mut()[0] = 1.0;
        bad.save(&dir.path().join(CHECKPOINT_PARAMS)).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));

        let wrong = CheckpointMeta { encoder: EncoderConfig::desk(Family::SensorwiseTransformer), ..meta };
        assert!(matches!(save_checkpoint(dir.path(), &wrong, &enc.params), Err(Error::ArchMismatch(_))));
    }
}
