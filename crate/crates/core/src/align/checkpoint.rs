//! Checkpoints: `manifest.json` plus `params.bin`, a little-endian f64 blob
//! in manifest order.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::loss::Variant;
use super::model::{ModelConfig, ModelParams, ParamSpec};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::quadrant::quadrant_order_names;

pub const CHECKPOINT_FORMAT: &str = "era-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub quadrant_order: Vec<String>,
    /// Hash of the world configuration the training data came from.
    pub config_hash: String,
    pub train_config_hash: String,
    pub variant: Variant,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub steps: usize,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, train: &TrainConfig, config_hash: String, steps: usize) -> Result<Self> {
        Ok(Self {
            manifest: Manifest {
                format: CHECKPOINT_FORMAT.to_string(),
                quadrant_order: quadrant_order_names(),
                config_hash,
                train_config_hash: crate::scenario::hash_json(train)?,
                variant: train.variant,
                model: params.config().clone(),
                train: train.clone(),
                steps,
                params: params.layout().to_vec(),
            },
            params,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
        let mut blob = Vec::with_capacity(self.params.len() * 8);
        for v in self.params.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join(PARAMS_FILE), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
        }
        if manifest.quadrant_order != quadrant_order_names() {
            return Err(Error::Checkpoint(format!(
                "quadrant order {:?} differs from {:?}",
                manifest.quadrant_order,
                quadrant_order_names()
            )));
        }
        let blob = std::fs::read(dir.join(PARAMS_FILE))?;
        if blob.len() % 8 != 0 {
            return Err(Error::Checkpoint("parameter blob is not a whole number of f64".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params =
            ModelParams::from_values(manifest.model.clone(), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.layout() != manifest.params.as_slice() {
            return Err(Error::Checkpoint(
                "manifest parameter list does not match the model layout".into(),
            ));
        }
        Ok(Self { manifest, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = TrainConfig {
            variant: Variant::LearnableW,
            hidden: 6,
            ..TrainConfig::default()
        };
        let params = ModelParams::init(cfg.model_config(5, 4), 1, -3.0).unwrap();
        let ck = Checkpoint::new(params, &cfg, "abc".into(), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn wrong_quadrant_order_rejected() {
        let cfg = TrainConfig {
            hidden: 3,
            ..TrainConfig::default()
        };
        let params = ModelParams::zeros(cfg.model_config(2, 4)).unwrap();
        let mut ck = Checkpoint::new(params, &cfg, "h".into(), 0).unwrap();
        ck.manifest.quadrant_order.swap(0, 1);
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
