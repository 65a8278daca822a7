//! Single-file run configuration with one section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::deploy::DeployConfig;
use crate::evalkit::EvalConfig;
use crate::prior_apf::ApfConfig;
use crate::sac::SacConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sac: SacConfig,
    pub apf: ApfConfig,
    pub deploy: DeployConfig,
    pub eval: EvalConfig,
    pub log_level: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            sac: SacConfig::default(),
            apf: ApfConfig::default(),
            deploy: DeployConfig::default(),
            eval: EvalConfig::default(),
            log_level: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(src: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(src).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&src)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.eval.resolution > 0.0) || self.eval.episodes == 0 {
            return Err(ConfigError::Invalid("eval.resolution and eval.episodes must be positive".into()));
        }
        if !(self.deploy.ensemble_var_floor > 0.0) {
            return Err(ConfigError::Invalid("deploy.ensemble_var_floor must be positive".into()));
        }
        Ok(())
    }

    /// The trainer's view: the train section with the sac and apf sections merged in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { sac: self.sac.clone(), apf: self.apf.clone(), ..self.train.clone() }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configs serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Laptop-scale settings used by the acceptance suite. With a sparse
    /// reward a few hundred steps away, the default entropy bonus drowns the
    /// value signal and the default target rate propagates it too slowly.
    pub fn desk() -> Self {
        let mut cfg = RunConfig::default();
        cfg.sac.alpha_entropy = 0.001;
        cfg.sac.polyak = 0.98;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json_str("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_located() {
        let src = "{\n  \"sac\": {\n    \"gama\": 0.9\n  }\n}";
        match RunConfig::from_json_str(src) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("gama"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(RunConfig::from_json_str(r#"{"sac": {"gamma": 1.5}}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_json_str(r#"{"train": {"seeds": []}}"#), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.sac.lr = 1e-3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let back = RunConfig::from_json_str(&a.to_json_pretty()).unwrap();
        assert_eq!(back.hash(), a.hash());
    }

    #[test]
    fn merged_train_config() {
        let cfg = RunConfig::from_json_str(r#"{"sac": {"lr": 0.001}, "apf": {"k_att": 2.0}}"#).unwrap();
        let t = cfg.train_config();
        assert_eq!(t.sac.lr, 0.001);
        assert_eq!(t.apf.k_att, 2.0);
    }
}
