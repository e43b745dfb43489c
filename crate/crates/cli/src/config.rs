use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use examguard::encoder::EncoderConfig;
use examguard::model::{ModelConfig, TrainConfig};

/// Split settings of the training protocol; the seed comes from `--seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stratified: true,
        }
    }
}

/// Contents of a `--config` file. Every key is optional; unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Architecture for `train`; defaults to the dense LSTM.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub split: SplitConfig,
    /// Oversample the suspected class of the training split.
    pub augment: bool,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                augment: true,
                ..Self::default()
            });
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<CliConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<CliConfig>(r#"{"train": {"lr": 0.001, "momentum": 1}}"#).is_err());
        let c: CliConfig = serde_json::from_str(r#"{"train": {"lr": 0.001}}"#).unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn model_section() {
        let c: CliConfig = serde_json::from_str(
            r#"{"model": {"baseline": {"kind": "rnn", "hidden": 32, "input_len": 23, "classes": 2, "seed": 0}}}"#,
        )
        .unwrap();
        assert_eq!(c.model.unwrap().name(), "rnn");
    }
}
