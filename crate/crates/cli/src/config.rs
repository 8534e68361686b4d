use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Keys of the configuration file. Every key is optional; unset keys fall
/// back to command-line flags or built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainSection,
    pub filter: FilterSection,
    pub noise: NoiseSection,
    pub split: SplitSection,
    pub synth: SynthSection,
    pub evaluation: EvaluationSection,
    pub tiles: TileSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<String>,
    pub classes: Option<String>,
    pub seeds: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub eval_every: Option<usize>,
    pub t_match: Option<f64>,
    pub negative_keep: Option<f64>,
    pub soft_bias: Option<bool>,
    /// Class list used for `classes = "essential"` instead of deriving one.
    pub essential_list: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub max_center_distance: Option<f64>,
    pub retention_target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub box_jitter_sigma: Option<f64>,
    pub class_confusion_temperature: Option<f64>,
    pub drop_prob: Option<f64>,
    pub spurious_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub seed: Option<u64>,
    pub train: Option<f64>,
    pub validation: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub pages: Option<usize>,
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub width: Option<f64>,
    pub height: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub t_match: Option<f64>,
    pub t_predict: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileSection {
    pub crop_size: Option<f64>,
    pub margin: Option<f64>,
    pub merge_iou: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// The flag if given, else the configuration key, else the default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
