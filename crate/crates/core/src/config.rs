//! Run configuration: strict JSON with defaults for every field and dotted
//! `key=value` overrides.

use crate::bunet::ArchConfig;
use crate::corpus::GenConfig;
use crate::error::{Error, Result};
use crate::gating::GatingConfig;
use crate::pipeline::InferenceConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    pub n_videos: usize,
    pub master_seed: u64,
    pub generation: GenConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("corpus"),
            n_videos: 200,
            master_seed: 0,
            generation: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Semi-automatic reference measures every ground-truth key frame, not just k.
    pub semi_all_of_key_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub gating: GatingConfig,
    pub inference: InferenceConfig,
    pub baselines: BaselineConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            gating: GatingConfig::default(),
            inference: InferenceConfig::default(),
            baselines: BaselineConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.generation.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.gating.validate()?;
        if self.inference.mc_passes == 0 {
            return Err(Error::Config("inference.mc_passes must be ≥ 1".into()));
        }
        if self.corpus.generation.height != self.arch.input_size || self.corpus.generation.width != self.arch.input_size {
            return Err(Error::Config(format!(
                "corpus frames are {}×{} but arch.input_size is {}",
                self.corpus.generation.height, self.corpus.generation.width, self.arch.input_size
            )));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        Self::from_value(value, origin)
    }

    fn from_value(value: Value, origin: &str) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::format(path.display(), format!("cannot read config: {e}")))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Applies `key.path=value` overrides. Values parse as JSON when they can and
    /// as plain strings otherwise.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for (key, raw) in overrides {
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut value, key, parsed)?;
        }
        Self::from_value(value, "command-line overrides")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown configuration key '{key}'")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    Err(Error::Config("empty configuration key".into()))
}
