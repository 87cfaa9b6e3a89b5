//! Run configuration: one TOML file with `[model]`, `[optim]`, `[data]`,
//! `[train]`, `[probe]` and `[finetune]` sections plus a few top-level keys.
//! Keys mirror the struct field names exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, SamplerKind};
use crate::error::{Result, VsaError};
use crate::model::VsaConfig;
use crate::train::optim::OptimConfig;

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: String,
    pub test: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train: "data/train.vsad".into(), test: "data/test.vsad".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sampler: SamplerKind,
    pub source_aug: AugmentPolicy,
    /// Ablation only. Anything but `none` feeds augmented targets to the loss.
    pub target_aug: AugmentPolicy,
    /// View pairs drawn per object per epoch.
    pub pairs_per_object: usize,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sampler: SamplerKind::Random,
            source_aug: AugmentPolicy::CROP,
            target_aug: AugmentPolicy::NONE,
            pairs_per_object: 1,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Views averaged per prediction; 0 uses every view.
    pub views: usize,
    pub optim: OptimConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { views: 0, optim: OptimConfig::probe() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub views: usize,
    pub augment: AugmentPolicy,
    pub optim: OptimConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { views: 0, augment: AugmentPolicy::CROP, optim: OptimConfig::finetune() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub out_dir: String,
    pub model: VsaConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| VsaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| VsaError::Config(format!("{}: {e}", path.display())))
    }

    /// Parse `text` (possibly empty) and apply `key.path=value` overrides.
    /// Values are read as TOML literals, falling back to plain strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| VsaError::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| VsaError::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields one part");
            let mut node = &mut table;
            for part in parents {
                let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| VsaError::Config(format!("override {key}: {part} is not a section")))?;
            }
            node.insert(last.to_string(), value);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| VsaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.probe.optim.validate()?;
        self.finetune.optim.validate()?;
        if self.train.pairs_per_object == 0 {
            return Err(VsaError::Config("train.pairs_per_object must be positive".into()));
        }
        Ok(())
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RUN_CONFIG_FILE), self.to_toml())?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key v parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
