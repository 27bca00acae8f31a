//! TOML run configuration: dataset, network geometry and training settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_index, split, DatasetIndex};
use crate::error::{Error, Result};
use crate::networks::NetConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Image directory.
    pub root: PathBuf,
    /// Attribute file; relative paths resolve against `root`.
    #[serde(default = "default_attr_file")]
    pub attr_file: PathBuf,
    pub attributes: Vec<String>,
    /// Images held out for evaluation.
    #[serde(default)]
    pub n_test: usize,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_attr_file() -> PathBuf {
    PathBuf::from("list_attr_celeba.txt")
}

/// Network geometry; the attribute count comes from the data section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub image_size: usize,
    pub patch_size: usize,
    pub base_channels: usize,
    pub n_res_blocks: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let n = NetConfig::new(128, 52, 0);
        Self {
            image_size: n.image_size,
            patch_size: n.patch_size,
            base_channels: n.base_channels,
            n_res_blocks: n.n_res_blocks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative data root resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        if cfg.data.root.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.root = dir.join(&cfg.data.root);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            image_size: self.net.image_size,
            patch_size: self.net.patch_size,
            n_attributes: self.data.attributes.len(),
            base_channels: self.net.base_channels,
            n_res_blocks: self.net.n_res_blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net().validate()?;
        self.train.validate()
    }

    pub fn attr_path(&self) -> PathBuf {
        self.data.root.join(&self.data.attr_file)
    }

    /// Loads the index and applies the configured split: `(train, test)`.
    pub fn load_split(&self) -> Result<(DatasetIndex, DatasetIndex)> {
        if !self.data.root.is_dir() {
            return Err(Error::Config(format!(
                "data.root {} is not a directory",
                self.data.root.display()
            )));
        }
        let index = load_index(&self.data.root, &self.attr_path(), &self.data.attributes)?;
        split(&index, self.data.n_test, self.data.split_seed)
    }
}
