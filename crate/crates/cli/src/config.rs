//! Run configuration: one TOML document, every key optional.
//!
//! ```toml
//! output_dir = "run"
//! [input]
//! kind = "synthetic"   # or "mrc" / "dataset" with `path = "..."`
//! N = 12000
//! [model]
//! M = 3
//! K_total = 60
//! [sort]
//! target_keep = 10000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subsort_core::io::features::FeatureConfig;
use subsort_core::io::synthetic::SyntheticSpec;
use subsort_core::{EmConfig, SortConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    /// MRC/MRCS stack, turned into vectors by the `feature` settings.
    Mrc { path: PathBuf },
    /// Binary dataset file as written by `simulate`.
    Dataset { path: PathBuf },
    /// Generated in memory.
    Synthetic(SyntheticSpec),
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "M")]
    pub components: usize,
    #[serde(rename = "K_total")]
    pub total_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            components: 3,
            total_dim: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSource,
    pub feature: FeatureConfig,
    pub model: ModelConfig,
    pub em: EmConfig,
    pub sort: SortConfig,
    /// Rank by the global-PCA energy ratio instead of the subspace mixture.
    pub baseline: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: InputSource::default(),
            feature: FeatureConfig::default(),
            model: ModelConfig::default(),
            em: EmConfig::default(),
            sort: SortConfig::default(),
            baseline: false,
            output_dir: PathBuf::from("subsort-out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.model.components;
        let k_total = self.model.total_dim;
        if m == 0 || k_total == 0 || k_total % m != 0 {
            return Err(CliError::Usage(format!(
                "K_total = {k_total} must be a positive multiple of M = {m}"
            )));
        }
        self.em.validate(m)?;
        if let InputSource::Synthetic(spec) = &self.input {
            spec.validate()?;
        }
        Ok(())
    }
}
