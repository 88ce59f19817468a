use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::{BenchOptions, SynthConfig};
use crate::ingest::{Interval, WindowSpec};
use crate::model::{ModelConfig, TrainConfig};

/// Contents of a `--config` TOML file. Command-line flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub records: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub interval: Interval,
    /// First bucket start, `YYYY-MM-DD HH:MM:SS`. Defaults to the earliest
    /// record rounded down to a whole interval since midnight.
    pub begin: Option<String>,
    /// Horizon `T`. Defaults to just past the latest record.
    pub buckets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub stride: usize,
    pub normalize: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            normalize: true,
        }
    }
}

impl WindowConfig {
    pub fn spec(&self, model: &ModelConfig) -> WindowSpec {
        WindowSpec {
            d_in: model.d_in,
            d_out: model.d_out,
            stride: self.stride,
            normalize: self.normalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub t_l: usize,
    pub reps: usize,
    pub options: BenchOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 4000],
            t_l: 5,
            reps: 5,
            options: BenchOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unprintable config: {e}\n"))
    }
}
