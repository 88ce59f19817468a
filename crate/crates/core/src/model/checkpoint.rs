use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FastGcrnnModel, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::{SamplerDist, SamplerMode};
use crate::ingest::Scaler;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "FGCRNN1";

/// A trained model plus what is needed to apply it to new flow data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FastGcrnnModel,
    pub scaler: Scaler,
    /// Node order the model was trained on.
    pub road_ids: Vec<String>,
    pub train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stored {
    model: ModelConfig,
    sampler: StoredSampler,
    train: Option<TrainConfig>,
    scaler: Scaler,
    road_ids: Vec<String>,
    params: Vec<NamedMatrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredSampler {
    mode: SamplerMode,
    t_per_layer: Vec<usize>,
    probs: Vec<f64>,
}

/// Row-major values.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let n = self.model.n_nodes();
        if self.road_ids.len() != n || self.scaler.n() != n {
            return Err(Error::Checkpoint(format!(
                "model covers {n} nodes but {} road ids and {} scaler rows were given",
                self.road_ids.len(),
                self.scaler.n()
            )));
        }
        let m = &self.model;
        let params = m
            .param_names()
            .into_iter()
            .zip(m.params())
            .map(|(name, p)| NamedMatrix {
                name,
                rows: p.value.rows(),
                cols: p.value.cols(),
                data: p.value.data().to_vec(),
            })
            .collect();
        let stored = Stored {
            model: m.config.clone(),
            sampler: StoredSampler {
                mode: m.sampler.mode(),
                t_per_layer: m.sampler.t_per_layer().to_vec(),
                probs: m.sampler.probs().to_vec(),
            },
            train: self.train.clone(),
            scaler: self.scaler.clone(),
            road_ids: self.road_ids.clone(),
            params,
        };
        let json =
            serde_json::to_string_pretty(&stored).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(format!("{CHECKPOINT_MAGIC}\n{json}\n"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (magic, body) = text.split_once('\n').unwrap_or((text, ""));
        if magic.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "expected header {CHECKPOINT_MAGIC}, found {:?}",
                magic.chars().take(16).collect::<String>()
            )));
        }
        let stored: Stored =
            serde_json::from_str(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let s = stored.sampler;
        let sampler = SamplerDist::new(s.probs, s.mode, s.t_per_layer)?;
        let mut model = FastGcrnnModel::zeros(stored.model, sampler)?;
        let names = model.param_names();
        if names.len() != stored.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter matrices, found {}",
                names.len(),
                stored.params.len()
            )));
        }
        for ((name, p), nm) in names.iter().zip(model.params_mut()).zip(stored.params) {
            if *name != nm.name {
                return Err(Error::Checkpoint(format!(
                    "expected parameter {name}, found {}",
                    nm.name
                )));
            }
            if (nm.rows, nm.cols) != p.value.shape() || nm.data.len() != nm.rows * nm.cols {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} is {}x{} with {} values, model expects {:?}",
                    nm.rows,
                    nm.cols,
                    nm.data.len(),
                    p.value.shape()
                )));
            }
            if nm.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has non-finite values"
                )));
            }
            p.value.data_mut().copy_from_slice(&nm.data);
        }
        let n = model.n_nodes();
        if stored.road_ids.len() != n || stored.scaler.n() != n {
            return Err(Error::Checkpoint(format!(
                "sampler covers {n} nodes, road ids {}, scaler rows {}",
                stored.road_ids.len(),
                stored.scaler.n()
            )));
        }
        Ok(Self {
            model,
            scaler: stored.scaler,
            road_ids: stored.road_ids,
            train: stored.train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
