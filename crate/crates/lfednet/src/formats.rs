//! JSON documents: system description, training configuration and the model bundle.

use std::path::Path;

use lfednet_core::data::NormStats;
use lfednet_core::grid::{validate_system, SystemConfig, SystemDocument};
use lfednet_core::net::{BatchStats, NetConfig, NetworkParams};
use lfednet_core::train::{TrainingConfig, TrainingLog};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fsio::read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn read_system(path: &Path) -> Result<SystemConfig> {
    let doc: SystemDocument = read_json(path)?;
    Ok(validate_system(doc)?)
}

/// A missing path gives the defaults.
pub fn read_training_config(path: Option<&Path>) -> Result<TrainingConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => TrainingConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrained,
    TaskTrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to reproduce a trained forecaster's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub stage: Stage,
    pub net: NetConfig,
    pub tensors: Vec<TensorRecord>,
    pub bn_running_mean: Vec<Vec<f64>>,
    pub bn_running_var: Vec<Vec<f64>>,
    pub norm_stats: NormStats,
    /// Per-hour forecast variance in normalized units.
    pub sigma2: Vec<f64>,
    pub training: TrainingConfig,
    /// Seed of the train/validation shuffle.
    pub split_seed: u64,
    pub best_epoch: Option<usize>,
    pub log: TrainingLog,
}

pub struct BundleParts<'a> {
    pub stage: Stage,
    pub params: &'a NetworkParams,
    pub norm_stats: &'a NormStats,
    pub sigma2: &'a [f64],
    pub training: &'a TrainingConfig,
    pub split_seed: u64,
    pub best_epoch: Option<usize>,
    pub log: &'a TrainingLog,
}

impl ModelBundle {
    pub fn new(parts: BundleParts<'_>) -> Self {
        let p = parts.params;
        let layers = p.config().hidden_layers;
        ModelBundle {
            schema_version: BUNDLE_SCHEMA_VERSION,
            stage: parts.stage,
            net: *p.config(),
            tensors: p
                .named_tensors()
                .into_iter()
                .map(|(name, shape, data)| TensorRecord { name, shape, data })
                .collect(),
            bn_running_mean: (0..layers).map(|l| p.running_mean(l).to_vec()).collect(),
            bn_running_var: (0..layers).map(|l| p.running_var(l).to_vec()).collect(),
            norm_stats: parts.norm_stats.clone(),
            sigma2: parts.sigma2.to_vec(),
            training: parts.training.clone(),
            split_seed: parts.split_seed,
            best_epoch: parts.best_epoch,
            log: parts.log.clone(),
        }
    }

    /// Rebuild the network parameters, checking every tensor against the layout.
    pub fn params(&self, path: &Path) -> Result<NetworkParams> {
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            message,
        };
        let mut params = NetworkParams::init(self.net, 0);
        let expected = params.named_tensors();
        if self.tensors.len() != expected.len() {
            return Err(schema(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            let t = self
                .tensors
                .iter()
                .find(|t| &t.name == name)
                .ok_or_else(|| schema(format!("missing tensor {name}")))?;
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(schema(format!("tensor {name}: shape {:?} does not match {shape:?}", t.shape)));
            }
            params.set_tensor(name, &t.data)?;
        }
        let layers = self.net.hidden_layers;
        let widths_ok = |v: &[Vec<f64>]| v.len() == layers && v.iter().all(|l| l.len() == self.net.hidden_width);
        if !widths_ok(&self.bn_running_mean) || !widths_ok(&self.bn_running_var) {
            return Err(schema("batch-norm running statistics do not match the network".into()));
        }
        params.set_running_stats(&BatchStats {
            mean: self.bn_running_mean.clone(),
            var: self.bn_running_var.clone(),
        });
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle: ModelBundle = read_json(path)?;
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            message,
        };
        if bundle.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(schema(format!(
                "schema version {} is not supported (expected {BUNDLE_SCHEMA_VERSION})",
                bundle.schema_version
            )));
        }
        if bundle.sigma2.len() != lfednet_core::HOURS_PER_DAY {
            return Err(schema(format!("sigma2 has {} entries", bundle.sigma2.len())));
        }
        if bundle.norm_stats.feature_mean.len() != bundle.net.input_dim
            || bundle.norm_stats.feature_std.len() != bundle.net.input_dim
        {
            return Err(schema("normalization statistics do not match the input width".into()));
        }
        Ok(bundle)
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_json(self)
    }
}
