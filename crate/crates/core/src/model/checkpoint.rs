use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ParamStore;
use super::Model;
use crate::error::{Error, Result};
use crate::graph::JointGraph;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedArray<T> {
    name: String,
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile<T> {
    format_version: u32,
    precision: Precision,
    config: ModelConfig,
    graph: serde_json::Value,
    params: Vec<NamedArray<T>>,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    precision: Precision,
}

/// A saved model at either precision.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl Checkpoint {
    pub fn precision(&self) -> Precision {
        match self {
            Checkpoint::F32(_) => Precision::F32,
            Checkpoint::F64(_) => Precision::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Checkpoint::F32(m) => m.config(),
            Checkpoint::F64(m) => m.config(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        Ok(match header.precision {
            Precision::F32 => Checkpoint::F32(Model::from_checkpoint_json(text)?),
            Precision::F64 => Checkpoint::F64(Model::from_checkpoint_json(text)?),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl<T: Scalar> Model<T> {
    /// JSON with format version, precision, config, graph and every named
    /// parameter. Floats round-trip exactly.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            precision: T::PRECISION,
            config: ModelConfig {
                precision: T::PRECISION,
                ..self.config().clone()
            },
            graph: serde_json::from_str(&self.graph().to_json())?,
            params: self
                .params()
                .iter()
                .map(|(name, t)| NamedArray {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let file: CheckpointFile<T> = serde_json::from_str(text)?;
        if file.precision != T::PRECISION {
            return Err(Error::Format(format!(
                "checkpoint holds {}-bit parameters, requested {}-bit",
                file.precision.bits(),
                T::PRECISION.bits()
            )));
        }
        let graph = JointGraph::from_json(&file.graph.to_string())?;
        let mut params = ParamStore::new();
        for p in file.params {
            params.insert(p.name, Tensor::new(p.shape, p.data)?)?;
        }
        Model::from_parts(file.config, graph, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }
}
