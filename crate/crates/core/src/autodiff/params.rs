use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    params: Vec<CheckpointEntry>,
}

const CHECKPOINT_FORMAT: &str = "geoworld-params-v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Serialize to JSON keyed by parameter name with shape headers.
    /// Floats are written in shortest round-trip form, so loading is bit-exact.
    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params: self
                .iter()
                .map(|(name, t)| CheckpointEntry {
                    name: name.to_string(),
                    shape: t.shape(),
                    values: t.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", ck.format)));
        }
        let mut store = ParamStore::new();
        for e in ck.params {
            let t = Tensor::new(e.shape[0], e.shape[1], e.values)?;
            store.insert(e.name, t)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Copy values from `other`, matching by name and shape.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{name}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}`: shape {:?} in checkpoint, {:?} expected",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }
}
