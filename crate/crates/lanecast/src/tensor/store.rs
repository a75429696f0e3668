//! Named parameter store and the versioned checkpoint file format.
//!
//! Checkpoints are JSON: `{"version":1,"epoch":E,"params":[{"name","shape",
//! "data"},...],"adam":{...}}`. Serialization order follows parameter
//! creation order, so identical runs produce byte-identical files.

use super::array::Array;
use super::optim::AdamState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("checkpoint parse failure: {0}")]
    Parse(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch for {name}: file {file:?}, model {model:?}")]
    ShapeMismatch {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
}

/// Index of a parameter within a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(|a| a.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Fresh zero gradients, one per parameter.
    pub fn zero_grads(&self) -> Vec<Array> {
        self.values.iter().map(|a| Array::zeros(a.shape())).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedArray {
    name: String,
    array: Array,
}

/// A serializable training snapshot.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    pub epoch: u32,
    params: Vec<NamedArray>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(store: &ParamStore, epoch: u32, adam: Option<AdamState>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            params: store
                .names
                .iter()
                .zip(&store.values)
                .map(|(name, array)| NamedArray {
                    name: name.clone(),
                    array: array.clone(),
                })
                .collect(),
            adam,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, StoreError> {
        let ckpt: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| StoreError::Parse(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(StoreError::Version {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ckpt)
    }

    /// Copy the checkpoint values into a store built with the same layout.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), StoreError> {
        for (i, name) in store.names.clone().iter().enumerate() {
            let entry = self
                .params
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| StoreError::MissingParam(name.clone()))?;
            if entry.array.shape() != store.values[i].shape() {
                return Err(StoreError::ShapeMismatch {
                    name: name.clone(),
                    file: entry.array.shape().to_vec(),
                    model: store.values[i].shape().to_vec(),
                });
            }
            store.values[i] = entry.array.clone();
        }
        Ok(())
    }
}
