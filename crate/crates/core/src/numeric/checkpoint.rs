//! Versioned JSON storage for named parameter tensors.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheckpoint {
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl TensorCheckpoint {
    pub fn from_tensors<'a>(named: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Self {
        let tensors = named
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        TensorCheckpoint {
            version: CHECKPOINT_VERSION,
            tensors,
        }
    }

    /// Restores tensors in the expected order, refusing any version, name or
    /// shape difference.
    pub fn restore(&self, expected: &[(String, Vec<usize>)]) -> Result<Vec<Tensor>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        self.tensors
            .iter()
            .zip(expected)
            .map(|(t, (name, shape))| {
                if &t.name != name || &t.shape != shape {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} {:?} does not match expected {} {:?}",
                        t.name, t.shape, name, shape
                    )));
                }
                Tensor::new(t.shape.clone(), t.values.clone())
                    .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))
            })
            .collect()
    }
}
