//! Checkpoint serialization: JSON spec + provenance beside a flat binary
//! tensor archive with a name -> (shape, dtype, offset) index. Round trips
//! are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

use super::float::Scalar;
use super::resunet::{AttentionResUNet, NetworkSpec};

/// Where a set of weights came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_id: String,
    pub train_dataset_id: String,
    pub epoch: usize,
    pub val_mcc: Option<f64>,
    pub parent_checkpoint_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset into the archive.
    offset: usize,
    /// Element count.
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    spec: NetworkSpec,
    provenance: Provenance,
    tensors: Vec<TensorIndexEntry>,
}

/// Architecture + named parameters + provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub provenance: Provenance,
}

/// FNV-1a over the parameter bytes: a stable, dependency-free content id.
pub fn content_id(params: &[(String, Vec<usize>, Vec<f32>)], salt: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for b in salt.bytes() {
        eat(b);
    }
    for (name, _, values) in params {
        for b in name.bytes() {
            eat(b);
        }
        for v in values {
            for b in v.to_le_bytes() {
                eat(b);
            }
        }
    }
    format!("{h:016x}")
}

impl Checkpoint {
    /// Snapshot a network's parameters with fresh provenance; the
    /// checkpoint id is derived from the content.
    pub fn from_network(
        net: &AttentionResUNet<f32>,
        train_dataset_id: &str,
        epoch: usize,
        val_mcc: Option<f64>,
        parent: Option<&str>,
    ) -> Self {
        let params = net.export_params();
        let checkpoint_id = content_id(&params, train_dataset_id);
        Self {
            spec: net.spec,
            params,
            provenance: Provenance {
                checkpoint_id,
                train_dataset_id: train_dataset_id.to_string(),
                epoch,
                val_mcc,
                parent_checkpoint_id: parent.map(|s| s.to_string()),
            },
        }
    }

    /// Rebuild the network these weights belong to.
    pub fn to_network(&self) -> Result<AttentionResUNet<f32>> {
        let mut net = AttentionResUNet::build(&self.spec, 0)?;
        net.import_params(&self.params)?;
        Ok(net)
    }

    /// Write `<dir>/network.json` + `<dir>/params.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob: Vec<u8> = Vec::new();
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, shape, values) in &self.params {
            tensors.push(TensorIndexEntry {
                name: name.clone(),
                shape: shape.clone(),
                dtype: f32::DTYPE.to_string(),
                offset: blob.len(),
                len: values.len(),
            });
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            spec: self.spec,
            provenance: self.provenance.clone(),
            tensors,
        };
        fs::write(dir.join("network.json"), serde_json::to_vec_pretty(&manifest)?)?;
        fs::write(dir.join("params.bin"), &blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_slice(&fs::read(dir.join("network.json"))?)?;
        let blob = fs::read(dir.join("params.bin"))?;
        let mut params = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            if t.dtype != f32::DTYPE {
                return Err(FieldkitError::Format(format!(
                    "tensor {} has dtype {}, expected f32",
                    t.name, t.dtype
                )));
            }
            let start = t.offset;
            let end = start + t.len * 4;
            if end > blob.len() {
                return Err(FieldkitError::Format(format!(
                    "tensor {} overruns the archive",
                    t.name
                )));
            }
            let values: Vec<f32> = blob[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            params.push((t.name.clone(), t.shape.clone(), values));
        }
        Ok(Self { spec: manifest.spec, params, provenance: manifest.provenance })
    }
}
