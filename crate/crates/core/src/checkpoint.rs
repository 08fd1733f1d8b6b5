//! Binary checkpoints.
//!
//! Layout: an 8-byte little-endian header length, the JSON header, then every
//! tensor as little-endian `f64` in row-major order. Tensor offsets in the
//! header are byte offsets from the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{AlterModel, ModelConfig};

pub const CHECKPOINT_VERSION: &str = "alter-ckpt-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: String,
    pub model: ModelConfig,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub init_seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(model: &AlterModel, init_seed: u64) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(model.store().len());
    let mut offset = 0u64;
    for p in model.store().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            offset,
        });
        offset += 8 * p.value.len() as u64;
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION.to_string(),
        model: model.config().clone(),
        num_nodes: model.num_nodes(),
        feature_dim: model.feature_dim(),
        init_seed,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.store().iter() {
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, AlterModel)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| bad("truncated header length"))?
        .try_into()
        .unwrap();
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {:?}", header.version)));
    }
    let data = &bytes[8 + header_len..];

    let mut model = AlterModel::new(
        header.model.clone(),
        header.num_nodes,
        header.feature_dim,
        header.init_seed,
    )?;
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let start = t.offset as usize;
        let end = start + 8 * t.rows * t.cols;
        let raw = data
            .get(start..end)
            .ok_or_else(|| bad(&format!("tensor {} runs past end of file", t.name)))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(t.name.clone(), Matrix::new(t.rows, t.cols, values)?)?;
    }
    model.load_values(&store)?;
    Ok((header, model))
}

pub fn save_checkpoint(path: &Path, model: &AlterModel, init_seed: u64) -> Result<()> {
    let bytes = encode_checkpoint(model, init_seed)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, AlterModel)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReadoutKind;

    fn small() -> ModelConfig {
        ModelConfig {
            k_hops: 4,
            k_prime: 3,
            d_model: 8,
            layers: 1,
            heads: 2,
            clusters: 2,
            mlp_hidden: 5,
            readout: ReadoutKind::Clustering,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut model = AlterModel::new(small(), 5, 5, 3).unwrap();
        let id = model.store().id("head.fc2.bias").unwrap();
        model.store_mut().get_mut(id).value = Matrix::row_vector(&[-0.0, 1e-300]);
        let bytes = encode_checkpoint(&model, 3).unwrap();
        let (header, back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(header.version, CHECKPOINT_VERSION);
        assert_eq!(header.model, small());
        for (a, b) in model.store().iter().zip(back.store().iter()) {
            assert_eq!(a.name, b.name);
            let ab: Vec<u64> = a.value.as_slice().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(encode_checkpoint(&back, 3).unwrap(), bytes);
    }

    #[test]
    fn header_offsets_are_contiguous() {
        let model = AlterModel::new(small(), 5, 5, 0).unwrap();
        let bytes = encode_checkpoint(&model, 0).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        let mut expected = 0u64;
        for t in &header.tensors {
            assert_eq!(t.offset, expected);
            expected += 8 * (t.rows * t.cols) as u64;
        }
        assert_eq!(bytes.len(), 8 + n + expected as usize);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = AlterModel::new(small(), 5, 5, 0).unwrap();
        let bytes = encode_checkpoint(&model, 0).unwrap();
        assert!(decode_checkpoint(&bytes[..4]).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        let at = wrong.windows(12).position(|w| w == b"alter-ckpt-1").unwrap();
        wrong[at + 11] = b'9';
        assert!(matches!(decode_checkpoint(&wrong), Err(Error::Checkpoint(_))));
    }
}
