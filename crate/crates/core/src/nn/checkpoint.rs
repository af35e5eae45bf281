//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "IPCNNCKP"
//! 8       4     format version, u32 LE (currently 1)
//! 12      8     header length H, u64 LE
//! 20      H     UTF-8 JSON header: network shape, training metadata, tensor list
//! 20+H    8·N   parameters as f64 LE, tensors in header order, row-major
//! end−32  32    SHA-256 of all preceding bytes
//! ```
//!
//! Tensors are `conv1.weight, conv1.bias, conv2.weight, conv2.bias,
//! fc1.weight, fc1.bias, fc2.weight, fc2.bias`. Conv weights are stored as
//! the `c_out × (c_in·σ²)` GeMM matrix with column index `u·σ² + i·σ + j`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Network, NetworkShape};
use super::train::TrainingMetadata;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IPCNNCKP";
pub const FORMAT_VERSION: u32 = 1;
const TENSOR_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

/// Trained network plus how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: NetworkShape,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

impl TrainedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.network.params();
        let mut tensors = Vec::new();
        for (k, (w, b)) in params.iter().enumerate() {
            tensors.push(TensorEntry {
                name: TENSOR_NAMES[2 * k].into(),
                shape: w.shape().to_vec(),
            });
            tensors.push(TensorEntry {
                name: TENSOR_NAMES[2 * k + 1].into(),
                shape: b.shape().to_vec(),
            });
        }
        let header = serde_json::to_vec(&Header {
            shape: self.network.shape,
            metadata: self.metadata.clone(),
            tensors,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + header.len() + 8 * self.network.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (w, b) in params {
            for v in w.iter().chain(b.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic or too short)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| bad(format!("header: {e}")))?;
        let mut network = Network::init(header.shape, 0)?;
        let mut values = body[header_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if (body.len() - header_end) % 8 != 0 {
            return Err(bad("parameter payload is not a whole number of f64".into()));
        }
        if header.tensors.len() != TENSOR_NAMES.len() {
            return Err(bad(format!(
                "expected 8 tensors, header lists {}",
                header.tensors.len()
            )));
        }
        let mut entries = header.tensors.iter();
        for (w, b) in network.params_mut() {
            for (target, entry) in [
                (w.as_slice_mut(), entries.next()),
                (b.as_slice_mut(), entries.next()),
            ] {
                let entry = entry.expect("length checked");
                let target = target.expect("owned parameters are contiguous");
                if entry.shape.iter().product::<usize>() != target.len() {
                    return Err(bad(format!(
                        "tensor {} has shape {:?}, network needs {} values",
                        entry.name,
                        entry.shape,
                        target.len()
                    )));
                }
                for t in target.iter_mut() {
                    *t = values
                        .next()
                        .ok_or_else(|| bad(format!("payload ends inside {}", entry.name)))?;
                }
            }
        }
        if values.next().is_some() {
            return Err(bad("trailing parameter data".into()));
        }
        Ok(Self {
            network,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainedModel {
        let shape = NetworkShape {
            input_width: 10,
            conv1_channels: 2,
            conv2_channels: 3,
            hidden: 4,
            ..NetworkShape::default()
        };
        TrainedModel {
            network: Network::init(shape, 11).unwrap(),
            metadata: TrainingMetadata {
                seed: 11,
                final_test_accuracy: Some(0.25),
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let m = tiny();
        let bytes = m.to_bytes().unwrap();
        let back = TrainedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash().unwrap(), m.hash().unwrap());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = tiny().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(matches!(
            TrainedModel::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
        assert!(TrainedModel::from_bytes(b"nope").is_err());
    }
}
