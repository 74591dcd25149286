//! Binary checkpoint format.
//!
//! ```text
//! "UPOCKPT1"                 8 bytes
//! header length              u64, little endian
//! header                     UTF-8 JSON
//! parameters                 f64 little endian, header.param_count entries
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamVector};
use crate::error::{Result, UpoError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UPOCKPT1";
const MAGIC_FAMILY: &[u8] = b"UPOCKPT";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: serde_json::Value,
    layout: Layout,
    iteration: usize,
    seed: u64,
    param_count: usize,
}

/// Parameters plus the metadata needed to rebuild the owning model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: serde_json::Value,
    pub iteration: usize,
    pub seed: u64,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            architecture: self.architecture.clone(),
            layout: self.params.layout().clone(),
            iteration: self.iteration,
            seed: self.seed,
            param_count: self.params.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| UpoError::CorruptCheckpoint(msg);
        if bytes.len() < 16 {
            return Err(corrupt(format!("truncated header: {} bytes", bytes.len())));
        }
        let magic = &bytes[..8];
        if magic != CHECKPOINT_MAGIC {
            if magic.starts_with(MAGIC_FAMILY) {
                return Err(UpoError::CheckpointVersion {
                    found: String::from_utf8_lossy(magic).into_owned(),
                    expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                });
            }
            return Err(corrupt("bad magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if header_len > body.len() {
            return Err(corrupt(format!(
                "header claims {header_len} bytes but only {} remain",
                body.len()
            )));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        let data = &body[header_len..];
        if data.len() != header.param_count * 8 {
            return Err(corrupt(format!(
                "parameter block holds {} bytes, expected {}",
                data.len(),
                header.param_count * 8
            )));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params =
            ParamVector::from_values(header.layout, values).map_err(|e| corrupt(format!("invalid parameters: {e}")))?;
        Ok(Self {
            architecture: header.architecture,
            iteration: header.iteration,
            seed: header.seed,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| UpoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| UpoError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            UpoError::CorruptCheckpoint(msg) => UpoError::CorruptCheckpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
