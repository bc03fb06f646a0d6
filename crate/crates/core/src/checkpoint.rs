//! Model files.
//!
//! Layout (little endian):
//!
//! ```text
//! "VNCK" | u32 version | u64 header_len | header JSON
//!        | u64 n_params | n_params × f32 | 32-byte SHA-256 of all preceding bytes
//! ```
//!
//! The header holds the architecture, the training config, the iteration
//! count, the seed and the parameter layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ParamEntry, Regressor, RegressorSpec};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"VNCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spec: RegressorSpec,
    pub config: TrainConfig,
    pub iteration: u64,
    pub seed: u64,
    pub layout: Vec<ParamEntry>,
}

pub fn encode_checkpoint(
    model: &Regressor<f32>,
    config: &TrainConfig,
    iteration: u64,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        spec: model.spec().clone(),
        config: config.clone(),
        iteration,
        seed: config.seed,
        layout: model.layout().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let params = model.params();
    let mut buf = Vec::with_capacity(4 + 4 + 8 + json.len() + 8 + 4 * params.len() + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save_checkpoint(
    path: &Path,
    model: &Regressor<f32>,
    config: &TrainConfig,
    iteration: u64,
) -> Result<()> {
    fs::write(path, encode_checkpoint(model, config, iteration)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::CorruptCheckpoint(format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Regressor<f32>, CheckpointHeader)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = usize::try_from(r.u64()?)
        .map_err(|_| Error::CorruptCheckpoint("header length overflow".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let n = usize::try_from(r.u64()?)
        .map_err(|_| Error::CorruptCheckpoint("parameter count overflow".into()))?;
    let raw = r.take(
        n.checked_mul(4)
            .ok_or_else(|| Error::CorruptCheckpoint("parameter count overflow".into()))?,
    )?;
    let body_end = r.pos;
    let digest = r.take(32)?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let params: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = Regressor::<f32>::skeleton(&header.spec)
        .map_err(|e| Error::CorruptCheckpoint(format!("spec: {e}")))?;
    if model.layout() != header.layout.as_slice() {
        return Err(Error::CorruptCheckpoint(
            "parameter layout does not match the stored architecture".into(),
        ));
    }
    model
        .set_params(params)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok((model, header))
}

/// Returns the model, the config it was trained with, and its iteration.
pub fn load_checkpoint(path: &Path) -> Result<(Regressor<f32>, TrainConfig, u64)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (model, header) = decode_checkpoint(&fs::read(path)?)?;
    Ok((model, header.config, header.iteration))
}
