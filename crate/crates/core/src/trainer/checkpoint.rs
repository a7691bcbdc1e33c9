//! Binary checkpoint container.
//!
//! Layout (little-endian): 8-byte magic `FVATCKPT`, `u32` format version,
//! `u32` header length, UTF-8 JSON header, `u64` parameter count, then the
//! parameters as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flow::{FlowArchitecture, FlowModel};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"FVATCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header stored in front of the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: FlowArchitecture,
    /// Snapshot of the run configuration, if any.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn save_checkpoint(model: &FlowModel, config: Option<serde_json::Value>, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader {
        architecture: model.architecture().clone(),
        config,
    })?;
    let mut buf = Vec::with_capacity(24 + header.len() + 8 * model.params().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(FlowModel, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(at..at + n)
            .ok_or_else(|| corrupt(path, format!("truncated at byte {at}")))
    };
    if take(0, 8)? != MAGIC {
        return Err(corrupt(path, "not a flow checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(path, format!("format version {version}, this build reads {CHECKPOINT_VERSION}")));
    }
    let hlen = u32::from_le_bytes(take(12, 4)?.try_into().expect("4 bytes")) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(take(16, hlen)?).map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    let at = 16 + hlen;
    let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
    let payload = take(at + 8, count.checked_mul(8).ok_or_else(|| corrupt(path, "bad parameter count"))?)?;
    if bytes.len() != at + 8 + 8 * count {
        return Err(corrupt(path, "trailing bytes after parameters"));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = FlowModel::zeros(header.architecture.clone())?;
    if params.len() != model.params().len() {
        return Err(corrupt(
            path,
            format!("{} parameters stored, architecture needs {}", params.len(), model.params().len()),
        ));
    }
    model.set_params(&params)?;
    Ok((model, header))
}

/// Loads a checkpoint and checks it was trained for a `dim`-dimensional
/// target.
pub fn load_checkpoint_for(path: &Path, dim: usize) -> Result<FlowModel> {
    let (model, _) = load_checkpoint(path)?;
    if model.dim() != dim {
        return Err(corrupt(path, format!("flow has dim {}, target has dim {dim}", model.dim())));
    }
    Ok(model)
}
