use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochStats, TrainConfig};
use crate::dataset::{LabelMap, SplitSpec};
use crate::error::{CheckpointError, Error, Result};
use crate::model::ModelSpec;
use crate::param::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CSAB";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild and describe a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamSet<f32>,
    pub label_map: LabelMap,
    pub train_config: TrainConfig,
    pub split: Option<SplitSpec>,
    pub history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    label_map: LabelMap,
    train_config: TrainConfig,
    split: Option<SplitSpec>,
    history: Vec<EpochStats>,
}

/// Byte layout: magic, `u32` version, `u32` header length, JSON header,
/// `u32` tensor count, then per tensor `u32` name length, name, `u32` rank,
/// `u64` dims and `f32` values. Integers and floats are little-endian.
pub fn encode(cp: &Checkpoint) -> Result<Vec<u8>> {
    cp.spec.check_params(&cp.params)?;
    let header = Header {
        spec: cp.spec.clone(),
        label_map: cp.label_map.clone(),
        train_config: cp.train_config.clone(),
        split: cp.split.clone(),
        history: cp.history.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(cp.params.len() as u32).to_le_bytes());
    for slot in cp.spec.param_layout() {
        let p = cp.params.by_name(&slot.name).expect("checked above");
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic.try_into().unwrap()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.spec.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Header("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("tensor dims")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated("tensor data"))?;
        let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated("tensor data"))?, "tensor data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }

    let layout = header.spec.param_layout();
    if tensors.len() != layout.len() {
        return Err(CheckpointError::Header(format!(
            "{} tensors stored, model has {} parameters",
            tensors.len(),
            layout.len()
        )));
    }
    let mut params = ParamSet::new();
    for (slot, (name, shape, data)) in layout.into_iter().zip(tensors) {
        if slot.name != name {
            return Err(CheckpointError::Header(format!("expected tensor `{}`, found `{name}`", slot.name)));
        }
        if slot.shape != shape {
            return Err(CheckpointError::TensorSizeMismatch {
                name,
                found: shape,
                expected: slot.shape,
            });
        }
        let value = Tensor::new(shape, data).map_err(|e| CheckpointError::Header(e.to_string()))?;
        params.insert(name, value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    }
    Ok(Checkpoint {
        spec: header.spec,
        params,
        label_map: header.label_map,
        train_config: header.train_config,
        split: header.split,
        history: header.history,
    })
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(cp)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
