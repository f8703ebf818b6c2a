//! Checkpoint format: magic "DVFFCKPT", schema version, JSON meta header,
//! then named parameter blocks stored as little-endian f64. Save/load is
//! bitwise exact (f32 models widen losslessly and narrow back exactly).

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::{FieldModel, ModelConfig};
use crate::numkit::Tensor;
use crate::real::Real;

pub const CKPT_MAGIC: &[u8; 8] = b"DVFFCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    precision: String,
    phase: String,
    step: u64,
}

/// A loaded checkpoint: meta plus named blocks.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub precision: String,
    pub phase: String,
    pub step: u64,
    pub blocks: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &FieldModel<T>,
    phase: &str,
    step: u64,
) -> Result<(), CheckpointError> {
    let meta = Meta {
        config: model.config,
        precision: T::NAME.into(),
        phase: phase.into(),
        step,
    };
    let meta_json = serde_json::to_vec(&meta)?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);

    let slots = model.param_slots();
    let params = model.params();
    buf.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    for ((name, _), tensor) in slots.iter().zip(params) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut cur = std::io::Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(CheckpointError::Format(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut cur)?;
    if version != CKPT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let meta_len = read_u32(&mut cur)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    cur.read_exact(&mut meta_bytes)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)?;

    let count = read_u32(&mut cur)? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| CheckpointError::Format("block name".into()))?;
        let ndim = read_u32(&mut cur)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut cur)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 8];
        cur.read_exact(&mut raw)?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        blocks.push((name, dims, data));
    }
    Ok(Checkpoint {
        config: meta.config,
        precision: meta.precision,
        phase: meta.phase,
        step: meta.step,
        blocks,
    })
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl Checkpoint {
    /// Rebuild a model; every parameter slot must be present with the right
    /// shape.
    pub fn to_model<T: Real>(&self) -> Result<FieldModel<T>, CheckpointError> {
        let mut model = FieldModel::<T>::new(self.config, 0);
        let slots = model.param_slots();
        if slots.len() != self.blocks.len() {
            return Err(CheckpointError::Format(format!(
                "expected {} blocks, found {}",
                slots.len(),
                self.blocks.len()
            )));
        }
        let mut params = model.params_mut();
        for (i, (name, _)) in slots.iter().enumerate() {
            let (bname, dims, data) = &self.blocks[i];
            if bname != name {
                return Err(CheckpointError::Format(format!(
                    "block {i}: expected {name}, found {bname}"
                )));
            }
            if params[i].shape() != dims.as_slice() {
                return Err(CheckpointError::Format(format!(
                    "block {name}: shape {:?} vs {:?}",
                    dims,
                    params[i].shape()
                )));
            }
            *params[i] = Tensor::new(dims, data.iter().map(|&v| T::of(v)).collect())
                .map_err(|e| CheckpointError::Format(e.to_string()))?;
        }
        Ok(model)
    }
}
