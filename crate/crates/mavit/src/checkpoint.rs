//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HCADCKPT"
//! version  u32      FORMAT_VERSION
//! hlen     u64      length of the header
//! header   hlen     UTF-8 JSON: CheckpointHeader
//! tensors           values of each tensor listed in the header, in order,
//!                   as f32 or f64 according to header.scalar
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use histocad_core::{Scalar, ScalarKind, CLASS_LIST_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::MavitError;
use crate::model::Mavit;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HCADCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub classes: Vec<String>,
    pub class_list_version: u32,
    pub parameter_count: usize,
    pub scalar: ScalarKind,
    pub tensors: Vec<TensorEntry>,
}

/// Short content hash used to identify a checkpoint (first 16 hex digits of
/// its SHA-256).
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

impl<T: Scalar> Mavit<T> {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            config: self.config().clone(),
            classes: self.classes().to_vec(),
            class_list_version: CLASS_LIST_VERSION,
            parameter_count: self.parameter_count(),
            scalar: T::KIND,
            tensors: self
                .params()
                .iter()
                .map(|(name, t)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec() })
                .collect(),
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>, MavitError> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| MavitError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + header.len() + self.parameter_count() * T::KIND.byte_width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params().iter() {
            for &v in t.data() {
                match T::KIND {
                    ScalarKind::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                    ScalarKind::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    /// Writes atomically (temp file then rename) and returns the checkpoint id.
    pub fn save(&self, path: &Path) -> Result<String, MavitError> {
        let bytes = self.to_checkpoint_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(checkpoint_id(&bytes))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, MavitError> {
        let header = read_header(bytes)?;
        if header.scalar != T::KIND {
            return Err(MavitError::Checkpoint(format!(
                "checkpoint stores {:?} values, model uses {:?}",
                header.scalar,
                T::KIND
            )));
        }
        let mut model = Mavit::<T>::new(header.config.clone(), 0)?;
        model.set_classes(header.classes.clone())?;
        let expected: Vec<TensorEntry> = model.header().tensors;
        if expected != header.tensors {
            return Err(MavitError::Checkpoint(
                "tensor names or shapes do not match the configured architecture".into(),
            ));
        }
        let mut offset = data_offset(bytes)?;
        let width = T::KIND.byte_width();
        for t in model.params_mut().tensors_mut() {
            let n = t.numel();
            let end = offset + n * width;
            let chunk = bytes
                .get(offset..end)
                .ok_or_else(|| MavitError::Checkpoint("truncated tensor data".into()))?;
            for (dst, raw) in t.data_mut().iter_mut().zip(chunk.chunks_exact(width)) {
                *dst = match T::KIND {
                    ScalarKind::F32 => T::cast(f32::from_le_bytes(raw.try_into().unwrap()) as f64),
                    ScalarKind::F64 => T::cast(f64::from_le_bytes(raw.try_into().unwrap())),
                };
            }
            offset = end;
        }
        if offset != bytes.len() {
            return Err(MavitError::Checkpoint(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, MavitError> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }

    /// Replaces all parameter values; shapes must match.
    pub fn load_parameters(&mut self, tensors: &[Tensor<T>]) -> Result<(), MavitError> {
        let params = self.params_mut().tensors_mut();
        if params.len() != tensors.len() || params.iter().zip(tensors).any(|(a, b)| a.shape() != b.shape()) {
            return Err(MavitError::Shape("parameter set does not match the model".into()));
        }
        params.clone_from_slice(tensors);
        Ok(())
    }
}

fn data_offset(bytes: &[u8]) -> Result<usize, MavitError> {
    let hlen = u64::from_le_bytes(
        bytes
            .get(12..20)
            .ok_or_else(|| MavitError::Checkpoint("truncated preamble".into()))?
            .try_into()
            .unwrap(),
    ) as usize;
    Ok(20 + hlen)
}

/// Parses and version-checks the header without touching tensor data.
pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader, MavitError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(MavitError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(MavitError::Checkpoint(format!("unsupported format version {version}")));
    }
    let end = data_offset(bytes)?;
    let raw = bytes
        .get(20..end)
        .ok_or_else(|| MavitError::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(raw).map_err(|e| MavitError::Checkpoint(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(MavitError::Checkpoint("header version disagrees with preamble".into()));
    }
    Ok(header)
}
