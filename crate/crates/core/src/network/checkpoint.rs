//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "DPCOCKPT"
//! version  u32       1
//! digest   32 bytes  SHA-256 of the model config text
//! config   u32 length, then UTF-8 model config text
//! count    u32 number of blobs
//! blob     u16 name length, name bytes,
//!          u8 dtype (1 = f32, 2 = f64),
//!          u8 rank, rank × u32 dims,
//!          values in declaration order
//! ```
//!
//! Model parameters are written as f32 blobs in declaration order. Training
//! state (optimizer moments, counters) uses f64 blobs under a `train.` or
//! `adam.` prefix so resumed runs continue exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{DeepPcoModel, ModelConfig};
use super::tensor::Tensor;
use super::NetworkError;

pub const MAGIC: &[u8; 8] = b"DPCOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub config_text: String,
    pub blobs: Vec<Blob>,
}

fn corrupt(msg: impl Into<String>) -> NetworkError {
    NetworkError::Checkpoint(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| corrupt("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetworkError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetworkError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    /// Parameters of `model` as f32 blobs.
    pub fn from_model(model: &DeepPcoModel) -> Self {
        let blobs = model
            .params()
            .iter()
            .map(|(_, p)| Blob {
                name: p.name.clone(),
                dtype: DType::F32,
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.data().to_vec(),
            })
            .collect();
        Self {
            digest: model.config().digest(),
            config_text: model.config().to_text(),
            blobs,
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        self.blobs.push(Blob {
            name: name.into(),
            dtype: DType::F64,
            shape,
            values,
        });
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NetworkError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        let cfg = self.config_text.as_bytes();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            let name = b.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| corrupt(format!("blob name too long: {}", b.name)))?;
            if b.shape.iter().product::<usize>() != b.values.len() {
                return Err(corrupt(format!(
                    "blob {} shape does not match its values",
                    b.name
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(b.dtype.tag());
            out.push(u8::try_from(b.shape.len()).map_err(|_| corrupt("blob rank too large"))?);
            for d in &b.shape {
                out.extend_from_slice(
                    &u32::try_from(*d)
                        .map_err(|_| corrupt("blob dimension too large"))?
                        .to_le_bytes(),
                );
            }
            match b.dtype {
                DType::F32 => b
                    .values
                    .iter()
                    .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
                DType::F64 => b
                    .values
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, NetworkError> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let digest: [u8; 32] = c.take(32)?.try_into().unwrap();
        let cfg_len = c.u32()? as usize;
        let config_text = String::from_utf8(c.take(cfg_len)?.to_vec())
            .map_err(|_| corrupt("config text is not UTF-8"))?;
        let count = c.u32()?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let name_len = c.u16()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec())
                .map_err(|_| corrupt("blob name is not UTF-8"))?;
            let dtype = DType::from_tag(c.u8()?)
                .ok_or_else(|| corrupt(format!("blob {name}: unknown dtype")))?;
            let rank = c.u8()? as usize;
            let shape = (0..rank)
                .map(|_| c.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let values = match dtype {
                DType::F32 => c
                    .take(n.checked_mul(4).ok_or_else(|| corrupt("blob too large"))?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => c
                    .take(n.checked_mul(8).ok_or_else(|| corrupt("blob too large"))?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            };
            blobs.push(Blob {
                name,
                dtype,
                shape,
                values,
            });
        }
        if c.pos != buf.len() {
            return Err(corrupt("trailing bytes after last blob"));
        }
        Ok(Self {
            digest,
            config_text,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), NetworkError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, NetworkError> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Whether the stored digest matches the stored config text.
    pub fn is_self_consistent(&self) -> bool {
        let d: [u8; 32] = Sha256::digest(self.config_text.as_bytes()).into();
        d == self.digest
    }

    /// Copies parameters into `model`, which must have the same config digest.
    pub fn restore_into(&self, model: &mut DeepPcoModel) -> Result<(), NetworkError> {
        let expected = model.config().digest();
        if expected != self.digest {
            return Err(NetworkError::DigestMismatch {
                expected: hex::encode(expected),
                found: hex::encode(self.digest),
            });
        }
        let ids: Vec<_> = model
            .params()
            .iter()
            .map(|(id, p)| (id, p.name.clone()))
            .collect();
        for (id, name) in ids {
            let blob = self
                .blob(&name)
                .ok_or_else(|| corrupt(format!("missing parameter {name}")))?;
            let param = model.params_mut().get_mut(id);
            if blob.shape != param.tensor.shape() {
                return Err(NetworkError::ShapeMismatch(format!(
                    "parameter {name}: {:?} vs {:?}",
                    blob.shape,
                    param.tensor.shape()
                )));
            }
            param.tensor.data_mut().copy_from_slice(&blob.values);
        }
        Ok(())
    }

    /// Rebuilds the model described by the checkpoint and loads its parameters.
    pub fn to_model(&self) -> Result<DeepPcoModel, NetworkError> {
        if !self.is_self_consistent() {
            return Err(corrupt("config digest does not match config text"));
        }
        let config = ModelConfig::from_text(&self.config_text)?;
        let mut model = DeepPcoModel::new(config, 0)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }
}

/// FlowNetS layer names mapped onto the orientation conv stack.
pub const FLOWNET_LAYER_NAMES: [&str; 9] = [
    "conv1", "conv2", "conv3", "conv3_1", "conv4", "conv4_1", "conv5", "conv5_1", "conv6",
];

/// Weight import hook for pretrained FlowNetS convolutions.
///
/// `source` uses the checkpoint container; its config and digest are
/// ignored. Blobs named `conv1.weight`, `conv1.bias`, ... `conv6.bias` are
/// copied into `orient.conv0` ... `orient.conv8`. Shapes must match exactly;
/// blobs with other names are skipped. Returns the number of tensors copied.
pub fn import_flownet_weights(
    model: &mut DeepPcoModel,
    source: &Checkpoint,
) -> Result<usize, NetworkError> {
    let mut copied = 0;
    for (i, layer) in FLOWNET_LAYER_NAMES.iter().enumerate() {
        for part in ["weight", "bias"] {
            let Some(blob) = source.blob(&format!("{layer}.{part}")) else {
                continue;
            };
            let target = format!("orient.conv{i}.{part}");
            let id = model
                .params()
                .find(&target)
                .ok_or_else(|| corrupt(format!("model has no parameter {target}")))?;
            let param = model.params_mut().get_mut(id);
            if blob.shape != param.tensor.shape() {
                return Err(NetworkError::ShapeMismatch(format!(
                    "{target}: {:?} vs {:?}",
                    blob.shape,
                    param.tensor.shape()
                )));
            }
            param.tensor = Tensor::new(blob.shape.clone(), blob.values.clone())?;
            copied += 1;
        }
    }
    Ok(copied)
}
