//! Checkpoint archive: magic, little-endian u64 header length, a JSON header,
//! then every tensor as little-endian f32 in header order.
//!
//! Parameters are stored as `param/<name>` and their optimizer moments as
//! `adam_m/<name>` and `adam_v/<name>`, so training resumes exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{ParameterSet, Real};

const MAGIC: &[u8; 8] = b"MGFLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub master_seed: u64,
    pub step: u64,
    /// Free-form model description (widths, schedule, ...).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    data: Vec<f32>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(params: &ParameterSet<T>, master_seed: u64, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, values: &[T]| {
            tensors.push(TensorEntry { name, shape, offset: data.len() });
            data.extend(values.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
        };
        for p in params.iter() {
            push(format!("param/{}", p.name), p.var.shape(), &p.var.to_vec());
        }
        for p in params.iter() {
            push(format!("adam_m/{}", p.name), p.var.shape(), &p.m);
            push(format!("adam_v/{}", p.name), p.var.shape(), &p.v);
        }
        let header = CheckpointHeader { format_version: FORMAT_VERSION, master_seed, step: params.step(), meta, tensors };
        Self { header, data }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        let e = self.header.tensors.iter().find(|e| e.name == name)?;
        let n: usize = e.shape.iter().product();
        Some((&e.shape, &self.data[e.offset..e.offset + n]))
    }

    /// Loads values, moments and step into `params`. The parameter registry
    /// must match the archive exactly in names and shapes.
    pub fn restore<T: Real>(&self, params: &mut ParameterSet<T>) -> Result<()> {
        let stored = self.header.tensors.iter().filter(|e| e.name.starts_with("param/")).count();
        if stored != params.len() {
            return Err(Error::Checkpoint(format!("archive holds {stored} parameters, model has {}", params.len())));
        }
        for p in params.iter() {
            let key = format!("param/{}", p.name);
            match self.tensor(&key) {
                Some((shape, _)) if shape == p.var.shape() => {}
                Some((shape, _)) => {
                    return Err(Error::Checkpoint(format!("{}: archive shape {shape:?}, model shape {:?}", p.name, p.var.shape())));
                }
                None => return Err(Error::Checkpoint(format!("archive is missing parameter {}", p.name))),
            }
        }
        let cast = |v: &[f32]| v.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();
        for p in params.params_mut() {
            let (_, values) = self.tensor(&format!("param/{}", p.name)).expect("validated");
            p.var.value_mut().data_mut().copy_from_slice(&cast(values));
            if let (Some((_, m)), Some((_, v))) = (self.tensor(&format!("adam_m/{}", p.name)), self.tensor(&format!("adam_v/{}", p.name))) {
                p.m = cast(m);
                p.v = cast(v);
            }
            p.var.zero_grad();
        }
        params.set_step(self.header.step);
        Ok(())
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ckpt.header)?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * ckpt.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &ckpt.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint archive (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + header_len).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &bytes[16 + header_len..];
    if !payload.len().is_multiple_of(4) {
        return Err(Error::Checkpoint("payload is not a whole number of f32 values".into()));
    }
    let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset + n > data.len() {
            return Err(Error::Checkpoint(format!("tensor {} runs past the payload", e.name)));
        }
    }
    Ok(Checkpoint { header, data })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(Error::at(path))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(Error::at(path))?)
}
