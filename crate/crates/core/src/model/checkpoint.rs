//! Binary checkpoints: config, step, parameters and optimizer moments.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::{Layout, Params};
use super::{Model, ModelState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"JMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// SHA-256 of the config's JSON encoding.
pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("config serializes");
    digest_bytes(&json)
}

fn digest_bytes(bytes: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    out.copy_from_slice(&Sha256::digest(bytes));
    out
}

const SECTIONS: [&str; 3] = ["param", "adam.m", "adam.v"];

pub fn encode(state: &ModelState) -> Vec<u8> {
    let json = serde_json::to_vec(&state.model.config).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest_bytes(&json));
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&state.step.to_le_bytes());
    let infos = &state.model.layout.infos;
    let sets = [&state.model.params, &state.m, &state.v];
    out.extend_from_slice(&((infos.len() * sets.len()) as u32).to_le_bytes());
    for (section, set) in SECTIONS.iter().zip(sets) {
        for (info, t) in infos.iter().zip(set.tensors()) {
            let name = format!("{section}/{}", info.name);
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let json_len = r.u64()? as usize;
    let json = r.take(json_len)?;
    if digest_bytes(json) != digest {
        return Err(Error::Format("checkpoint config digest mismatch".into()));
    }
    let config: ModelConfig =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    config.validate()?;
    let step = r.u64()?;
    let layout = Layout::new(&config);
    let count = r.u32()? as usize;
    if count != layout.infos.len() * SECTIONS.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, expected {}",
            layout.infos.len() * SECTIONS.len()
        )));
    }
    let mut sets: Vec<Vec<Array2<f64>>> = Vec::new();
    for section in SECTIONS {
        let mut tensors = Vec::with_capacity(layout.infos.len());
        for info in &layout.infos {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let expected = format!("{section}/{}", info.name);
            if name != expected {
                return Err(Error::Format(format!("expected tensor {expected}, found {name}")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            if (rows, cols) != info.shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {rows}x{cols}, expected {}x{}",
                    info.shape.0, info.shape.1
                )));
            }
            let raw = r.take(rows * cols * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Array2::from_shape_vec((rows, cols), data).expect("shape checked"));
        }
        sets.push(tensors);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let v = Params::from_tensors(sets.pop().unwrap());
    let m = Params::from_tensors(sets.pop().unwrap());
    let params = Params::from_tensors(sets.pop().unwrap());
    Ok(ModelState {
        model: Model {
            config,
            layout,
            params,
        },
        m,
        v,
        step,
    })
}

pub fn save(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(state)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

/// Load and require the stored config to match `expected`.
pub fn load_matching(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelState> {
    let state = load(path)?;
    if config_digest(&state.model.config) != config_digest(expected) {
        return Err(Error::Invalid("checkpoint was written for a different model config".into()));
    }
    Ok(state)
}
