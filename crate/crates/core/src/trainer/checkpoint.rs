//! Binary checkpoints: the training configuration as JSON, a digest of the
//! network architecture, every named parameter array as little-endian f64,
//! and a trailing SHA-256 over everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::agent::{Agent, ModelConfig, Problem};
use super::TrainConfig;
use crate::autodiff::{Matrix, ParameterSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BOPOCKPT";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

/// Digest identifying the parameter layout of a network.
pub fn architecture_digest(problem: Problem, model: &ModelConfig) -> [u8; DIGEST_LEN] {
    let json = serde_json::to_vec(&(problem, model)).expect("model configs serialise");
    Sha256::digest(json).into()
}

pub struct Checkpoint {
    pub config: TrainConfig,
    pub agent: Agent,
    pub params: ParameterSet,
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, params: &ParameterSet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(config)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&architecture_digest(config.problem, &config.model));
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for id in params.ids() {
        let name = params.name(id).as_bytes();
        let value = params.value(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => corrupt("unexpected end of checkpoint"),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).or_else(|_| corrupt("length out of range"))
    }
}

/// Loads a checkpoint and rebuilds its network; the stored arrays must match
/// the rebuilt layout name by name and shape by shape.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return corrupt("not a checkpoint file");
    }
    let (body, stored) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return corrupt("checksum mismatch");
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return corrupt(format!("unsupported checkpoint version {version}"));
    }
    let json_len = r.len()?;
    let config: TrainConfig = serde_json::from_slice(r.take(json_len)?)
        .or_else(|e| corrupt(format!("invalid configuration: {e}")))?;
    let arch = r.take(DIGEST_LEN)?;
    if arch != architecture_digest(config.problem, &config.model) {
        return corrupt("architecture digest does not match the stored configuration");
    }
    let (agent, mut params) = Agent::build(config.problem, &config.model, 0)?;
    let count = r.u32()? as usize;
    if count != params.len() {
        return corrupt(format!("expected {} arrays, found {count}", params.len()));
    }
    for id in params.ids().collect::<Vec<_>>() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).or_else(|_| corrupt("array name is not UTF-8"))?;
        if name != params.name(id) {
            return corrupt(format!("expected array {:?}, found {name:?}", params.name(id)));
        }
        let (rows, cols) = (r.len()?, r.len()?);
        if (rows, cols) != params.value(id).shape() {
            return corrupt(format!("array {name} has shape {rows}x{cols}, expected {:?}", params.value(id).shape()));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *params.value_mut(id) = Matrix::from_vec(rows, cols, data);
    }
    if r.pos != body.len() {
        return corrupt("trailing bytes after the last array");
    }
    Ok(Checkpoint { config, agent, params })
}

/// Loads a checkpoint only if it was written for the expected architecture.
pub fn load_checkpoint_for(path: &Path, problem: Problem, model: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if architecture_digest(ckpt.config.problem, &ckpt.config.model) != architecture_digest(problem, model) {
        return corrupt(format!(
            "checkpoint holds a {} model with {}, expected {} with {}",
            ckpt.config.problem,
            serde_json::to_string(&ckpt.config.model)?,
            problem,
            serde_json::to_string(model)?
        ));
    }
    Ok(ckpt)
}
