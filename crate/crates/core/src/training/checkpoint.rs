//! Checkpoint layout:
//!
//! ```text
//! magic (8 bytes) | header length (u64 LE) | JSON header | tensor blob
//! ```
//!
//! The blob holds every parameter in store order, then the first and second
//! optimizer moments of each parameter listed in the header, all as
//! little-endian floats of the build's precision.

use std::path::Path;

use numerics::{AdamW, Moments, ParamGroup, Real};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Provenance, RngState, TrainState};
use crate::model::tokenizer::Tokenizer;
use crate::model::{RationaleModel, SlmConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RATCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    group: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct MomentMeta {
    name: String,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    moments: Vec<MomentMeta>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    real: String,
    config: SlmConfig,
    tokenizer: Tokenizer,
    vk: Vec<usize>,
    phase: u8,
    step: u64,
    phase_step: u64,
    rng: RngState,
    provenance: Provenance,
    optimizer: OptimizerMeta,
    params: Vec<TensorMeta>,
}

fn real_name() -> String {
    format!("f{}", std::mem::size_of::<Real>() * 8)
}

fn push_reals(out: &mut Vec<u8>, xs: &[Real]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let store = &state.model.store;
    let params = store
        .iter()
        .map(|(_, p)| TensorMeta {
            name: p.name.clone(),
            group: p.group.as_str().to_string(),
            shape: p.tensor.shape().to_vec(),
            trainable: p.trainable,
        })
        .collect();
    let mut moments = Vec::new();
    let mut moment_data = Vec::new();
    for (id, p) in store.iter() {
        if let Some(m) = state.optimizer.state(id) {
            moments.push(MomentMeta {
                name: p.name.clone(),
                t: m.t,
            });
            moment_data.push(m);
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        real: real_name(),
        config: state.model.config.clone(),
        tokenizer: state.model.tokenizer.clone(),
        vk: state.vk.clone(),
        phase: state.phase,
        step: state.step,
        phase_step: state.phase_step,
        rng: RngState::capture(&state.rng),
        provenance: state.provenance.clone(),
        optimizer: OptimizerMeta {
            beta1: state.optimizer.beta1 as f64,
            beta2: state.optimizer.beta2 as f64,
            eps: state.optimizer.eps as f64,
            moments,
        },
        params,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        push_reals(&mut out, p.tensor.data());
    }
    for m in moment_data {
        push_reals(&mut out, &m.m);
        push_reals(&mut out, &m.v);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn reals(&mut self, n: usize) -> Result<Vec<Real>> {
        const W: usize = std::mem::size_of::<Real>();
        let raw = self.take(n * W)?;
        Ok(raw
            .chunks_exact(W)
            .map(|c| Real::from_le_bytes(c.try_into().expect("chunk width")))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported",
            header.format_version
        )));
    }
    if header.real != real_name() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, this build uses {}",
            header.real,
            real_name()
        )));
    }
    let mut model = RationaleModel::new(header.config, header.tokenizer, 0)?;
    let mut values = Vec::with_capacity(header.params.len());
    for meta in &header.params {
        let n = meta.shape.iter().product();
        values.push((meta.name.clone(), meta.shape.clone(), r.reals(n)?));
    }
    model.load_values(&values)?;
    for meta in &header.params {
        let id = model.store.id(&meta.name)?;
        let p = model.store.param_mut(id);
        if ParamGroup::parse(&meta.group) != Some(p.group) {
            return Err(Error::Checkpoint(format!("group mismatch for {}", meta.name)));
        }
        p.trainable = meta.trainable;
    }
    let o = &header.optimizer;
    let mut optimizer = AdamW::new(o.beta1 as Real, o.beta2 as Real, o.eps as Real);
    for mm in &o.moments {
        let id = model.store.id(&mm.name)?;
        let n = model.store.tensor(id).len();
        let m = r.reals(n)?;
        let v = r.reals(n)?;
        optimizer.set_state(id, Moments { m, v, t: mm.t });
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the tensor blob",
            bytes.len() - r.at
        )));
    }
    if let Some(&bad) = header.vk.iter().find(|&&i| i >= model.tokenizer.len()) {
        return Err(Error::Checkpoint(format!("knowledge token id {bad} is out of range")));
    }
    Ok(TrainState {
        model,
        vk: header.vk,
        optimizer,
        step: header.step,
        phase: header.phase,
        phase_step: header.phase_step,
        rng: header.rng.restore()?,
        provenance: header.provenance,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes atomically and returns the SHA-256 of the file.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<String> {
    let bytes = write_checkpoint(state)?;
    crate::io::atomic_write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Loads a checkpoint and records its hash as the state's origin.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut state = read_checkpoint(&bytes)?;
    state.provenance.loaded_from = Some(sha256_hex(&bytes));
    Ok(state)
}
