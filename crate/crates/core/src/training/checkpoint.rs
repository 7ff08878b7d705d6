//! Checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "KMMVCKPT"
//! 8       4     format version, u32 LE
//! 12      8     header length H, u64 LE
//! 20      H     JSON header: architecture, train config, progress,
//!               Adam step, data fingerprint, tensor names and shapes
//! 20+H    ...   f64 LE arrays: parameters, Adam m, Adam v, best
//!               parameters; each section in header tensor order
//! ```
//!
//! Random streams are a function of the train seed and the epoch index,
//! so the header's `progress.epoch` together with `config.seed` is the
//! complete RNG state.

use std::fs;
use std::path::Path;

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use super::{AdamState, Checkpoint, Progress, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{Architecture, Model};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KMMVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX: usize = 20;
const SECTIONS: usize = 4;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    config: TrainConfig,
    progress: Progress,
    adam_step: u64,
    data_fingerprint: u64,
    sections: Vec<String>,
    tensors: Vec<TensorInfo>,
}

pub(super) fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let store = ckpt.model.params();
    let header = Header {
        architecture: ckpt.architecture().clone(),
        config: ckpt.config.clone(),
        progress: ckpt.progress.clone(),
        adam_step: ckpt.adam.step,
        data_fingerprint: ckpt.data_fingerprint,
        sections: ["params", "adam_m", "adam_v", "best"].map(String::from).to_vec(),
        tensors: store
            .names()
            .iter()
            .zip(store.values())
            .map(|(name, t)| TensorInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Contract(format!("checkpoint header: {e}")))?;
    let sections = [store.values(), &ckpt.adam.m, &ckpt.adam.v, &ckpt.best];
    for s in &sections[1..] {
        if s.len() != store.len() || s.iter().zip(store.values()).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Contract("checkpoint sections differ in layout".into()));
        }
    }
    let mut out = Vec::with_capacity(PREFIX + header.len() + SECTIONS * 8 * store.numel());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for section in sections {
        for v in section.iter().flat_map(Tensor::data) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub(super) fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX {
        return Err(Error::parse(bytes.len() as u64, "truncated checkpoint prefix"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, "bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let header_end = (PREFIX as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::parse(12, "header length exceeds file"))? as usize;
    let header: Header = serde_json::from_slice(&bytes[PREFIX..header_end])
        .map_err(|e| Error::parse(PREFIX as u64, format!("header: {e}")))?;
    header.config.validate().map_err(|e| Error::parse(PREFIX as u64, e.to_string()))?;
    if header.sections.len() != SECTIONS {
        return Err(Error::parse(PREFIX as u64, "unexpected section list"));
    }
    let numel: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let expected = header_end as u64 + (SECTIONS * numel * 8) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::parse(
            header_end as u64,
            format!("payload is {} bytes, header declares {}", bytes.len() - header_end, expected - header_end as u64),
        ));
    }
    let mut values = bytes[header_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut section = || -> Result<Vec<Tensor>> {
        header
            .tensors
            .iter()
            .map(|t| {
                let n = t.shape.iter().product();
                let data: Vec<f64> = values.by_ref().take(n).collect();
                Tensor::new(t.shape.clone(), data).map_err(Error::from)
            })
            .collect()
    };
    let (params, m, v, best) = (section()?, section()?, section()?, section()?);
    let names: Vec<String> = header.tensors.iter().map(|t| t.name.clone()).collect();
    let model = Model::from_parts(header.architecture, &names, params)?;
    Ok(Checkpoint {
        model,
        best,
        adam: AdamState {
            hyper: header.config.adam.clone(),
            step: header.adam_step,
            m,
            v,
        },
        config: header.config,
        progress: header.progress,
        data_fingerprint: header.data_fingerprint,
    })
}

/// Writes via a temporary sibling and a rename, so a failed save never
/// leaves a truncated checkpoint behind.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
