//! Binary dataset container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes   | content                                   |
//! |---------|-------------------------------------------|
//! | 0..8    | magic `KMMVDATA`                          |
//! | 8..12   | format version (u32, currently 1)         |
//! | 12..16  | flags (u32, bit 0: normalised)            |
//! | 16..24  | trajectory count `N` (u64)                |
//! | 24..32  | snapshots `I` (u64)                       |
//! | 32..40  | antennas `R` (u64)                        |
//! | 40..48  | footer length in bytes (u64)              |
//! | 48..64  | reserved, zero                            |
//!
//! followed by `N * I * R` complex values as interleaved `(re, im)` f64
//! pairs in row-major `(n, i, r)` order, followed by a JSON footer with the
//! generator configuration and per-trajectory metadata.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    generate_gauss_markov, generate_trajectory, normalize_dataset, GaussMarkovConfig, PathModelConfig, Trajectory,
    TrajectoryMeta,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, Stream};

pub const HEADER_LEN: usize = 64;
const MAGIC: &[u8; 8] = b"KMMVDATA";
const VERSION: u32 = 1;
const FLAG_NORMALIZED: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    PathModel(PathModelConfig),
    GaussMarkov(GaussMarkovConfig),
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub generator: Generator,
    pub normalized: bool,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    generator: Generator,
    trajectories: Vec<TrajectoryMeta>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn snapshots(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::snapshots)
    }

    pub fn antennas(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::antennas)
    }

    pub fn gauss_markov(&self) -> Option<&GaussMarkovConfig> {
        match &self.generator {
            Generator::GaussMarkov(cfg) => Some(cfg),
            _ => None,
        }
    }

    /// `count` trajectories; trajectory `n` uses the seed derived from
    /// `(seed, n)`, so any prefix of a larger set is reproducible on its own.
    /// Path-model sets are normalised when `normalize` is set; Gauss-Markov
    /// sets already have unit mean power per entry and are left as drawn.
    pub fn generate(generator: &Generator, snapshots: usize, count: usize, seed: u64, normalize: bool) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("dataset needs at least one trajectory".into()));
        }
        let tseed = |n: usize| derive_seed(seed, Stream::Trajectory, n as u64);
        let (trajectories, normalized) = match generator {
            Generator::PathModel(cfg) => {
                if cfg.snapshots != snapshots {
                    return Err(Error::Config(format!(
                        "path model has I = {}, requested {snapshots}",
                        cfg.snapshots
                    )));
                }
                let mut ts = (0..count)
                    .map(|n| generate_trajectory(tseed(n), cfg))
                    .collect::<Result<Vec<_>>>()?;
                if normalize {
                    normalize_dataset(&mut ts)?;
                }
                (ts, normalize)
            }
            Generator::GaussMarkov(cfg) => {
                let ts = (0..count)
                    .map(|n| generate_gauss_markov(tseed(n), cfg, snapshots))
                    .collect::<Result<Vec<_>>>()?;
                (ts, false)
            }
            Generator::External => return Err(Error::Config("external data cannot be generated".into())),
        };
        Ok(Self {
            generator: generator.clone(),
            normalized,
            trajectories,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, i, r) = (self.len(), self.snapshots(), self.antennas());
        if self
            .trajectories
            .iter()
            .any(|t| t.snapshots() != i || t.antennas() != r)
        {
            return Err(Error::Config("trajectories differ in shape".into()));
        }
        let footer = serde_json::to_vec(&Footer {
            generator: self.generator.clone(),
            trajectories: self.trajectories.iter().map(|t| t.meta.clone()).collect(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * n * i * r + footer.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let flags = if self.normalized { FLAG_NORMALIZED } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for v in [n, i, r, footer.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.resize(HEADER_LEN, 0);
        for t in &self.trajectories {
            for c in t.channels().iter().flatten() {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        out.extend_from_slice(&footer);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::parse(bytes.len() as u64, "truncated header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::parse(0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::Incompatible(format!("dataset version {version}, expected {VERSION}")));
        }
        let flags = u32_at(12);
        let (n, i, r, footer_len) = (u64_at(16), u64_at(24), u64_at(32), u64_at(40));
        if i == 0 || r == 0 {
            return Err(Error::parse(24, "zero snapshots or antennas"));
        }
        let payload = n
            .checked_mul(i)
            .and_then(|v| v.checked_mul(r))
            .and_then(|v| v.checked_mul(16))
            .ok_or_else(|| Error::parse(16, "payload size overflows"))?;
        let payload_end = HEADER_LEN as u64 + payload;
        if (bytes.len() as u64) < payload_end {
            return Err(Error::parse(bytes.len() as u64, "truncated payload"));
        }
        if bytes.len() as u64 != payload_end + footer_len {
            return Err(Error::parse(
                payload_end.min(bytes.len() as u64),
                format!(
                    "footer length {} does not match declared {footer_len}",
                    bytes.len() as u64 - payload_end
                ),
            ));
        }
        let footer: Footer = serde_json::from_slice(&bytes[payload_end as usize..]).map_err(|e| {
            Error::parse(payload_end, format!("footer: {e}"))
        })?;
        if footer.trajectories.len() as u64 != n {
            return Err(Error::parse(payload_end, "footer trajectory count mismatch"));
        }
        let (i, r) = (i as usize, r as usize);
        let mut values = bytes[HEADER_LEN..payload_end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut trajectories = Vec::with_capacity(n as usize);
        for (idx, meta) in footer.trajectories.into_iter().enumerate() {
            let channels: Vec<Vec<Complex64>> = (0..i)
                .map(|_| {
                    (0..r)
                        .map(|_| {
                            let re = values.next().unwrap();
                            let im = values.next().unwrap();
                            Complex64::new(re, im)
                        })
                        .collect()
                })
                .collect();
            let offset = HEADER_LEN as u64 + (idx * i * r * 16) as u64;
            let t = Trajectory::new(channels, meta)
                .map_err(|e| Error::parse(offset, format!("trajectory {idx}: {e}")))?;
            trajectories.push(t);
        }
        Ok(Self {
            generator: footer.generator,
            normalized: flags & FLAG_NORMALIZED != 0,
            trajectories,
        })
    }
}

pub fn export_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset.to_bytes()?)?;
    Ok(())
}

pub fn import_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_bytes(&fs::read(path)?)
}
