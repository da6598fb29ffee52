//! `WSCM` checkpoint files.
//!
//! Layout (little-endian): magic, version `u32`, spec JSON and its SHA-256
//! hex (each `u64` length + bytes), config JSON (`u64` length + bytes), epoch
//! `u64`, parameter count `u32` then per parameter name (`u32` length +
//! bytes), trainable `u8`, shape `4 x u64`, values `f32`; running-statistics
//! count `u32` then per entry name, channels `u64`, means, variances; an
//! optimizer flag `u8` and, if set, step `u64` and both moment tensors per
//! parameter; finally the raw SHA-256 digest of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{atomic_write_bytes, put_f32s, read_file, sha256_hex, LeReader};
use crate::network::{ArchitectureSpec, ModelState};
use crate::tensor::batchnorm::RunningStats;
use crate::tensor::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"WSCM";
const DIGEST_LEN: usize = 32;
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelState<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub epoch: u64,
    /// Training configuration echo, stored verbatim.
    pub config: String,
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_name(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(model: ModelState<f32>) -> Self {
        Self {
            model,
            optimizer: None,
            epoch: 0,
            config: String::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let spec = serde_json::to_vec(self.model.spec()).expect("spec serialises");
        put_bytes(&mut out, &spec);
        put_bytes(&mut out, self.model.spec().hash().as_bytes());
        put_bytes(&mut out, self.config.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            put_name(&mut out, &p.name);
            out.push(u8::from(p.trainable));
            for d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f32s(&mut out, p.value.data());
        }
        let stats = self.model.running_stats();
        out.extend_from_slice(&(stats.len() as u32).to_le_bytes());
        for (name, s) in self.model.running_stat_names().iter().zip(stats) {
            put_name(&mut out, name);
            out.extend_from_slice(&(s.channels() as u64).to_le_bytes());
            put_f32s(&mut out, &s.mean);
            put_f32s(&mut out, &s.var);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                let cfg = serde_json::to_vec(&adam.config).expect("config serialises");
                put_bytes(&mut out, &cfg);
                out.extend_from_slice(&adam.step.to_le_bytes());
                for (m, v) in adam.first.iter().zip(&adam.second) {
                    put_f32s(&mut out, m.data());
                    put_f32s(&mut out, v.data());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        let truncated = || corrupt("truncated");
        if bytes.len() < DIGEST_LEN {
            return Err(truncated());
        }
        let (bytes, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(bytes).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or altered file)"));
        }
        let mut r = LeReader::new(bytes);
        if r.take(4) != Some(MAGIC.as_slice()) {
            return Err(corrupt("missing WSCM magic"));
        }
        let version = r.u32().ok_or_else(truncated)?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let take_bytes = |r: &mut LeReader| -> Result<Vec<u8>> {
            let n = r.u64().ok_or_else(truncated)?;
            let n = usize::try_from(n).map_err(|_| truncated())?;
            Ok(r.take(n).ok_or_else(truncated)?.to_vec())
        };
        let spec_json = take_bytes(&mut r)?;
        let spec_hash = take_bytes(&mut r)?;
        let config =
            String::from_utf8(take_bytes(&mut r)?).map_err(|_| corrupt("config is not UTF-8"))?;
        let spec: ArchitectureSpec =
            serde_json::from_slice(&spec_json).map_err(|e| corrupt(&format!("spec: {e}")))?;
        if spec.hash().as_bytes() != spec_hash.as_slice() {
            return Err(corrupt("spec hash does not match the stored spec"));
        }
        let epoch = r.u64().ok_or_else(truncated)?;
        let name = |r: &mut LeReader| -> Result<String> {
            let n = r.u32().ok_or_else(truncated)? as usize;
            String::from_utf8(r.take(n).ok_or_else(truncated)?.to_vec())
                .map_err(|_| corrupt("name is not UTF-8"))
        };
        let count = r.u32().ok_or_else(truncated)? as usize;
        let mut params = Vec::new();
        for _ in 0..count {
            let pname = name(&mut r)?;
            let trainable = match r.take(1).ok_or_else(truncated)?[0] {
                0 => false,
                1 => true,
                _ => return Err(corrupt("bad trainable flag")),
            };
            let mut shape = [0usize; 4];
            for d in shape.iter_mut() {
                *d = usize::try_from(r.u64().ok_or_else(truncated)?).map_err(|_| truncated())?;
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(truncated)?;
            let data = r.f32s(len).ok_or_else(truncated)?;
            params.push((pname, Tensor::from_vec(shape, data)?, trainable));
        }
        let count = r.u32().ok_or_else(truncated)? as usize;
        let mut stats = Vec::new();
        for _ in 0..count {
            let sname = name(&mut r)?;
            let ch = usize::try_from(r.u64().ok_or_else(truncated)?).map_err(|_| truncated())?;
            let mean = r.f32s(ch).ok_or_else(truncated)?;
            let var = r.f32s(ch).ok_or_else(truncated)?;
            stats.push((sname, RunningStats { mean, var }));
        }
        let model = ModelState::from_parts(&spec, params, stats)?;
        let optimizer = match r.take(1).ok_or_else(truncated)?[0] {
            0 => None,
            1 => {
                let cfg: AdamConfig = serde_json::from_slice(&take_bytes(&mut r)?)
                    .map_err(|e| corrupt(&format!("optimizer: {e}")))?;
                let step = r.u64().ok_or_else(truncated)?;
                let mut first = Vec::new();
                let mut second = Vec::new();
                for p in model.params() {
                    let shape = p.value.shape();
                    first.push(Tensor::from_vec(
                        shape,
                        r.f32s(p.numel()).ok_or_else(truncated)?,
                    )?);
                    second.push(Tensor::from_vec(
                        shape,
                        r.f32s(p.numel()).ok_or_else(truncated)?,
                    )?);
                }
                Some(Adam {
                    config: cfg,
                    step,
                    first,
                    second,
                })
            }
            _ => return Err(corrupt("bad optimizer flag")),
        };
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            model,
            optimizer,
            epoch,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Loads and checks that the stored architecture equals `expected`,
    /// naming the first field that differs otherwise.
    pub fn load_for(path: &Path, expected: &ArchitectureSpec) -> Result<Self> {
        let ck = Self::load(path)?;
        if let Some(field) = ck.model.spec().first_difference(expected) {
            return Err(Error::SpecMismatch { field });
        }
        Ok(ck)
    }

    /// SHA-256 of the serialised checkpoint.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}
