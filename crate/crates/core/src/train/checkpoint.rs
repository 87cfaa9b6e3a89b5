//! Binary checkpoints: weights, AdamW moments, step, seed and the run config.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8  "VSACKPT\0"
//! version      4  u32
//! scalar size  4  u32, 4 (f32) or 8 (f64)
//! fingerprint  8  u64, model config digest
//! step         8  u64
//! seed         8  u64, the master seed every random draw is derived from
//! config       4 + len  u32 length, run config as TOML text
//! tensors      4  u32 count, then per tensor:
//!              4 + len  name; 4 rank; 8 per extent; payload
//! ```
//!
//! Optimizer moments are stored as `adam.m/<param>` and `adam.v/<param>`.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Result, VsaError};
use crate::model::VsaModel;
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};
use crate::train::optim::AdamW;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VSACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Float> {
    pub config: RunConfig,
    pub step: u64,
    pub seed: u64,
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamW<T>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.off.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| VsaError::format(format!("checkpoint truncated at byte {}", self.off)))?;
        let s = &self.bytes[self.off..end];
        self.off = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| VsaError::format("checkpoint string is not UTF-8"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor<T: Float>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        if T::BYTES == 4 {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
}

/// Scalar width recorded in a checkpoint header, without parsing the rest.
pub fn scalar_bytes(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(VsaError::format("not a checkpoint file (bad magic)"));
    }
    Ok(u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize)
}

impl<T: Float> Checkpoint<T> {
    pub fn from_model(model: &VsaModel<T>, optimizer: Option<&AdamW<T>>, config: &RunConfig, step: u64, seed: u64) -> Self {
        Checkpoint { config: config.clone(), step, seed, params: model.params.clone(), optimizer: optimizer.cloned() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        out.extend_from_slice(&self.config.model.fingerprint().to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_str(&mut out, &self.config.to_toml());
        let moments = self.optimizer.as_ref().map_or(0, |_| 2 * self.params.len());
        out.extend_from_slice(&((self.params.len() + moments) as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, name, t);
        }
        if let Some(opt) = &self.optimizer {
            for ((name, _), m) in self.params.iter().zip(&opt.m) {
                put_tensor(&mut out, &format!("{MOMENT_M}{name}"), m);
            }
            for ((name, _), v) in self.params.iter().zip(&opt.v) {
                put_tensor(&mut out, &format!("{MOMENT_V}{name}"), v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, off: 0 };
        if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(VsaError::format("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(VsaError::format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let size = r.u32()? as usize;
        if size != T::BYTES {
            return Err(VsaError::format(format!(
                "checkpoint holds {}-byte scalars, loading as {}-byte",
                size,
                T::BYTES
            )));
        }
        let fingerprint = r.u64()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let config = RunConfig::from_toml(&r.string()?)?;
        if config.model.fingerprint() != fingerprint {
            return Err(VsaError::format("checkpoint config does not match its fingerprint"));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(size).ok_or_else(|| VsaError::format("tensor size overflows"))?)?;
            let data: Vec<T> = if size == 4 {
                raw.chunks_exact(4).map(|b| T::c(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)).collect()
            } else {
                raw.chunks_exact(8).map(|b| T::c(f64::from_le_bytes(b.try_into().expect("8 bytes")))).collect()
            };
            let t = Tensor::new(shape, data)?;
            if name.starts_with(MOMENT_M) {
                m.push(t);
            } else if name.starts_with(MOMENT_V) {
                v.push(t);
            } else {
                params.add(name, t);
            }
        }
        if r.off != bytes.len() {
            return Err(VsaError::format(format!("{} trailing bytes after checkpoint", bytes.len() - r.off)));
        }
        let optimizer = match (m.len(), v.len()) {
            (0, 0) => None,
            (a, b) if a == params.len() && b == params.len() => {
                // trainability is a property of the run, restored by the caller
                Some(AdamW { m, v, trainable: vec![true; params.len()], steps: step })
            }
            _ => return Err(VsaError::format("optimizer moments do not match the parameters")),
        };
        Ok(Checkpoint { config, step, seed, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        // write then rename, so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Rebuild the model, checking every stored tensor against the
    /// architecture the config describes.
    pub fn model(&self) -> Result<VsaModel<T>> {
        let mut model = VsaModel::new(self.config.model.clone(), self.seed)?;
        if model.params.len() != self.params.len() {
            return Err(VsaError::format(format!(
                "checkpoint has {} tensors, the architecture {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (name, t) in self.params.iter() {
            model.params.set(name, t.clone()).map_err(|e| VsaError::format(e.to_string()))?;
        }
        Ok(model)
    }
}
