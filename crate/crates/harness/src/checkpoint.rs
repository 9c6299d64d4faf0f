//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! - magic `b"HDRFCKPT"`, `u32` format version
//! - `u64` step, 32-byte config hash, `u64` length + UTF-8 canonical config text
//! - `u32` parameter count; per parameter: `u32` name length + name,
//!   `u32` rank, `u64` dims, `f64` values
//! - `u64` optimizer step count, then first and second moments as `f64`
//!   values in parameter order

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hdrfuse_core::model::Model;
use hdrfuse_core::nn::Param;
use hdrfuse_core::Tensor;

use crate::config::RunConfig;
use crate::optim::Adam;

const MAGIC: &[u8; 8] = b"HDRFCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub model: Model,
    pub optimizer: Adam,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.bytes.len(), "checkpoint truncated at byte {}", self.pos);
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        Ok(String::from_utf8(self.take(n)?.to_vec())?)
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: Model, optimizer: Adam, step: u64) -> Self {
        Self {
            step,
            config,
            model,
            optimizer,
        }
    }

    /// Fresh model and optimizer for `config`.
    pub fn initial(config: &RunConfig) -> Self {
        let model = Model::new(config.model.clone(), config.seed);
        let optimizer = Adam::new(&model.store);
        Self::new(config.clone(), model, optimizer, 0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.config.hash());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.model.store.len() as u32).to_le_bytes());
        for p in self.model.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, p.value.data());
        }
        out.extend_from_slice(&self.optimizer.t.to_le_bytes());
        for m in &self.optimizer.m {
            put_f64s(&mut out, m.data());
        }
        for v in &self.optimizer.v {
            put_f64s(&mut out, v.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(8)? == MAGIC, "not a checkpoint file");
        let version = r.u32()?;
        ensure!(version == VERSION, "unsupported checkpoint version {version}");
        let step = r.u64()?;
        let hash: [u8; 32] = r.take(32)?.try_into()?;
        let text_len = r.u64()? as usize;
        let text = r.string(text_len)?;
        let config = RunConfig::parse(&text, None).context("checkpoint config")?;
        ensure!(config.hash() == hash, "checkpoint config hash does not match its config text");
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product();
            let value = Tensor::from_vec(&shape, r.f64s(n)?)?;
            params.push(Param { name, value });
        }
        let mut model = Model::new(config.model.clone(), config.seed);
        model.store.load(params)?;
        let t = r.u64()?;
        let shapes: Vec<Vec<usize>> = model.store.iter().map(|p| p.value.shape().to_vec()).collect();
        let moments = |r: &mut Reader| -> Result<Vec<Tensor>> {
            shapes
                .iter()
                .map(|s| Ok(Tensor::from_vec(s, r.f64s(s.iter().product())?)?))
                .collect()
        };
        let m = moments(&mut r)?;
        let v = moments(&mut r)?;
        if r.pos != bytes.len() {
            bail!("{} trailing bytes after checkpoint", bytes.len() - r.pos);
        }
        Ok(Self {
            step,
            config,
            model,
            optimizer: Adam { t, m, v },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
    }

    /// Warn when `other` describes a different model or data setup.
    pub fn check_config(&self, other: &RunConfig) -> bool {
        let same = self.config.hash() == other.hash();
        if !same {
            log::warn!(
                "config hash mismatch: checkpoint {} vs supplied {}",
                crate::config::hex(&self.config.hash()),
                crate::config::hex(&other.hash())
            );
        }
        same
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> RunConfig {
        RunConfig::parse("optim.seed = 5\nmodel.c = 4\nmodel.c_prime = 4\nmodel.k = 1\n", None).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = Checkpoint::initial(&small());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for id in ck.model.store.ids().collect::<Vec<_>>() {
            ck.model.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random::<f64>());
        }
        let grads: Vec<Tensor> = ck.model.store.iter().map(|p| p.value.map(|v| v.sin())).collect();
        ck.optimizer.step(&mut ck.model.store, &grads, 1e-3);
        ck.step = 17;
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.model.store, ck.model.store);
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.step, 17);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Checkpoint::initial(&small()).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut tampered = bytes;
        tampered[20] ^= 1;
        assert!(Checkpoint::from_bytes(&tampered).is_err());
    }

    #[test]
    fn config_mismatch_is_detected() {
        let ck = Checkpoint::initial(&small());
        assert!(ck.check_config(&small()));
        let other = RunConfig::parse("optim.seed = 5\nmodel.c = 8\n", None).unwrap();
        assert!(!ck.check_config(&other));
    }
}
