//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "SYNCKPT\0"
//! version      u32
//! config_hash  u64      first 8 bytes of SHA-256(config_json)
//! step         u64
//! kind         u32 length + UTF-8
//! config_json  u32 length + UTF-8
//! n_params     u32
//! per param:   u32 length + UTF-8 name, u8 trainable, u32 ndim, ndim x u64 dims,
//!              prod(dims) x f64 values
//! checksum     32 bytes SHA-256 of everything above
//! ```
//!
//! The checksum is verified before anything is parsed, so a truncated or
//! corrupted file never yields a partial model.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::util::{hash64, write_atomic};

pub const MAGIC: &[u8; 8] = b"SYNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// A network whose parameters can be rebuilt from its config alone.
pub trait Model: Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone;

    /// Fresh model with initial parameters (deterministic in the config's seed).
    fn build(config: &Self::Config) -> Self;
    fn config(&self) -> &Self::Config;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    fn config_json(&self) -> String {
        serde_json::to_string(self.config()).expect("model configs serialize")
    }

    fn config_hash(&self) -> u64 {
        hash64(self.config_json().as_bytes())
    }
}

/// Raw contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_json: String,
    pub config_hash: u64,
    pub step: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn of<M: Model>(model: &M, step: u64) -> Self {
        let config_json = model.config_json();
        Checkpoint {
            kind: M::KIND.to_string(),
            config_hash: hash64(config_json.as_bytes()),
            config_json,
            step,
            params: model.params().clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.num_values() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.config_json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, p) in self.params.iter() {
            put_str(&mut out, &p.name);
            out.push(p.trainable as u8);
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
        }
        let config_hash = r.u64()?;
        let step = r.u64()?;
        let kind = r.string()?;
        let config_json = r.string()?;
        if hash64(config_json.as_bytes()) != config_hash {
            return Err(CheckpointError::ConfigHash { found: config_hash, expected: hash64(config_json.as_bytes()) });
        }
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let trainable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("size overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let value = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            if params.id(&name).is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate parameter {name}")));
            }
            params.add(name, value, trainable);
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Checkpoint { kind, config_json, config_hash, step, params })
    }

    /// Rebuilds the model this checkpoint was taken from.
    pub fn restore<M: Model>(&self) -> Result<M> {
        if self.kind != M::KIND {
            return Err(CheckpointError::Kind { found: self.kind.clone(), expected: M::KIND.into() }.into());
        }
        let config: M::Config = serde_json::from_str(&self.config_json)
            .map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
        let mut model = M::build(&config);
        model.params_mut().load_from(&self.params).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(model)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}

pub fn save_checkpoint<M: Model>(model: &M, step: u64, path: &Path) -> Result<()> {
    write_atomic(path, &Checkpoint::of(model, step).to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Loads a model and the step index it was saved at.
pub fn load_checkpoint<M: Model>(path: &Path) -> Result<(M, u64)> {
    let ck = read_checkpoint(path)?;
    Ok((ck.restore()?, ck.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Clone, Serialize, Deserialize)]
    struct TinyConfig {
        n: usize,
    }

    struct Tiny {
        config: TinyConfig,
        params: ParamStore,
    }

    impl Model for Tiny {
        const KIND: &'static str = "tiny";
        type Config = TinyConfig;
        fn build(config: &TinyConfig) -> Self {
            let mut params = ParamStore::new();
            params.add("w", Tensor::zeros(&[1, config.n]), true);
            params.add("frozen", Tensor::scalar(0.0), false);
            Tiny { config: config.clone(), params }
        }
        fn config(&self) -> &TinyConfig {
            &self.config
        }
        fn params(&self) -> &ParamStore {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.params
        }
    }

    fn sample() -> Tiny {
        let mut m = Tiny::build(&TinyConfig { n: 3 });
        let id = m.params.id("w").unwrap();
        m.params.get_mut(id).value = Tensor::row(vec![0.1, -2.5, f64::MIN_POSITIVE]);
        m
    }

    #[test]
    fn round_trip_preserves_bits_and_step() {
        let m = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, 1234, &path).unwrap();
        let (back, step): (Tiny, u64) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 1234);
        assert_eq!(back.params, m.params);
        assert!(!back.params.get(back.params.id("frozen").unwrap()).trainable);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = Checkpoint::of(&sample(), 7).to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 50] {
            assert_eq!(Checkpoint::from_bytes(&bytes[..cut]).unwrap_err(), CheckpointError::Checksum, "cut {cut}");
        }
        assert_eq!(Checkpoint::from_bytes(&bytes[..10]).unwrap_err(), CheckpointError::Truncated);
        let mut flipped = bytes.clone();
        flipped[60] ^= 1;
        assert_eq!(Checkpoint::from_bytes(&flipped).unwrap_err(), CheckpointError::Checksum);
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&magic).unwrap_err(), CheckpointError::BadMagic);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = Checkpoint::of(&sample(), 7).to_bytes();
        bytes.truncate(bytes.len() - CHECKSUM_LEN);
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        assert_eq!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            CheckpointError::Version { found: 9, expected: FORMAT_VERSION }
        );
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut ck = Checkpoint::of(&sample(), 0);
        ck.kind = "other".into();
        assert!(matches!(ck.restore::<Tiny>(), Err(Error::Checkpoint(CheckpointError::Kind { .. }))));
    }
}
