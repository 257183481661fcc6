//! Versioned parameter container.
//!
//! Layout: magic `DGCK`, format version (u32), 32-byte configuration
//! fingerprint, RNG state (32-byte seed, u64 stream, u128 word position),
//! tensor count (u32), then for each tensor in name order: name length
//! (u32) and UTF-8 name, rank (u32), dimensions (u64 each) and f64 values.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_all, write_atomic, Reader};
use crate::params::Params;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGCK";
pub const VERSION: u32 = 1;

pub type Fingerprint = [u8; 32];

/// SHA-256 of the canonical JSON form of `value`.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> Fingerprint {
    let json = serde_json::to_vec(value).expect("configuration serialises");
    Sha256::digest(&json).into()
}

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Params,
    pub fingerprint: Fingerprint,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let fingerprint: Fingerprint = r.take(32)?.try_into().expect("32 bytes");
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng = RngState {
            seed,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        let count = r.u32()?;
        let mut params = Params::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.insert(name, Tensor::new(shape, data)?);
        }
        r.finish()?;
        Ok(Self {
            params,
            fingerprint,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Loads a checkpoint, refusing one written under a different
    /// configuration.
    pub fn load(path: &Path, expected: &Fingerprint) -> Result<Self> {
        let ck = Self::load_unchecked(path)?;
        if &ck.fingerprint != expected {
            return Err(Error::config(format!(
                "checkpoint {} was written for configuration {}, current configuration is {}",
                path.display(),
                &fingerprint_hex(&ck.fingerprint)[..16],
                &fingerprint_hex(expected)[..16]
            )));
        }
        Ok(ck)
    }

    pub fn load_unchecked(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_all(path)?)
    }
}
