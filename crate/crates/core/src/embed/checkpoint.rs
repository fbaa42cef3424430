//! Binary checkpoints of named parameters, optimizer state, RNG state and
//! an opaque JSON trainer state.
//!
//! Layout (little-endian): magic `SBVRCKPT`, u32 version, u8 precision
//! (4 or 8 bytes per value), 64 hex bytes of the config hash, u32 blob
//! count, blobs, 56 bytes of RNG state, u32-prefixed JSON state and a
//! trailing SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{ParamId, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"SBVRCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    /// Needed for bit-identical resume.
    #[default]
    F64,
}

impl Precision {
    fn width(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// One named parameter with its RMSprop accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub value: Tensor,
    pub square_avg: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
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
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub blobs: Vec<Blob>,
    pub rng: RngState,
    /// Trainer-specific JSON (epoch, iteration, bags, ...).
    pub state: String,
}

impl Checkpoint {
    pub fn capture(config_hash: &str, store: &ParamStore, ids: &[ParamId], rng: &ChaCha8Rng, state: String) -> Self {
        let blobs = ids
            .iter()
            .map(|&id| {
                let p = store.get(id);
                Blob {
                    name: p.name().to_string(),
                    value: p.value.clone(),
                    square_avg: p.square_avg.clone(),
                }
            })
            .collect();
        Self {
            config_hash: config_hash.to_string(),
            blobs,
            rng: RngState::capture(rng),
            state,
        }
    }

    /// Writes every blob into the parameter of the same name.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        for b in &self.blobs {
            let id = store
                .find(&b.name)
                .ok_or_else(|| Error::Config(format!("checkpoint parameter '{}' is not in the model", b.name)))?;
            let p = store.get_mut(id);
            if p.value.shape() != b.value.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter '{}' has shape {:?}, model expects {:?}",
                    b.name,
                    b.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = b.value.clone();
            p.square_avg = b.square_avg.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>> {
        if self.config_hash.len() != 64 || !self.config_hash.is_ascii() {
            return Err(Error::InvalidArgument("config hash must be 64 hex characters".into()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(precision.width());
        out.extend_from_slice(self.config_hash.as_bytes());
        put_u32(&mut out, self.blobs.len());
        for b in &self.blobs {
            put_u32(&mut out, b.name.len());
            out.extend_from_slice(b.name.as_bytes());
            put_u32(&mut out, b.value.ndim());
            for d in b.value.shape() {
                put_u32(&mut out, *d);
            }
            for t in [&b.value, &b.square_avg] {
                for v in t.data() {
                    match precision {
                        Precision::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                        Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    }
                }
            }
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u32(&mut out, self.state.len());
        out.extend_from_slice(self.state.as_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |d: &str| Error::data(origin, d.to_string());
        if bytes.len() < 8 + 4 + 1 + 64 + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic or truncated)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32().ok_or_else(|| bad("truncated"))?;
        if version != VERSION as usize {
            return Err(bad("unsupported checkpoint version"));
        }
        let width = r.take(1).ok_or_else(|| bad("truncated"))?[0];
        if width != 4 && width != 8 {
            return Err(bad("unknown precision"));
        }
        let config_hash = std::str::from_utf8(r.take(64).ok_or_else(|| bad("truncated"))?)
            .map_err(|_| bad("config hash is not ASCII"))?
            .to_string();
        let n = r.u32().ok_or_else(|| bad("truncated"))?;
        let mut blobs = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name_len = r.u32().ok_or_else(|| bad("truncated"))?;
            let name = std::str::from_utf8(r.take(name_len).ok_or_else(|| bad("truncated"))?)
                .map_err(|_| bad("parameter name is not UTF-8"))?
                .to_string();
            let ndim = r.u32().ok_or_else(|| bad("truncated"))?;
            if ndim > 8 {
                return Err(bad("implausible tensor rank"));
            }
            let shape = (0..ndim)
                .map(|_| r.u32())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated"))?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| bad("tensor too large"))?;
            let mut tensors = Vec::with_capacity(2);
            for _ in 0..2 {
                let raw = r
                    .take(count.checked_mul(width as usize).ok_or_else(|| bad("tensor too large"))?)
                    .ok_or_else(|| bad("truncated"))?;
                let data: Vec<f64> = if width == 8 {
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect()
                } else {
                    raw.chunks_exact(4)
                        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                        .collect()
                };
                tensors.push(Tensor::new(shape.clone(), data).map_err(|_| bad("non-finite parameter"))?);
            }
            let square_avg = tensors.pop().expect("two tensors");
            let value = tensors.pop().expect("two tensors");
            blobs.push(Blob {
                name,
                value,
                square_avg,
            });
        }
        let seed: [u8; 32] = r.take(32).ok_or_else(|| bad("truncated"))?.try_into().expect("32 bytes");
        let stream = u64::from_le_bytes(r.take(8).ok_or_else(|| bad("truncated"))?.try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(r.take(16).ok_or_else(|| bad("truncated"))?.try_into().expect("16 bytes"));
        let state_len = r.u32().ok_or_else(|| bad("truncated"))?;
        let state = std::str::from_utf8(r.take(state_len).ok_or_else(|| bad("truncated"))?)
            .map_err(|_| bad("state is not UTF-8"))?
            .to_string();
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            config_hash,
            blobs,
            rng: RngState { seed, stream, word_pos },
            state,
        })
    }

    pub fn save(&self, path: &Path, precision: Precision) -> Result<()> {
        let bytes = self.to_bytes(precision)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}
