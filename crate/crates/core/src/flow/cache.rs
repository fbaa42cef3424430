//! On-disk memo of consecutive-frame flows per clip.
//!
//! File layout: 8-byte magic, u32 version, u32 pair count, u32 height, u32
//! width, 64 ASCII hex bytes of the params digest, 64 of the clip content
//! digest, then little-endian f32 planes `u, v` for each pair.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::stack::{consecutive_flows, stack_from_pairs, FlowStack};
use super::tvl1::{FlowField, FlowParams};
use crate::error::{Error, Result};
use crate::math::{hex_digest, Tensor};
use crate::synth::VideoClip;

const MAGIC: &[u8; 8] = b"SBVRFLOW";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 16 + 128;

pub struct FlowCache {
    dir: PathBuf,
    params: FlowParams,
    digest: String,
    memory: Mutex<HashMap<String, Arc<Vec<FlowField>>>>,
    computed_pairs: AtomicUsize,
    recoveries: AtomicUsize,
}

fn clip_digest(clip: &VideoClip) -> String {
    let mut h = Sha256::new();
    for f in &clip.frames {
        for s in f.shape() {
            h.update((*s as u64).to_le_bytes());
        }
        for v in f.data() {
            h.update((*v as f32).to_le_bytes());
        }
    }
    hex_digest(&h.finalize())
}

impl FlowCache {
    pub fn new(dir: impl Into<PathBuf>, params: FlowParams) -> Result<Self> {
        params.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            digest: params.digest(),
            dir,
            params,
            memory: Mutex::new(HashMap::new()),
            computed_pairs: AtomicUsize::new(0),
            recoveries: AtomicUsize::new(0),
        })
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    /// Frame pairs whose flow was computed rather than read back.
    pub fn computed_pairs(&self) -> usize {
        self.computed_pairs.load(Ordering::Relaxed)
    }

    /// Cache files found corrupt and rebuilt.
    pub fn recoveries(&self) -> usize {
        self.recoveries.load(Ordering::Relaxed)
    }

    pub fn file_path(&self, clip_id: &str) -> PathBuf {
        self.dir.join(format!("{clip_id}_{}.bin", &self.digest[..16]))
    }

    /// Drops in-memory entries so the next lookup reads from disk.
    pub fn clear_memory(&self) {
        self.memory.lock().expect("cache lock").clear();
    }

    /// Flows between all consecutive frames of `clip`.
    pub fn pair_flows(&self, clip: &VideoClip) -> Result<Arc<Vec<FlowField>>> {
        let content = clip_digest(clip);
        let key = format!("{}:{content}", clip.id);
        if let Some(hit) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let path = self.file_path(&clip.id);
        let flows = match self.read(&path, &content, clip.len().saturating_sub(1)) {
            Ok(Some(f)) => f,
            Ok(None) => self.compute_and_store(clip, &path, &content)?,
            Err(e) => {
                log::warn!("flow cache {} is corrupt ({e}); recomputing", path.display());
                self.recoveries.fetch_add(1, Ordering::Relaxed);
                self.compute_and_store(clip, &path, &content)?
            }
        };
        let flows = Arc::new(flows);
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&flows));
        Ok(flows)
    }

    pub fn stack(&self, clip: &VideoClip, start: usize, l: usize) -> Result<FlowStack> {
        stack_from_pairs(&self.pair_flows(clip)?, start, l)
    }

    /// Every full stack of the clip, by start frame.
    pub fn stacks(&self, clip: &VideoClip, l: usize) -> Result<Vec<FlowStack>> {
        let pairs = self.pair_flows(clip)?;
        (0..(pairs.len() + 1).saturating_sub(l))
            .map(|s| stack_from_pairs(&pairs, s, l))
            .collect()
    }

    fn compute_and_store(&self, clip: &VideoClip, path: &Path, content: &str) -> Result<Vec<FlowField>> {
        let flows = consecutive_flows(clip, &self.params)?;
        self.computed_pairs.fetch_add(flows.len(), Ordering::Relaxed);
        self.write(path, content, &flows)?;
        Ok(flows)
    }

    fn write(&self, path: &Path, content: &str, flows: &[FlowField]) -> Result<()> {
        let (h, w) = flows.first().map_or((0, 0), |f| (f.height(), f.width()));
        let mut bytes = Vec::with_capacity(HEADER + flows.len() * 2 * h * w * 4);
        bytes.extend_from_slice(MAGIC);
        for v in [VERSION, flows.len() as u32, h as u32, w as u32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(self.digest.as_bytes());
        bytes.extend_from_slice(content.as_bytes());
        for f in flows {
            for t in [&f.u, &f.v] {
                for v in t.data() {
                    bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        // Write then rename so a crash never leaves a half-written file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// `Ok(None)` when the file is absent or belongs to other params or
    /// frames; `Err` when it exists but cannot be parsed.
    fn read(&self, path: &Path, content: &str, pairs: usize) -> Result<Option<Vec<FlowField>>> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let bad = |d: &str| Error::data(path, d.to_string());
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (version, n, h, w) = (word(0), word(1), word(2), word(3));
        if version != VERSION as usize {
            return Err(bad("unsupported version"));
        }
        if &bytes[24..88] != self.digest.as_bytes() || &bytes[88..152] != content.as_bytes() {
            return Ok(None);
        }
        if n != pairs || bytes.len() != HEADER + n * 2 * h * w * 4 {
            return Err(bad("size does not match header"));
        }
        let mut values = bytes[HEADER..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))));
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: Vec<f64> = values.by_ref().take(h * w).collect();
            let v: Vec<f64> = values.by_ref().take(h * w).collect();
            let (u, v) = match (Tensor::new(vec![h, w], u), Tensor::new(vec![h, w], v)) {
                (Ok(u), Ok(v)) => (u, v),
                _ => return Err(bad("non-finite flow values")),
            };
            out.push(FlowField { u, v });
        }
        Ok(Some(out))
    }
}
