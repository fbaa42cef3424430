//! Dataset generation and on-disk format.
//!
//! Layout under the dataset root:
//! `manifest.json`, `clips/<clip>.bin`, `sketches/<seq>.json` with
//! `sketches/<seq>_pageNN_{ap,mo}.pgm`, and `alignments/<seq>.json`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::render_video;
use super::sketch::render_sketch_pages;
use super::spec::ClipSpec;
use super::twins::{make_twins, random_appearance, ProgramSampler, TwinRole, TwinSpec};
use super::types::{AlignmentAnnotation, SketchPage, SketchSequence, Stroke, VideoClip};
use super::{splitmix64, DataConfig};
use crate::error::{Error, Result};
use crate::math::{sha256_hex, Tensor};

const CLIP_MAGIC: &[u8; 8] = b"SBVRCLP1";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub sequence_id: String,
    pub clip_id: String,
    pub sequence_file: String,
    pub clip_file: String,
    pub alignment_file: String,
    pub split: Split,
    pub role: TwinRole,
    pub pair: Option<usize>,
    pub spec: ClipSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: DataConfig,
    pub min_frames: usize,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", self.version)));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            for id in [&e.sequence_id, &e.clip_id] {
                if !seen.insert(id.as_str()) {
                    return Err(Error::InvalidArgument(format!("duplicate id {id} in manifest")));
                }
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|i| split.is_none_or(|s| self.entries[*i].split == s))
            .collect()
    }
}

/// A loaded dataset: sketches and alignments in memory, clips read on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub sequences: Vec<SketchSequence>,
    pub alignments: Vec<AlignmentAnnotation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn clip(&self, index: usize) -> Result<VideoClip> {
        load_clip(&self.root.join(&self.manifest.entries[index].clip_file))
    }
}

pub fn config_hash(config: &DataConfig, min_frames: usize) -> String {
    let json = serde_json::to_vec(&(config, min_frames)).expect("config serialises");
    sha256_hex(&json)
}

fn assign_splits(n: usize, proportions: [f64; 3], seed: u64) -> Vec<Split> {
    let total: f64 = proportions.iter().sum();
    let n_train = (n as f64 * proportions[0] / total).round() as usize;
    let n_val = ((n as f64 * proportions[1] / total).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5151)));
    let mut out = vec![Split::Test; n];
    for (rank, i) in order.into_iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Twin clips come first, then independent random clips whose RNG is
/// `seed ⊕ splitmix(index)` so any subset can be regenerated alone.
pub fn clip_specs(config: &DataConfig, min_frames: usize, seed: u64) -> Result<Vec<TwinSpec>> {
    config.validate()?;
    let mut specs = make_twins(config, min_frames, splitmix64(seed))?;
    let sampler = ProgramSampler::new(config, min_frames);
    for k in 0..config.random_clips {
        let index = specs.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix64(index));
        let appearance = random_appearance(&mut rng);
        let program = sampler.sample_program(&mut rng, &[appearance], |_| true)?;
        specs.push(TwinSpec {
            spec: ClipSpec::centred(appearance, program, config.frame_size),
            role: TwinRole::Unpaired,
            pair: k,
        });
    }
    Ok(specs)
}

/// Generates, renders and writes a dataset to `root`.
pub fn generate_dataset(config: &DataConfig, min_frames: usize, seed: u64, root: &Path) -> Result<DatasetManifest> {
    let specs = clip_specs(config, min_frames, seed)?;
    let splits = assign_splits(specs.len(), config.split, seed);
    let mut entries = Vec::with_capacity(specs.len());
    let mut items = Vec::with_capacity(specs.len());
    for (i, (t, split)) in specs.into_iter().zip(splits).enumerate() {
        let clip_id = format!("clip_{i:04}");
        let seq_id = format!("seq_{i:04}");
        let clip = render_video(&t.spec, &clip_id, min_frames)?;
        let (seq, align) = render_sketch_pages(&t.spec, &seq_id, &clip_id, min_frames)?;
        entries.push(DatasetEntry {
            sequence_file: format!("sketches/{seq_id}.json"),
            clip_file: format!("clips/{clip_id}.bin"),
            alignment_file: format!("alignments/{seq_id}.json"),
            sequence_id: seq_id,
            clip_id,
            split,
            role: t.role,
            pair: (t.role != TwinRole::Unpaired).then_some(t.pair),
            spec: t.spec,
        });
        items.push((seq, align, clip));
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        config_hash: config_hash(config, min_frames),
        config: config.clone(),
        min_frames,
        entries,
    };
    save_dataset(root, &manifest, &items)?;
    log::info!("generated {} clips into {}", manifest.entries.len(), root.display());
    Ok(manifest)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct PageRecord {
    page_index: usize,
    is_static: bool,
    strokes: Vec<Stroke>,
    appearance_raster: String,
    motion_raster: String,
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    id: String,
    paired_clip_id: String,
    pages: Vec<PageRecord>,
}

/// Writes the manifest and, for each entry, its sketch sequence, alignment and clip.
pub fn save_dataset(
    root: &Path,
    manifest: &DatasetManifest,
    items: &[(SketchSequence, AlignmentAnnotation, VideoClip)],
) -> Result<()> {
    manifest.validate()?;
    if items.len() != manifest.entries.len() {
        return Err(Error::InvalidArgument(format!(
            "{} items for {} manifest entries",
            items.len(),
            manifest.entries.len()
        )));
    }
    for sub in ["clips", "sketches", "alignments"] {
        create_dir(&root.join(sub))?;
    }
    for (entry, (seq, align, clip)) in manifest.entries.iter().zip(items) {
        let seq_path = root.join(&entry.sequence_file);
        let dir = seq_path.parent().unwrap_or(root).to_path_buf();
        let mut pages = Vec::with_capacity(seq.pages.len());
        for p in &seq.pages {
            let ap = format!("{}_page{:02}_ap.pgm", seq.id, p.page_index);
            let mo = format!("{}_page{:02}_mo.pgm", seq.id, p.page_index);
            write_pgm(&dir.join(&ap), &p.appearance_raster)?;
            write_pgm(&dir.join(&mo), &p.motion_raster)?;
            pages.push(PageRecord {
                page_index: p.page_index,
                is_static: p.is_static,
                strokes: p.strokes.clone(),
                appearance_raster: ap,
                motion_raster: mo,
            });
        }
        let record = SequenceRecord {
            id: seq.id.clone(),
            paired_clip_id: seq.paired_clip_id.clone(),
            pages,
        };
        write_file(&seq_path, &to_json(&record)?)?;
        write_file(&root.join(&entry.alignment_file), &to_json(align)?)?;
        write_clip(&root.join(&entry.clip_file), clip)?;
    }
    write_file(&root.join("manifest.json"), &to_json(manifest)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidArgument(format!("serialisation failed: {e}")))
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::data(path, e.to_string()))
}

/// Loads the manifest, sketches and alignments and checks every clip file exists.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    let manifest: DatasetManifest = from_json(&manifest_path)?;
    manifest
        .validate()
        .map_err(|e| Error::data(&manifest_path, e.to_string()))?;
    let mut sequences = Vec::with_capacity(manifest.entries.len());
    let mut alignments = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let clip_path = root.join(&entry.clip_file);
        if !clip_path.is_file() {
            return Err(Error::data(&clip_path, format!("clip {} is missing", entry.clip_id)));
        }
        let seq_path = root.join(&entry.sequence_file);
        let record: SequenceRecord = from_json(&seq_path)?;
        if record.id != entry.sequence_id || record.paired_clip_id != entry.clip_id {
            return Err(Error::data(&seq_path, "sequence or paired clip id disagrees with manifest"));
        }
        let dir = seq_path.parent().unwrap_or(root);
        let mut pages = Vec::with_capacity(record.pages.len());
        for p in record.pages {
            pages.push(SketchPage {
                page_index: p.page_index,
                is_static: p.is_static,
                strokes: p.strokes,
                appearance_raster: read_pgm(&dir.join(&p.appearance_raster))?,
                motion_raster: read_pgm(&dir.join(&p.motion_raster))?,
            });
        }
        let seq = SketchSequence {
            id: record.id,
            paired_clip_id: record.paired_clip_id,
            pages,
        };
        seq.validate().map_err(|e| Error::data(&seq_path, e.to_string()))?;
        let align_path = root.join(&entry.alignment_file);
        let align: AlignmentAnnotation = from_json(&align_path)?;
        align
            .validate(seq.pages.len(), entry.spec.duration_frames())
            .map_err(|e| Error::data(&align_path, e.to_string()))?;
        sequences.push(seq);
        alignments.push(align);
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
        sequences,
        alignments,
    })
}

/// 8-bit binary PGM of a `1×H×W` raster with values in `[0, 1]`.
pub fn write_pgm(path: &Path, raster: &Tensor) -> Result<()> {
    let (h, w) = match raster.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::shape("write_pgm", format!("expected 1×H×W, got {s:?}"))),
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(raster.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    write_file(path, &bytes)
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let bad = |d: &str| Error::data(path, d.to_string());
    // Header: magic, width, height, maxval separated by whitespace.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit P5 PGM is supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad PGM width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad PGM height"))?;
    if w == 0 || h == 0 || bytes.len() != pos + w * h {
        return Err(bad("PGM size does not match header"));
    }
    let data = bytes[pos..].iter().map(|b| f64::from(*b) / 255.0).collect();
    Ok(Tensor::from_parts(vec![1, h, w], data))
}

fn write_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    let (h, w) = (clip.height(), clip.width());
    let mut bytes = Vec::with_capacity(28 + clip.len() * 3 * h * w * 4);
    bytes.extend_from_slice(CLIP_MAGIC);
    for v in [clip.len(), 3, h, w, clip.fps as usize] {
        bytes.write_all(&(v as u32).to_le_bytes()).expect("vec write");
    }
    for f in &clip.frames {
        for v in f.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_file(path, &bytes)
}

/// Reads a packed clip; its id is the file stem.
pub fn load_clip(path: &Path) -> Result<VideoClip> {
    let bytes = read_file(path)?;
    let bad = |d: &str| Error::data(path, d.to_string());
    if bytes.len() < 28 || &bytes[..8] != CLIP_MAGIC {
        return Err(bad("not a clip file"));
    }
    let header: Vec<usize> = (0..5)
        .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let (frames, c, h, w, fps) = (header[0], header[1], header[2], header[3], header[4] as u32);
    let plane = c * h * w;
    if frames == 0 || c != 3 || h == 0 || w == 0 || bytes.len() != 28 + frames * plane * 4 {
        return Err(bad("clip size does not match header"));
    }
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = 28 + f * plane * 4;
        let data: Vec<f64> = bytes[start..start + plane * 4]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad("pixel values outside [0, 1]"));
        }
        out.push(Tensor::from_parts(vec![c, h, w], data));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(VideoClip { id, frames: out, fps })
}
