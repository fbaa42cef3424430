//! End-to-end stages over a dataset directory and a run directory.
//!
//! Run directory layout: `config.toml`, then one folder per variant
//! (`strong`, `weak`, `strong-norel`, `weak-norel`) holding
//! `<stream>.ckpt`, `<stream>_log.csv`, `<stream>_mil.json`,
//! `results_<mode>.csv`, `metrics_<mode>.json`, `detection_<mode>.csv`
//! and `detection_<mode>.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SplitSelection};
use crate::embed::{ModelParams, Stream};
use crate::error::{Error, Result};
use crate::flow::FlowCache;
use crate::math::sha256_hex;
use crate::retrieval::{
    acc_at_k, detect_pages, embed_queries, rank_gallery, DetectionRow, GalleryIndex, Mode, RankedResult,
};
use crate::rng::derive_seed;
use crate::synth::{generate_dataset, load_dataset, Dataset, DatasetManifest};
use crate::training::{
    load_stream_checkpoint, train_stream, train_weak, Supervision, TrainOptions, TrainReport, TrainingData,
};

/// Generates the dataset described by `config` under `out`.
pub fn generate(config: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    generate_dataset(&config.data, config.min_frames(), derive_seed(config.seed, "generator"), out)
}

pub fn flow_cache(config: &RunConfig, dataset_dir: &Path) -> Result<FlowCache> {
    FlowCache::new(dataset_dir.join("flows"), config.flow.clone())
}

pub fn new_model(config: &RunConfig) -> Result<ModelParams> {
    ModelParams::new(config.model.clone(), 2 * config.train.flow_l, derive_seed(config.seed, "model"))
}

/// Clips of `dataset` selected by `split`, with flows loaded.
pub fn load_data<'a>(
    config: &RunConfig,
    dataset: &'a Dataset,
    cache: &FlowCache,
    split: SplitSelection,
) -> Result<TrainingData<'a>> {
    let indices = dataset.manifest.indices(split.split());
    if indices.is_empty() {
        return Err(Error::data(&dataset.root, format!("split {split:?} is empty")));
    }
    TrainingData::load(dataset, indices, Some(cache), config.train.flow_l)
}

/// Folder name of a training variant.
pub fn variant_name(supervision: Supervision, relation: bool) -> String {
    if relation {
        supervision.to_string()
    } else {
        format!("{supervision}-norel")
    }
}

/// Trains the requested streams in place; each stream is independent.
pub fn train_model(
    model: &mut ModelParams,
    data: &TrainingData,
    config: &RunConfig,
    supervision: Supervision,
    streams: &[Stream],
    options: impl Fn(Stream) -> TrainOptions,
) -> Result<BTreeMap<Stream, TrainReport>> {
    let mut out = BTreeMap::new();
    for &stream in streams {
        let opts = options(stream);
        let seed = derive_seed(config.seed, "training");
        let report = match supervision {
            Supervision::Strong => train_stream(model, data, stream, &config.train, seed, &opts)?,
            Supervision::Weak => train_weak(model, data, stream, &config.train, seed, &opts)?,
        };
        out.insert(stream, report);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub mode: Mode,
    pub tolerance: usize,
    /// Over every page of every query, in its true clip.
    pub pages: usize,
    pub rate_all: f64,
    /// Over pages of queries whose true clip is ranked first in `mode`.
    pub retrieved_pages: usize,
    pub rate_retrieved: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: Mode,
    pub queries: usize,
    pub gallery: usize,
    /// `acc@K` keyed by `K`.
    pub acc: BTreeMap<usize, f64>,
    pub detection: Option<DetectionMetrics>,
    pub config_digest: String,
    pub params_digest: String,
    pub index_digest: String,
}

impl ModeMetrics {
    pub fn acc_at(&self, k: usize) -> Option<f64> {
        self.acc.get(&k).copied()
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: BTreeMap<Mode, ModeMetrics>,
    pub results: BTreeMap<Mode, Vec<RankedResult>>,
    pub detections: BTreeMap<Mode, Vec<DetectionRow>>,
}

/// Ranks every selected query against the gallery in each mode and runs
/// detection for the embedding modes.
pub fn evaluate_model(
    model: &ModelParams,
    data: &TrainingData,
    config: &RunConfig,
    modes: &[Mode],
    ks: &[usize],
) -> Result<Evaluation> {
    let gallery = GalleryIndex::build(model, data)?;
    let queries = embed_queries(model, data)?;
    let truth: BTreeMap<String, String> = queries
        .iter()
        .map(|q| (q.sequence_id.clone(), q.truth.clone()))
        .collect();
    let mut eval = Evaluation {
        metrics: BTreeMap::new(),
        results: BTreeMap::new(),
        detections: BTreeMap::new(),
    };
    for &mode in modes {
        let results = queries
            .iter()
            .map(|q| rank_gallery(q, &gallery, mode, config.retrieval.lambda2, &gallery.digest))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = BTreeMap::new();
        for &k in ks {
            acc.insert(k, acc_at_k(&results, &truth, k)?);
        }
        let accs: Vec<f64> = acc.values().copied().collect();
        if accs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Numerical(format!("{mode}: acc@K decreases in K: {acc:?}")));
        }
        let detection = if mode == Mode::RankFuse {
            None
        } else {
            let mut rows = Vec::new();
            let (mut hits, mut retrieved, mut retrieved_hits) = (0, 0, 0);
            for (q, r) in queries.iter().zip(&results) {
                let clip = gallery
                    .find(&q.truth)
                    .ok_or_else(|| Error::InvalidArgument(format!("true clip {} not in gallery", q.truth)))?;
                let correct = r.rank_of(&q.truth) == Some(1);
                for row in detect_pages(q, clip, mode, data)? {
                    hits += row.success as usize;
                    if correct {
                        retrieved += 1;
                        retrieved_hits += row.success as usize;
                    }
                    rows.push(row);
                }
            }
            let pages = rows.len();
            eval.detections.insert(mode, rows);
            Some(DetectionMetrics {
                mode,
                tolerance: crate::retrieval::DETECTION_TOLERANCE,
                pages,
                rate_all: hits as f64 / pages.max(1) as f64,
                retrieved_pages: retrieved,
                rate_retrieved: (retrieved > 0).then(|| retrieved_hits as f64 / retrieved as f64),
            })
        };
        eval.metrics.insert(
            mode,
            ModeMetrics {
                mode,
                queries: queries.len(),
                gallery: gallery.clips.len(),
                acc,
                detection,
                config_digest: config.digest(),
                params_digest: model.store.digest(),
                index_digest: gallery.digest.clone(),
            },
        );
        eval.results.insert(mode, results);
    }
    Ok(eval)
}

// ---- run-directory stages ----

pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn variant(&self, variant: &str) -> PathBuf {
        self.root.join(variant)
    }

    pub fn checkpoint(&self, variant: &str, stream: Stream) -> PathBuf {
        self.variant(variant).join(format!("{stream}.ckpt"))
    }

    pub fn log(&self, variant: &str, stream: Stream) -> PathBuf {
        self.variant(variant).join(format!("{stream}_log.csv"))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(format!("json encoding: {e}")))
}

/// Writes the run config, or checks it against the one already there.
pub fn pin_config(config: &RunConfig, layout: &RunLayout) -> Result<()> {
    let path = layout.config();
    if path.exists() {
        let existing = RunConfig::load(&path)?;
        if existing.digest() != config.digest() {
            return Err(Error::Config(format!(
                "{} already holds a different config; use a fresh run directory",
                path.display()
            )));
        }
        return Ok(());
    }
    config.save(&path)
}

/// Trains and checkpoints the requested streams of one variant. The run
/// directory pins `base`; `relation` only selects the variant.
pub fn run_train(
    base: &RunConfig,
    dataset_dir: &Path,
    layout: &RunLayout,
    supervision: Supervision,
    streams: &[Stream],
    resume: bool,
    relation: bool,
) -> Result<BTreeMap<Stream, TrainReport>> {
    pin_config(base, layout)?;
    let mut config = base.clone();
    config.train.relation = relation;
    let config = &config;
    let dataset = load_dataset(dataset_dir)?;
    let cache = flow_cache(config, dataset_dir)?;
    let data = load_data(config, &dataset, &cache, config.retrieval.train_split)?;
    let variant = variant_name(supervision, config.train.relation);
    let mut model = new_model(config)?;
    let digest = config.digest();
    let reports = train_model(&mut model, &data, config, supervision, streams, |stream| TrainOptions {
        checkpoint: Some(layout.checkpoint(&variant, stream)),
        log: Some(layout.log(&variant, stream)),
        resume: resume && layout.checkpoint(&variant, stream).exists(),
        config_hash: digest.clone(),
        ..TrainOptions::default()
    })?;
    for (stream, report) in &reports {
        if supervision == Supervision::Weak {
            write(
                &layout.variant(&variant).join(format!("{stream}_mil.json")),
                &to_json(&report.mil_rounds)?,
            )?;
        }
    }
    Ok(reports)
}

/// A model with both stream checkpoints of a variant loaded.
pub fn load_trained(config: &RunConfig, layout: &RunLayout, variant: &str) -> Result<ModelParams> {
    let mut model = new_model(config)?;
    let digest = config.digest();
    for stream in Stream::ALL {
        let path = layout.checkpoint(variant, stream);
        if !path.exists() {
            return Err(Error::Config(format!(
                "missing checkpoint {}; train the {stream} stream first",
                path.display()
            )));
        }
        load_stream_checkpoint(&mut model, &path, Some(&digest))?;
    }
    Ok(model)
}

/// Evaluates a trained variant and writes results, metrics and detections.
pub fn run_evaluate(
    config: &RunConfig,
    dataset_dir: &Path,
    layout: &RunLayout,
    variant: &str,
    modes: &[Mode],
    ks: &[usize],
) -> Result<Evaluation> {
    let model = load_trained(config, layout, variant)?;
    let dataset = load_dataset(dataset_dir)?;
    let cache = flow_cache(config, dataset_dir)?;
    let data = load_data(config, &dataset, &cache, config.retrieval.eval_split)?;
    let eval = evaluate_model(&model, &data, config, modes, ks)?;
    let dir = layout.variant(variant);
    for (mode, results) in &eval.results {
        let mut csv = String::from("query_id,rank,clip_id,distance,mode\n");
        for r in results {
            for e in &r.entries {
                let _ = writeln!(csv, "{},{},{},{},{}", r.query_id, e.rank, e.clip_id, e.score, mode);
            }
        }
        write(&dir.join(format!("results_{mode}.csv")), &csv)?;
        write(&dir.join(format!("metrics_{mode}.json")), &to_json(&eval.metrics[mode])?)?;
    }
    for (mode, rows) in &eval.detections {
        let mut csv = String::from("query_id,page,proposed,interval_start,interval_end,success\n");
        for d in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                d.query_id, d.page, d.proposed, d.interval.0, d.interval.1, d.success
            );
        }
        write(&dir.join(format!("detection_{mode}.csv")), &csv)?;
        write(
            &dir.join(format!("detection_{mode}.json")),
            &to_json(&eval.metrics[mode].detection)?,
        )?;
    }
    Ok(eval)
}

pub const VARIANTS: [&str; 4] = ["strong", "weak", "strong-norel", "weak-norel"];

/// Table of acc@K per variant and mode, plus relation-module deltas.
/// Writes `report.md` and `report.csv` into the run directory.
pub fn run_report(layout: &RunLayout) -> Result<String> {
    let ks = [1usize, 5, 10];
    let mut md = String::from("| variant | mode | acc@1 | acc@5 | acc@10 | detection |\n|---|---|---|---|---|---|\n");
    let mut csv = String::from("variant,mode,acc@1,acc@5,acc@10,detection\n");
    let mut acc1: BTreeMap<(String, Mode), f64> = BTreeMap::new();
    let mut any = false;
    for variant in VARIANTS {
        for mode in Mode::ALL {
            let path = layout.variant(variant).join(format!("metrics_{mode}.json"));
            let cells: Vec<String> = if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let m: ModeMetrics =
                    serde_json::from_str(&text).map_err(|e| Error::data(&path, e.to_string()))?;
                any = true;
                if let Some(a) = m.acc_at(1) {
                    acc1.insert((variant.to_string(), mode), a);
                }
                let mut c: Vec<String> = ks
                    .iter()
                    .map(|k| m.acc_at(*k).map_or("absent".into(), |a| format!("{a:.4}")))
                    .collect();
                c.push(
                    m.detection
                        .map_or("n/a".into(), |d| format!("{:.4}", d.rate_all)),
                );
                c
            } else {
                vec!["absent".into(); 4]
            };
            let _ = writeln!(md, "| {variant} | {mode} | {} |", cells.join(" | "));
            let _ = writeln!(csv, "{variant},{mode},{}", cells.join(","));
        }
    }
    if !any {
        return Err(Error::Config(format!("no metrics found under {}", layout.root.display())));
    }
    let mut deltas = String::new();
    for sup in ["strong", "weak"] {
        for mode in Mode::ALL {
            let with = acc1.get(&(sup.to_string(), mode));
            let without = acc1.get(&(format!("{sup}-norel"), mode));
            if let (Some(a), Some(b)) = (with, without) {
                let _ = writeln!(deltas, "| {sup} | {mode} | {:+.4} |", a - b);
            }
        }
    }
    if !deltas.is_empty() {
        md.push_str("\nRelation module effect (acc@1 with minus without):\n\n| supervision | mode | delta |\n|---|---|---|\n");
        md.push_str(&deltas);
    }
    write(&layout.root.join("report.md"), &md)?;
    write(&layout.root.join("report.csv"), &csv)?;
    Ok(md)
}

/// Digest of a dataset manifest file, printed after generation.
pub fn manifest_digest(dataset_dir: &Path) -> Result<String> {
    let path = dataset_dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(&bytes))
}
