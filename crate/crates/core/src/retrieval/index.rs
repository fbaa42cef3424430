use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matching::{
    cost_table, detect_action, detection_success, fuse_ranks, order_by, ranks_from_scores, sequence_distance_costs,
};
use crate::embed::{ModelParams, Stream};
use crate::error::{Error, Result};
use crate::losses::FrameRef;
use crate::math::{sha256_hex, Tensor};
use crate::training::{stack_start, TrainingData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Appearance,
    Motion,
    RankFuse,
    Concat,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Appearance, Mode::Motion, Mode::RankFuse, Mode::Concat];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Appearance => "app",
            Mode::Motion => "motion",
            Mode::RankFuse => "rankfuse",
            Mode::Concat => "concat",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "app" | "appearance" => Ok(Mode::Appearance),
            "motion" => Ok(Mode::Motion),
            "rankfuse" => Ok(Mode::RankFuse),
            "concat" => Ok(Mode::Concat),
            _ => Err(Error::Config(format!("unknown mode {s:?} (app|motion|rankfuse|concat)"))),
        }
    }
}

/// Per-position embeddings of one clip. Motion position `k` uses the flow
/// stack starting at frame `k`, or the last full stack near the end.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipEntry {
    pub index: usize,
    pub clip_id: String,
    pub appearance: Tensor,
    pub motion: Tensor,
}

/// Per-page embeddings of one sketch sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub index: usize,
    pub sequence_id: String,
    pub truth: String,
    pub appearance: Tensor,
    pub motion: Tensor,
}

fn hcat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(Error::shape("concat", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (n, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut data = Vec::with_capacity(n * (da + db));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(vec![n, da + db], data)
}

impl ClipEntry {
    /// `O×D` positions for a single-stream mode, `O×2D` for concat.
    pub fn positions(&self, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Appearance => Ok(self.appearance.clone()),
            Mode::Motion => Ok(self.motion.clone()),
            Mode::Concat => hcat(&self.appearance, &self.motion),
            Mode::RankFuse => Err(Error::InvalidArgument("rank fusion has no joint embedding".into())),
        }
    }
}

impl Query {
    pub fn pages(&self, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Appearance => Ok(self.appearance.clone()),
            Mode::Motion => Ok(self.motion.clone()),
            Mode::Concat => hcat(&self.appearance, &self.motion),
            Mode::RankFuse => Err(Error::InvalidArgument("rank fusion has no joint embedding".into())),
        }
    }
}

/// Identifies the parameters and clips an index was built from.
pub fn index_digest(model: &ModelParams, data: &TrainingData) -> String {
    let mut text = model.store.digest();
    text.push_str(&data.dataset.manifest.config_hash);
    text.push_str(&format!("{:?}|{}|{}", data.indices, data.flow_l, model.config.flow_scale));
    sha256_hex(text.as_bytes())
}

/// Precomputed embeddings of every gallery clip.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryIndex {
    pub digest: String,
    pub clips: Vec<ClipEntry>,
}

fn embed_stream_positions(model: &ModelParams, data: &TrainingData, stream: Stream, clip: usize) -> Result<Tensor> {
    let frames = data.frames(clip)?;
    let unique = match stream {
        Stream::Appearance => frames,
        Stream::Motion => stack_start(frames, frames, data.flow_l) + 1,
    };
    let items: Vec<FrameRef> = (0..unique).map(|frame| FrameRef { clip, frame }).collect();
    let input = data.video_batch(stream, &items, model.config.flow_scale)?;
    let e = model.branch(stream, crate::embed::Branch::Positive).embed(&model.store, &input)?;
    if unique == frames {
        return Ok(e);
    }
    let d = e.shape()[1];
    let mut out = Vec::with_capacity(frames * d);
    for k in 0..frames {
        out.extend_from_slice(e.row(stack_start(k, frames, data.flow_l)));
    }
    Tensor::new(vec![frames, d], out)
}

impl GalleryIndex {
    pub fn build(model: &ModelParams, data: &TrainingData) -> Result<Self> {
        let clips = data
            .indices
            .iter()
            .map(|&i| {
                Ok(ClipEntry {
                    index: i,
                    clip_id: data.dataset.manifest.entries[i].clip_id.clone(),
                    appearance: embed_stream_positions(model, data, Stream::Appearance, i)?,
                    motion: embed_stream_positions(model, data, Stream::Motion, i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            digest: index_digest(model, data),
            clips,
        })
    }

    pub fn check(&self, digest: &str) -> Result<()> {
        if self.digest != digest {
            return Err(Error::StaleIndex(format!(
                "index built for {}, current parameters give {}",
                &self.digest[..12],
                &digest[..12.min(digest.len())]
            )));
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.clips.iter().map(|c| c.clip_id.clone()).collect()
    }

    pub fn find(&self, clip_id: &str) -> Option<&ClipEntry> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }
}

/// Embeds every page of the selected sequences.
pub fn embed_queries(model: &ModelParams, data: &TrainingData) -> Result<Vec<Query>> {
    data.indices
        .iter()
        .map(|&s| {
            let seq = &data.dataset.sequences[s];
            let app: Vec<&Tensor> = seq.pages.iter().map(|p| &p.appearance_raster).collect();
            let mo: Vec<&Tensor> = seq.pages.iter().map(|p| &p.motion_raster).collect();
            Ok(Query {
                index: s,
                sequence_id: seq.id.clone(),
                truth: seq.paired_clip_id.clone(),
                appearance: model.embed_appearance_sketches(&app)?,
                motion: model.embed_motion_sketch(&mo)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub clip_id: String,
    /// Sequence distance, or the fused rank in rank-fusion mode.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub mode: Mode,
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn rank_of(&self, clip_id: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.clip_id == clip_id).map(|e| e.rank)
    }
}

fn distances(query: &Query, gallery: &GalleryIndex, mode: Mode) -> Result<Vec<f64>> {
    let pages = query.pages(mode)?;
    gallery
        .clips
        .iter()
        .map(|c| sequence_distance_costs(&cost_table(&pages, &c.positions(mode)?)?))
        .collect()
}

/// Ranks the gallery for one query; ties go to the smaller clip id.
pub fn rank_gallery(query: &Query, gallery: &GalleryIndex, mode: Mode, lambda2: f64, digest: &str) -> Result<RankedResult> {
    gallery.check(digest)?;
    let ids = gallery.ids();
    let (scores, order) = match mode {
        Mode::RankFuse => {
            let r_ap = ranks_from_scores(&distances(query, gallery, Mode::Appearance)?, &ids)?;
            let r_mo = ranks_from_scores(&distances(query, gallery, Mode::Motion)?, &ids)?;
            fuse_ranks(&r_ap, &r_mo, lambda2, &ids)?
        }
        _ => {
            let d = distances(query, gallery, mode)?;
            let order = order_by(&d, &ids)?;
            (d, order)
        }
    };
    Ok(RankedResult {
        query_id: query.sequence_id.clone(),
        mode,
        entries: order
            .iter()
            .enumerate()
            .map(|(r, &i)| RankedEntry {
                rank: r + 1,
                clip_id: ids[i].clone(),
                score: scores[i],
            })
            .collect(),
    })
}

/// Share of queries whose true clip is ranked in the top `k`.
pub fn acc_at_k(results: &[RankedResult], truth: &BTreeMap<String, String>, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results".into()));
    }
    let mut hits = 0;
    for r in results {
        let clip = truth
            .get(&r.query_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for query {}", r.query_id)))?;
        if r.rank_of(clip).is_some_and(|rank| rank <= k) {
            hits += 1;
        }
    }
    Ok(hits as f64 / results.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub query_id: String,
    pub page: usize,
    /// 1-based proposed frame.
    pub proposed: usize,
    pub interval: (usize, usize),
    pub success: bool,
}

/// Nearest-position detection for every page of `query` in its true clip.
pub fn detect_pages(query: &Query, clip: &ClipEntry, mode: Mode, data: &TrainingData) -> Result<Vec<DetectionRow>> {
    let pages = query.pages(mode)?;
    let positions = clip.positions(mode)?;
    (0..pages.shape()[0])
        .map(|j| {
            let page = crate::losses::PageRef {
                sequence: query.index,
                page: j + 1,
            };
            let interval = data.interval(page)?;
            let proposed = detect_action(pages.row(j), &positions)? + 1;
            Ok(DetectionRow {
                query_id: query.sequence_id.clone(),
                page: j + 1,
                proposed,
                interval,
                success: detection_success(proposed, interval),
            })
        })
        .collect()
}
