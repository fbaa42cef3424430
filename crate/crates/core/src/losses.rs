//! Triplet ranking loss, relation loss and their weighted combination.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::RelationNet;
use crate::error::{Error, Result};
use crate::math::{one_hot, NodeId, ParamStore, Tape, Tensor};

pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DEFAULT_RELATION_PAIRS: usize = 5;
pub const DEFAULT_LAMBDA1: f64 = 0.001;

/// A sketch page of one sequence, addressed by dataset index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageRef {
    pub sequence: usize,
    /// 1-based, as in the alignment annotations.
    pub page: usize,
}

/// A frame (appearance) or flow-stack start (motion) of one clip; 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub clip: usize,
    pub frame: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: PageRef,
    pub positive: FrameRef,
    pub negative: FrameRef,
}

impl Triplet {
    pub fn new(anchor: PageRef, positive: FrameRef, negative: FrameRef) -> Result<Self> {
        if positive == negative {
            return Err(Error::InvalidArgument(format!(
                "triplet positive and negative are the same frame {positive:?}"
            )));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max(0, Δ + ‖a−p‖² − ‖a−n‖²)`.
pub fn triplet_loss(e_a: &[f64], e_p: &[f64], e_n: &[f64], margin: f64) -> Result<f64> {
    if e_a.len() != e_p.len() || e_a.len() != e_n.len() {
        return Err(Error::shape(
            "triplet_loss",
            format!("embedding lengths {}, {}, {}", e_a.len(), e_p.len(), e_n.len()),
        ));
    }
    Ok(triplet_from_distances(squared_distance(e_a, e_p), squared_distance(e_a, e_n), margin))
}

pub fn triplet_from_distances(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (margin + d_pos - d_neg).max(0.0)
}

/// Mean triplet loss over the rows of three `N×D` nodes.
pub fn triplet_loss_batch(tape: &mut Tape, a: NodeId, p: NodeId, n: NodeId, margin: f64) -> Result<NodeId> {
    let d_pos = tape.row_sq_dist(a, p)?;
    let d_neg = tape.row_sq_dist(a, n)?;
    let gap = tape.sub(d_pos, d_neg)?;
    let shifted = tape.add_scalar(gap, margin);
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

/// Cross-entropy of `scores` against the true pair `target`.
pub fn relation_loss_from_scores(scores: &Tensor, target: usize) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} scores",
            scores.len()
        )));
    }
    crate::math::softmax_cross_entropy(scores, &one_hot(scores.len(), target))
}

/// `L_t + λ₁·L_r`.
pub fn combined_loss(l_t: f64, l_r: f64, lambda1: f64) -> Result<f64> {
    if !(lambda1 >= 0.0) {
        return Err(Error::InvalidArgument(format!("λ₁ must be non-negative, got {lambda1}")));
    }
    Ok(l_t + lambda1 * l_r)
}

/// A video item of a mini-batch: the positive or negative of triplet `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VideoRef {
    Positive(usize),
    Negative(usize),
}

impl VideoRef {
    /// Row in a `2B×D` matrix holding positives then negatives.
    pub fn row(self, batch: usize) -> usize {
        match self {
            VideoRef::Positive(j) => j,
            VideoRef::Negative(j) => batch + j,
        }
    }
}

/// `P` sketch–video pairs with exactly one true match.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationBatch {
    /// `(anchor triplet index, video)` per pair.
    pub pairs: Vec<(usize, VideoRef)>,
    pub target: usize,
}

impl RelationBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn target_one_hot(&self) -> Tensor {
        one_hot(self.pairs.len(), self.target)
    }
}

/// Draws one anchor of the mini-batch, pairs it with its own positive and
/// with `P−1` distinct non-matching videos of the batch (other triplets'
/// positives, any negatives), then shuffles the pairs.
///
/// `is_match(anchor, video)` reports whether a video item actually depicts
/// the anchor's page; such items are never used as false pairs.
pub fn sample_relation_pairs(
    batch: usize,
    p: usize,
    rng: &mut impl Rng,
    is_match: impl Fn(usize, VideoRef) -> bool,
) -> Result<RelationBatch> {
    if batch == 0 || p < 2 {
        return Err(Error::InvalidArgument(format!(
            "relation sampling needs a non-empty batch and P ≥ 2 (batch {batch}, P {p})"
        )));
    }
    let anchor = rng.random_range(0..batch);
    let candidates: Vec<VideoRef> = (0..batch)
        .filter(|&j| j != anchor)
        .map(VideoRef::Positive)
        .chain((0..batch).map(VideoRef::Negative))
        .filter(|&v| !is_match(anchor, v))
        .collect();
    if candidates.len() < p - 1 {
        return Err(Error::InvalidArgument(format!(
            "mini-batch of {batch} offers {} non-matching pairs, {} needed",
            candidates.len(),
            p - 1
        )));
    }
    let mut pairs: Vec<(usize, VideoRef)> = sample(rng, candidates.len(), p - 1)
        .into_iter()
        .map(|i| (anchor, candidates[i]))
        .collect();
    pairs.push((anchor, VideoRef::Positive(anchor)));
    pairs.shuffle(rng);
    let target = pairs
        .iter()
        .position(|&(_, v)| v == VideoRef::Positive(anchor))
        .expect("true pair present");
    Ok(RelationBatch { pairs, target })
}

/// Relation loss on the tape. `sketches` is `B×D`, `videos` is `2B×D`
/// (positives then negatives).
pub fn relation_loss(
    tape: &mut Tape,
    store: &ParamStore,
    net: &RelationNet,
    sketches: NodeId,
    videos: NodeId,
    batch: &RelationBatch,
) -> Result<NodeId> {
    let b = tape.value(sketches).shape()[0];
    let anchors: Vec<usize> = batch.pairs.iter().map(|(a, _)| *a).collect();
    let vids: Vec<usize> = batch.pairs.iter().map(|(_, v)| v.row(b)).collect();
    let s = tape.gather_rows(sketches, &anchors)?;
    let v = tape.gather_rows(videos, &vids)?;
    let pairs = tape.concat_cols(s, v)?;
    let scores = net.forward(tape, store, pairs)?;
    tape.softmax_cross_entropy(scores, &batch.target_one_hot())
}
