use rand::Rng;

use super::data::{stack_start, TrainingData};
use crate::embed::Stream;
use crate::error::{Error, Result};
use crate::losses::{FrameRef, PageRef, Triplet};

/// Produces triplets for an anchor page and decides which video items
/// depict a page (those are never used as false relation pairs).
pub trait TripletSource {
    fn sample(&self, data: &TrainingData, stream: Stream, anchor: PageRef, rng: &mut dyn rand::RngCore)
        -> Result<Triplet>;

    fn is_match(&self, data: &TrainingData, stream: Stream, anchor: PageRef, item: FrameRef) -> bool;
}

/// Chance that a strong negative comes from the anchor's own clip.
pub const SAME_CLIP_NEGATIVE: f64 = 0.5;

/// Last usable 0-based position: any frame for appearance, the last full
/// flow stack start for motion.
pub(crate) fn last_position(stream: Stream, frames: usize, l: usize) -> usize {
    match stream {
        Stream::Appearance => frames - 1,
        Stream::Motion => stack_start(frames, frames, l),
    }
}

/// A uniformly drawn position of a clip other than `exclude`.
pub(crate) fn other_clip_position(
    data: &TrainingData,
    stream: Stream,
    exclude: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<FrameRef> {
    let others: Vec<usize> = data.indices.iter().copied().filter(|&c| c != exclude).collect();
    if others.is_empty() {
        return Err(Error::InvalidArgument("negatives from other clips need at least two clips".into()));
    }
    let clip = others[rng.random_range(0..others.len())];
    let last = last_position(stream, data.frames(clip)?, data.flow_l);
    Ok(FrameRef {
        clip,
        frame: rng.random_range(0..=last),
    })
}

/// Triplets from the sketch-to-frames alignment.
#[derive(Clone, Copy, Debug, Default)]
pub struct StrongSupervision;

impl TripletSource for StrongSupervision {
    /// Positive: uniform over the page's interval (for motion, intersected
    /// with the feasible stack starts; an interval past the last start uses
    /// that start). Negative: with probability ½ a position outside the
    /// interval of the same clip, otherwise any position of another clip.
    fn sample(
        &self,
        data: &TrainingData,
        stream: Stream,
        anchor: PageRef,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Triplet> {
        let clip = anchor.sequence;
        let frames = data.frames(clip)?;
        let (lo, hi) = data.interval(anchor)?;
        let (lo, hi) = (lo - 1, hi - 1);
        let last = last_position(stream, frames, data.flow_l);
        let positive = if lo > last {
            log::debug!("interval of {anchor:?} starts after the last flow stack; using start {last}");
            last
        } else {
            rng.random_range(lo..=hi.min(last))
        };
        // A clamped positive excludes that start from the negatives.
        let lo = lo.min(last);
        let removed = hi.min(last) + 1 - lo;
        let outside = last + 1 - removed;
        let negative = if outside > 0 && rng.random_bool(SAME_CLIP_NEGATIVE) {
            // Index into positions 0..=last with the interval removed.
            let k = rng.random_range(0..outside);
            let frame = if k < lo { k } else { k + removed };
            FrameRef { clip, frame }
        } else {
            other_clip_position(data, stream, clip, rng)?
        };
        Triplet::new(anchor, FrameRef { clip, frame: positive }, negative)
    }

    fn is_match(&self, data: &TrainingData, stream: Stream, anchor: PageRef, item: FrameRef) -> bool {
        if item.clip != anchor.sequence {
            return false;
        }
        let Ok((lo, hi)) = data.interval(anchor) else {
            return true;
        };
        let first = item.frame + 1;
        let last = match stream {
            Stream::Appearance => first,
            Stream::Motion => first + data.flow_l,
        };
        first <= hi && last >= lo
    }
}

/// Draws one triplet per anchor.
pub fn build_triplets_strong(
    data: &TrainingData,
    stream: Stream,
    anchors: &[PageRef],
    rng: &mut dyn rand::RngCore,
) -> Result<Vec<Triplet>> {
    anchors
        .iter()
        .map(|&a| StrongSupervision.sample(data, stream, a, rng))
        .collect()
}
