use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainingData;
use super::strong::{other_clip_position, TripletSource};
use crate::embed::Stream;
use crate::error::{Error, Result};
use crate::losses::{FrameRef, PageRef, Triplet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Candidate frames of one clip for one anchor page.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bag {
    pub anchor: PageRef,
    pub clip: usize,
    pub polarity: Polarity,
    /// 0-based frame indices, ascending.
    pub instances: Vec<usize>,
    pub positive: Vec<bool>,
}

impl Bag {
    pub fn positives(&self) -> Vec<usize> {
        self.select(true)
    }

    /// Instances of a positive bag that label inference turned negative.
    pub fn flipped(&self) -> Vec<usize> {
        self.select(false)
    }

    pub fn positive_count(&self) -> usize {
        self.positive.iter().filter(|p| **p).count()
    }

    fn select(&self, label: bool) -> Vec<usize> {
        self.instances
            .iter()
            .zip(&self.positive)
            .filter(|(_, p)| **p == label)
            .map(|(f, _)| *f)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.len() != self.positive.len() {
            return Err(Error::InvalidArgument("bag labels and instances differ in length".into()));
        }
        match self.polarity {
            Polarity::Positive if self.positive_count() == 0 => {
                Err(Error::InvalidArgument(format!("positive bag of {:?} has no positive", self.anchor)))
            }
            Polarity::Negative if self.positive_count() > 0 => {
                Err(Error::InvalidArgument(format!("negative bag of {:?} has a positive", self.anchor)))
            }
            _ => Ok(()),
        }
    }
}

/// 1-based inclusive frame window of page `page` (of `pages`) in a clip of
/// `frames` frames: first half for the first page (and single-page
/// sequences), second half for the last, middle half otherwise.
pub fn bag_window(page: usize, pages: usize, frames: usize) -> (usize, usize) {
    let o = frames;
    let (lo, hi) = if page == 1 {
        (1, o.div_ceil(2))
    } else if page == pages {
        (o / 2, o)
    } else {
        (o.div_ceil(4), 3 * o / 4)
    };
    let lo = lo.max(1);
    (lo, hi.max(lo))
}

/// One positive bag per anchor page over its paired clip, all instances positive.
pub fn init_bags_weak(data: &TrainingData) -> Result<Vec<Bag>> {
    data.pages()
        .into_iter()
        .map(|anchor| {
            let frames = data.frames(anchor.sequence)?;
            let pages = data.dataset.sequences[anchor.sequence].pages.len();
            let (lo, hi) = bag_window(anchor.page, pages, frames);
            let instances: Vec<usize> = (lo - 1..hi).collect();
            Ok(Bag {
                anchor,
                clip: anchor.sequence,
                polarity: Polarity::Positive,
                positive: vec![true; instances.len()],
                instances,
            })
        })
        .collect()
}

/// Negative bags of an anchor: every other selected clip, all frames.
pub fn negative_bags(data: &TrainingData, anchor: PageRef) -> Result<Vec<Bag>> {
    data.indices
        .iter()
        .filter(|&&c| c != anchor.sequence)
        .map(|&clip| {
            let instances: Vec<usize> = (0..data.frames(clip)?).collect();
            Ok(Bag {
                anchor,
                clip,
                polarity: Polarity::Negative,
                positive: vec![false; instances.len()],
                instances,
            })
        })
        .collect()
}

/// `⌈t·n⌉`, robust to products such as `0.1·30` landing just above an integer.
pub fn flip_count(t: f64, n: usize) -> usize {
    let x = t * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Flips the `⌈t·n⌉` currently-positive instances furthest from the anchor
/// (ties to the lower frame index), keeping at least one positive.
/// `distances[i]` belongs to `bag.instances[i]`. Returns the flipped frames.
pub fn flip_furthest(bag: &mut Bag, distances: &[f64], t: f64) -> Result<Vec<usize>> {
    if distances.len() != bag.instances.len() {
        return Err(Error::InvalidArgument(format!(
            "{} distances for {} instances",
            distances.len(),
            bag.instances.len()
        )));
    }
    if bag.polarity == Polarity::Negative {
        return Ok(Vec::new());
    }
    let mut live: Vec<usize> = (0..bag.instances.len()).filter(|&i| bag.positive[i]).collect();
    let k = flip_count(t, live.len()).min(live.len().saturating_sub(1));
    live.sort_by(|&a, &b| {
        distances[b]
            .total_cmp(&distances[a])
            .then(bag.instances[a].cmp(&bag.instances[b]))
    });
    let mut flipped: Vec<usize> = live[..k]
        .iter()
        .map(|&i| {
            bag.positive[i] = false;
            bag.instances[i]
        })
        .collect();
    flipped.sort_unstable();
    Ok(flipped)
}

/// One label-inference round over all positive bags. `distances(bag)` gives
/// the anchor-to-instance distances under the frozen network.
pub fn mil_label_inference(
    bags: &mut [Bag],
    t: f64,
    mut distances: impl FnMut(&Bag) -> Result<Vec<f64>>,
) -> Result<usize> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Config(format!("MIL threshold must lie in [0, 1), got {t}")));
    }
    let mut total = 0;
    for bag in bags.iter_mut() {
        let d = distances(bag)?;
        total += flip_furthest(bag, &d, t)?.len();
    }
    Ok(total)
}

/// Triplets from the current positive bags.
#[derive(Clone, Debug)]
pub struct WeakSupervision {
    pub bags: Vec<Bag>,
    lookup: HashMap<PageRef, usize>,
}

impl WeakSupervision {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        for b in &bags {
            b.validate()?;
        }
        let lookup = bags.iter().enumerate().map(|(i, b)| (b.anchor, i)).collect();
        Ok(Self { bags, lookup })
    }

    pub fn bag(&self, anchor: PageRef) -> Result<&Bag> {
        self.lookup
            .get(&anchor)
            .map(|&i| &self.bags[i])
            .ok_or_else(|| Error::InvalidArgument(format!("no bag for {anchor:?}")))
    }

    pub fn positive_total(&self) -> usize {
        self.bags.iter().map(Bag::positive_count).sum()
    }
}

impl TripletSource for WeakSupervision {
    /// Positive: a current positive instance. Negative: with probability ½ an
    /// instance already flipped out of the anchor's bag (when there is one),
    /// otherwise any position of another clip.
    fn sample(
        &self,
        data: &TrainingData,
        stream: Stream,
        anchor: PageRef,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Triplet> {
        let bag = self.bag(anchor)?;
        let positives = bag.positives();
        let positive = FrameRef {
            clip: bag.clip,
            frame: positives[rng.random_range(0..positives.len())],
        };
        let flipped = bag.flipped();
        let negative = if !flipped.is_empty() && rng.random_bool(0.5) {
            FrameRef {
                clip: bag.clip,
                frame: flipped[rng.random_range(0..flipped.len())],
            }
        } else {
            other_clip_position(data, stream, bag.clip, rng)?
        };
        Triplet::new(anchor, positive, negative)
    }

    /// Without alignment, any frame of the paired clip may depict the page.
    fn is_match(&self, _data: &TrainingData, _stream: Stream, anchor: PageRef, item: FrameRef) -> bool {
        item.clip == anchor.sequence
    }
}
