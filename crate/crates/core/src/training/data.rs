use std::sync::Arc;

use crate::embed::{flow_batch, frame_batch, sketch_batch, Stream};
use crate::error::{Error, Result};
use crate::flow::{stack_from_pairs, FlowCache, FlowField};
use crate::losses::{FrameRef, PageRef};
use crate::math::Tensor;
use crate::synth::{Dataset, SketchPage, VideoClip};

/// Start of the flow stack used for frame `frame` (0-based): the stack
/// starting there, or the last full stack near the end of the clip.
pub fn stack_start(frame: usize, frames: usize, l: usize) -> usize {
    frame.min(frames.saturating_sub(l + 1))
}

/// In-memory clips (and pair flows for the motion stream) of a dataset subset.
pub struct TrainingData<'a> {
    pub dataset: &'a Dataset,
    /// Dataset indices taking part; sequence `i` is paired with clip `i`.
    pub indices: Vec<usize>,
    pub flow_l: usize,
    clips: Vec<Option<VideoClip>>,
    flows: Vec<Option<Arc<Vec<FlowField>>>>,
}

impl<'a> TrainingData<'a> {
    /// Loads the clips in `indices`; pair flows are read through `cache` when given.
    pub fn load(dataset: &'a Dataset, indices: Vec<usize>, cache: Option<&FlowCache>, flow_l: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("no clips selected".into()));
        }
        if flow_l == 0 {
            return Err(Error::Config("flow stack length L must be positive".into()));
        }
        let mut clips: Vec<Option<VideoClip>> = (0..dataset.len()).map(|_| None).collect();
        let mut flows: Vec<Option<Arc<Vec<FlowField>>>> = vec![None; dataset.len()];
        for &i in &indices {
            if i >= dataset.len() {
                return Err(Error::InvalidArgument(format!("clip index {i} out of range")));
            }
            let clip = dataset.clip(i)?;
            if clip.len() < flow_l + 1 {
                return Err(Error::data(
                    dataset.root.join(&dataset.manifest.entries[i].clip_file),
                    format!("{} frames cannot hold a flow stack of length {flow_l}", clip.len()),
                ));
            }
            if let Some(cache) = cache {
                flows[i] = Some(cache.pair_flows(&clip)?);
            }
            clips[i] = Some(clip);
        }
        Ok(Self {
            dataset,
            indices,
            flow_l,
            clips,
            flows,
        })
    }

    pub fn has_flows(&self) -> bool {
        self.indices.iter().all(|&i| self.flows[i].is_some())
    }

    pub fn clip(&self, index: usize) -> Result<&VideoClip> {
        self.clips
            .get(index)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::InvalidArgument(format!("clip {index} is not loaded")))
    }

    pub fn frames(&self, index: usize) -> Result<usize> {
        Ok(self.clip(index)?.len())
    }

    pub fn page(&self, page: PageRef) -> Result<&SketchPage> {
        self.dataset
            .sequences
            .get(page.sequence)
            .and_then(|s| s.pages.get(page.page.wrapping_sub(1)))
            .ok_or_else(|| Error::InvalidArgument(format!("no page {page:?}")))
    }

    /// Every page of every selected sequence, in dataset order.
    pub fn pages(&self) -> Vec<PageRef> {
        self.indices
            .iter()
            .flat_map(|&s| {
                (1..=self.dataset.sequences[s].pages.len()).map(move |page| PageRef { sequence: s, page })
            })
            .collect()
    }

    /// Annotated 1-based inclusive interval of a page.
    pub fn interval(&self, page: PageRef) -> Result<(usize, usize)> {
        self.dataset
            .alignments
            .get(page.sequence)
            .and_then(|a| a.interval(page.page))
            .ok_or_else(|| Error::InvalidArgument(format!("no alignment for {page:?}")))
    }

    /// Flow stack `2L×H×W` used for `frame` of clip `index`.
    pub fn flow_stack(&self, index: usize, frame: usize) -> Result<Tensor> {
        let pairs = self.flows[index]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("flows of clip {index} are not loaded")))?;
        let start = stack_start(frame, pairs.len() + 1, self.flow_l);
        Ok(stack_from_pairs(pairs, start, self.flow_l)?.channels)
    }

    /// Network input for sketch pages: appearance or motion rasters.
    pub fn anchor_batch(&self, stream: Stream, pages: &[PageRef]) -> Result<Tensor> {
        let rasters = pages
            .iter()
            .map(|&p| {
                let page = self.page(p)?;
                Ok(match stream {
                    Stream::Appearance => &page.appearance_raster,
                    Stream::Motion => &page.motion_raster,
                })
            })
            .collect::<Result<Vec<&Tensor>>>()?;
        sketch_batch(&rasters)
    }

    /// Network input for video positions: RGB frames or scaled flow stacks.
    pub fn video_batch(&self, stream: Stream, items: &[FrameRef], flow_scale: f64) -> Result<Tensor> {
        match stream {
            Stream::Appearance => {
                let frames = items
                    .iter()
                    .map(|f| {
                        self.clip(f.clip)?
                            .frames
                            .get(f.frame)
                            .ok_or_else(|| Error::InvalidArgument(format!("no frame {f:?}")))
                    })
                    .collect::<Result<Vec<&Tensor>>>()?;
                frame_batch(&frames)
            }
            Stream::Motion => {
                let stacks = items
                    .iter()
                    .map(|f| self.flow_stack(f.clip, f.frame))
                    .collect::<Result<Vec<Tensor>>>()?;
                flow_batch(&stacks.iter().collect::<Vec<_>>(), flow_scale)
            }
        }
    }
}
