use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::draw::Point;
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Frames per second of every generated clip.
pub const FPS: u32 = 30;

/// A polyline in page coordinates, flagged when it belongs to the motion vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<Point>,
    pub is_motion: bool,
}

impl Stroke {
    pub fn new(points: Vec<Point>, is_motion: bool) -> Self {
        Self { points, is_motion }
    }
}

/// One drawing of a sketch sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchPage {
    /// 1-based position within the sequence.
    pub page_index: usize,
    pub is_static: bool,
    pub strokes: Vec<Stroke>,
    /// `1×H×W`, values in `[0, 1]`.
    pub appearance_raster: Tensor,
    /// `1×H×W`, all zero for static pages.
    pub motion_raster: Tensor,
}

impl SketchPage {
    /// Checks the static flag against the strokes and the motion raster.
    pub fn validate(&self) -> Result<()> {
        let has_motion_strokes = self.strokes.iter().any(|s| s.is_motion);
        let blank = self.motion_raster.data().iter().all(|v| *v == 0.0);
        if self.is_static == has_motion_strokes || self.is_static != blank {
            return Err(Error::InvalidArgument(format!(
                "page {}: static flag disagrees with motion strokes or raster",
                self.page_index
            )));
        }
        for r in [&self.appearance_raster, &self.motion_raster] {
            if r.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "page {}: raster values outside [0, 1]",
                    self.page_index
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchSequence {
    pub id: String,
    pub paired_clip_id: String,
    pub pages: Vec<SketchPage>,
}

impl SketchSequence {
    pub fn validate(&self) -> Result<()> {
        if self.pages.is_empty() || self.pages.len() > 9 {
            return Err(Error::InvalidArgument(format!(
                "sequence {} has {} pages, expected 1 to 9",
                self.id,
                self.pages.len()
            )));
        }
        for (i, p) in self.pages.iter().enumerate() {
            if p.page_index != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "sequence {}: page {} stored at position {}",
                    self.id,
                    p.page_index,
                    i + 1
                )));
            }
            p.validate()?;
        }
        Ok(())
    }
}

/// Ordered RGB frames of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: String,
    /// Each `3×H×W`, values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub fps: u32,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    /// Rec. 601 luminance of frame `index` (0-based) as an `H×W` plane.
    pub fn luminance(&self, index: usize) -> Vec<f64> {
        luminance(&self.frames[index])
    }
}

pub fn luminance(frame: &Tensor) -> Vec<f64> {
    let n = frame.shape()[1] * frame.shape()[2];
    let d = frame.data();
    (0..n)
        .map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i])
        .collect()
}

/// Page index → inclusive, 1-based frame interval of the paired clip.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlignmentAnnotation {
    pub intervals: BTreeMap<usize, [usize; 2]>,
}

impl AlignmentAnnotation {
    pub fn interval(&self, page_index: usize) -> Option<(usize, usize)> {
        self.intervals.get(&page_index).map(|[s, e]| (*s, *e))
    }

    /// Intervals must be non-empty, inside `[1, frames]`, disjoint and ordered.
    pub fn validate(&self, pages: usize, frames: usize) -> Result<()> {
        if self.intervals.len() != pages || (1..=pages).any(|p| !self.intervals.contains_key(&p)) {
            return Err(Error::InvalidArgument(format!(
                "alignment must cover pages 1..={pages}"
            )));
        }
        let mut prev_end = 0;
        for (page, [s, e]) in &self.intervals {
            if *s < 1 || s > e || *e > frames || *s <= prev_end {
                return Err(Error::InvalidArgument(format!(
                    "page {page}: invalid interval [{s}, {e}] for {frames} frames"
                )));
            }
            prev_end = *e;
        }
        Ok(())
    }
}
