//! Procedural generator of paired sketch sequences and video clips.

mod dataset;
mod draw;
mod render;
mod sketch;
mod spec;
mod twins;
mod types;

use serde::{Deserialize, Serialize};

pub use dataset::{
    clip_specs, generate_dataset, load_clip, load_dataset, read_pgm, save_dataset, write_pgm, Dataset, DatasetEntry,
    DatasetManifest, Split,
};
pub use draw::Point;
pub use render::render_video;
pub use sketch::{rasterize_strokes, render_sketch_pages, STROKE_HALF_WIDTH};
pub use spec::{
    AppearanceSpec, ClipSpec, FigureGeometry, MotionKind, Pose, Segment, Skeleton, NUM_CLOTHING, NUM_HAIR,
    REST_ARM_ANGLE,
};
pub use twins::{make_twins, random_appearance, ProgramSampler, TwinRole, TwinSpec};
pub use types::{luminance, AlignmentAnnotation, SketchPage, SketchSequence, Stroke, VideoClip, FPS};

use crate::error::{Error, Result};

/// Generator settings. Twin counts are numbers of clips and must be even.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub frame_size: usize,
    /// Clips with independent random appearance and motion.
    pub random_clips: usize,
    pub appearance_twin_clips: usize,
    pub motion_twin_clips: usize,
    pub mean_pages: f64,
    pub static_probability: f64,
    /// Train, validation and test proportions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            frame_size: 64,
            random_clips: 0,
            appearance_twin_clips: 16,
            motion_twin_clips: 16,
            mean_pages: 2.7,
            static_probability: 0.07,
            split: [350.0, 50.0, 128.0],
        }
    }
}

impl DataConfig {
    pub fn with_twin_pairs(appearance_pairs: usize, motion_pairs: usize) -> Self {
        Self {
            appearance_twin_clips: 2 * appearance_pairs,
            motion_twin_clips: 2 * motion_pairs,
            ..Self::default()
        }
    }

    pub fn total_clips(&self) -> usize {
        self.random_clips + self.appearance_twin_clips + self.motion_twin_clips
    }

    pub fn validate(&self) -> Result<()> {
        if self.appearance_twin_clips % 2 != 0 || self.motion_twin_clips % 2 != 0 {
            return Err(Error::Config(format!(
                "twin clip counts must be even, got {} appearance and {} motion",
                self.appearance_twin_clips, self.motion_twin_clips
            )));
        }
        if self.total_clips() == 0 {
            return Err(Error::Config("dataset must contain at least one clip".into()));
        }
        if self.frame_size < 32 {
            return Err(Error::Config(format!("frame size {} is below 32", self.frame_size)));
        }
        if !(1.0..=9.0).contains(&self.mean_pages) {
            return Err(Error::Config(format!("mean pages {} outside [1, 9]", self.mean_pages)));
        }
        if !(0.0..1.0).contains(&self.static_probability) {
            return Err(Error::Config("static probability must lie in [0, 1)".into()));
        }
        if self.split.iter().any(|p| !p.is_finite() || *p < 0.0) || self.split.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("split proportions must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser, used to derive independent per-clip seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
