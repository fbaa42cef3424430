//! Clip specifications: who the skater looks like and how they move.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::draw::Point;
use crate::error::{Error, Result};

pub const NUM_CLOTHING: u8 = 6;
pub const NUM_HAIR: u8 = 4;

/// Arm angle of the neutral pose (arms held out horizontally).
pub const REST_ARM_ANGLE: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Glide,
    Spin,
    Jump,
    Static,
}

/// One piece of a motion program; each segment becomes one sketch page.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: MotionKind,
    /// Travel direction in radians (0 = rightwards). For spins only the sign
    /// of its cosine matters: positive spins counter-clockwise on screen.
    pub direction: f64,
    /// Pixels per frame for glides and jump drift, radians per frame for spins.
    pub speed: f64,
    pub frames: usize,
}

impl Segment {
    pub fn new(kind: MotionKind, direction: f64, speed: f64, frames: usize) -> Self {
        Self {
            kind,
            direction,
            speed,
            frames,
        }
    }

    /// A spin that completes exactly one turn over `frames` frames.
    pub fn full_spin(clockwise: bool, frames: usize) -> Self {
        let direction = if clockwise { PI } else { 0.0 };
        Self::new(MotionKind::Spin, direction, 2.0 * PI / frames as f64, frames)
    }

    /// `+1` for rightwards / counter-clockwise, `-1` otherwise.
    pub fn sense(&self) -> f64 {
        if self.direction.cos() >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// The same motion in the opposite direction.
    pub fn mirrored(&self) -> Self {
        let direction = match self.kind {
            MotionKind::Static => self.direction,
            _ => PI - self.direction,
        };
        Self { direction, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AppearanceSpec {
    pub clothing: u8,
    pub hair: u8,
    pub limb_seed: u64,
}

/// Everything needed to render one clip and its sketch sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub appearance: AppearanceSpec,
    pub segments: Vec<Segment>,
    /// Torso centre at frame 0.
    pub start: Point,
    pub frame_size: usize,
}

/// Body dimensions derived from an [`AppearanceSpec`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FigureGeometry {
    pub torso: f64,
    pub torso_half_width: f64,
    pub leg: f64,
    pub arm: f64,
    pub head_radius: f64,
    pub leg_spread: f64,
    pub jump_height: f64,
    pub limb_half_width: f64,
}

impl FigureGeometry {
    pub fn new(appearance: &AppearanceSpec, frame_size: usize) -> Self {
        let s = frame_size as f64 / 64.0;
        let mut rng = ChaCha8Rng::seed_from_u64(appearance.limb_seed);
        Self {
            torso: s * (9.0 + rng.random_range(0.0..2.5)),
            torso_half_width: s * 3.0,
            leg: s * (8.0 + rng.random_range(0.0..2.5)),
            arm: s * (6.0 + rng.random_range(0.0..2.0)),
            head_radius: s * 3.0,
            leg_spread: 0.3 + rng.random_range(0.0..0.15),
            jump_height: s * 8.0,
            limb_half_width: s * 1.0,
        }
    }
}

/// Figure placement at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub center: Point,
    pub arm_angle: f64,
}

/// Named joints of the stick figure for a given pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Skeleton {
    pub head: Point,
    pub neck: Point,
    pub hip: Point,
    pub shoulder: Point,
    pub hand_a: Point,
    pub hand_b: Point,
    pub foot_a: Point,
    pub foot_b: Point,
}

impl Skeleton {
    pub fn new(g: &FigureGeometry, pose: &Pose) -> Self {
        let c = pose.center;
        let neck = c.offset(0.0, -g.torso / 2.0);
        let hip = c.offset(0.0, g.torso / 2.0);
        let head = neck.offset(0.0, -1.0 - g.head_radius);
        let shoulder = neck.offset(0.0, 1.5 * g.limb_half_width);
        let (sa, ca) = pose.arm_angle.sin_cos();
        let hand_a = shoulder.offset(g.arm * ca, -g.arm * sa);
        let hand_b = shoulder.offset(-g.arm * ca, g.arm * sa);
        let (ss, cs) = g.leg_spread.sin_cos();
        Self {
            head,
            neck,
            hip,
            shoulder,
            hand_a,
            hand_b,
            foot_a: hip.offset(g.leg * ss, g.leg * cs),
            foot_b: hip.offset(-g.leg * ss, g.leg * cs),
        }
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of the figure,
    /// including head, hair allowance and stroke widths.
    pub fn bounds(&self, g: &FigureGeometry) -> (f64, f64, f64, f64) {
        let pad = g.limb_half_width + 0.5;
        let hair = 5.0 * g.head_radius / 3.0;
        let pts = [
            self.neck,
            self.hip,
            self.hand_a,
            self.hand_b,
            self.foot_a,
            self.foot_b,
        ];
        let mut b = (
            self.head.x - g.head_radius - hair,
            self.head.y - g.head_radius - hair,
            self.head.x + g.head_radius + hair,
            self.head.y + g.head_radius,
        );
        for p in pts {
            b.0 = b.0.min(p.x - pad);
            b.1 = b.1.min(p.y - pad);
            b.2 = b.2.max(p.x + pad);
            b.3 = b.3.max(p.y + pad);
        }
        b.0 = b.0.min(self.neck.x - g.torso_half_width - 0.5);
        b.2 = b.2.max(self.neck.x + g.torso_half_width + 0.5);
        b
    }
}

impl ClipSpec {
    pub fn duration_frames(&self) -> usize {
        self.segments.iter().map(|s| s.frames).sum()
    }

    /// 0-based inclusive frame range of every segment.
    pub fn segment_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let r = (start, start + s.frames - 1);
                start += s.frames;
                r
            })
            .collect()
    }

    /// 0-based key frame of segment `i`: its midpoint.
    pub fn key_frame(&self, i: usize) -> usize {
        let (start, _) = self.segment_ranges()[i];
        start + self.segments[i].frames / 2
    }

    pub fn geometry(&self) -> FigureGeometry {
        FigureGeometry::new(&self.appearance, self.frame_size)
    }

    /// Pose at every frame, relative to `start`.
    pub fn poses(&self) -> Vec<Pose> {
        let g = self.geometry();
        poses_from(&self.segments, self.start, &g)
    }

    /// Checks structure and that the figure stays inside the frame.
    pub fn validate(&self, min_frames: usize) -> Result<()> {
        if self.segments.is_empty() || self.segments.len() > 9 {
            return Err(Error::InvalidArgument(format!(
                "clip needs 1 to 9 segments, got {}",
                self.segments.len()
            )));
        }
        if self.appearance.clothing >= NUM_CLOTHING || self.appearance.hair >= NUM_HAIR {
            return Err(Error::InvalidArgument("appearance id out of range".into()));
        }
        for s in &self.segments {
            if s.frames < 2 || !s.speed.is_finite() || s.speed < 0.0 || !s.direction.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid segment {s:?}")));
            }
        }
        let total = self.duration_frames();
        if total < min_frames {
            return Err(Error::InvalidArgument(format!(
                "clip has {total} frames, at least {min_frames} are required for a flow stack"
            )));
        }
        let g = self.geometry();
        let size = self.frame_size as f64;
        for (f, pose) in self.poses().iter().enumerate() {
            let (x0, y0, x1, y1) = Skeleton::new(&g, pose).bounds(&g);
            if x0 < 0.0 || y0 < 0.0 || x1 > size || y1 > size {
                return Err(Error::InvalidArgument(format!(
                    "figure leaves the {size}×{size} frame at frame {}",
                    f + 1
                )));
            }
        }
        Ok(())
    }

    /// Places the trajectory so it is horizontally centred in the frame with
    /// the skater standing at a fixed ground line.
    pub fn centred(appearance: AppearanceSpec, segments: Vec<Segment>, frame_size: usize) -> Self {
        let g = FigureGeometry::new(&appearance, frame_size);
        let size = frame_size as f64;
        let ground = Point::new(0.0, size * 0.56);
        let poses = poses_from(&segments, ground, &g);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &poses {
            let (x0, _, x1, _) = Skeleton::new(&g, p).bounds(&g);
            lo = lo.min(x0);
            hi = hi.max(x1);
        }
        let start = Point::new(size / 2.0 - (lo + hi) / 2.0, ground.y);
        Self {
            appearance,
            segments,
            start,
            frame_size,
        }
    }
}

fn poses_from(segments: &[Segment], start: Point, g: &FigureGeometry) -> Vec<Pose> {
    let mut out = Vec::new();
    let mut pos = start;
    let mut angle = REST_ARM_ANGLE;
    for s in segments {
        let n = s.frames as f64;
        match s.kind {
            MotionKind::Static => {
                out.extend((0..s.frames).map(|_| Pose {
                    center: pos,
                    arm_angle: angle,
                }));
            }
            MotionKind::Glide => {
                let (vy, vx) = s.direction.sin_cos();
                let (vx, vy) = (vx * s.speed, vy * s.speed);
                out.extend((0..s.frames).map(|i| Pose {
                    center: pos.offset(vx * i as f64, vy * i as f64),
                    arm_angle: angle,
                }));
                pos = pos.offset(vx * n, vy * n);
            }
            MotionKind::Jump => {
                let vx = s.direction.cos() * s.speed;
                out.extend((0..s.frames).map(|i| {
                    let t = i as f64 / n;
                    Pose {
                        center: pos.offset(vx * i as f64, -4.0 * g.jump_height * t * (1.0 - t)),
                        arm_angle: angle,
                    }
                }));
                pos = pos.offset(vx * n, 0.0);
            }
            MotionKind::Spin => {
                let w = s.sense() * s.speed;
                out.extend((0..s.frames).map(|i| Pose {
                    center: pos,
                    arm_angle: angle + w * i as f64,
                }));
                angle += w * n;
            }
        }
    }
    out
}
