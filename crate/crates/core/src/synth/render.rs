//! Rendering of clip specifications into RGB frames.

use super::draw::{Point, RgbCanvas};
use super::spec::{ClipSpec, FigureGeometry, Pose, Skeleton};
use super::types::{VideoClip, FPS};
use crate::error::Result;
use crate::math::Tensor;

pub const ICE: [f64; 3] = [0.86, 0.91, 0.96];
const SKIN: [f64; 3] = [0.93, 0.76, 0.62];
const LIMB: [f64; 3] = [0.18, 0.18, 0.24];
const HAIR: [f64; 3] = [0.35, 0.2, 0.1];

const CLOTHING: [[f64; 3]; 6] = [
    [0.8, 0.15, 0.15],
    [0.15, 0.25, 0.8],
    [0.1, 0.6, 0.25],
    [0.55, 0.2, 0.65],
    [0.9, 0.5, 0.1],
    [0.1, 0.1, 0.12],
];

/// Hatch pattern of each clothing id: stripe angles in radians (none for plain).
pub(crate) fn hatch_angles(clothing: u8) -> &'static [f64] {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    const H0: [f64; 1] = [FRAC_PI_2];
    const H1: [f64; 1] = [0.0];
    const H2: [f64; 1] = [FRAC_PI_4];
    const H3: [f64; 1] = [3.0 * FRAC_PI_4];
    const H4: [f64; 2] = [0.0, FRAC_PI_2];
    match clothing {
        0 => &H0,
        1 => &H1,
        2 => &H2,
        3 => &H3,
        4 => &H4,
        _ => &[],
    }
}

pub(crate) const HATCH_SPACING: f64 = 3.0;

/// Renders every frame of `spec`. The spec is validated first, so a figure
/// that would leave the frame is rejected.
pub fn render_video(spec: &ClipSpec, id: impl Into<String>, min_frames: usize) -> Result<VideoClip> {
    spec.validate(min_frames)?;
    let g = spec.geometry();
    let frames = spec
        .poses()
        .iter()
        .map(|pose| render_frame(spec, &g, pose))
        .collect();
    Ok(VideoClip {
        id: id.into(),
        frames,
        fps: FPS,
    })
}

fn render_frame(spec: &ClipSpec, g: &FigureGeometry, pose: &Pose) -> Tensor {
    let n = spec.frame_size;
    let mut canvas = RgbCanvas::new(n, n, ICE);
    let sk = Skeleton::new(g, pose);
    let lw = g.limb_half_width;

    canvas.segment(sk.hip, sk.foot_a, lw, LIMB);
    canvas.segment(sk.hip, sk.foot_b, lw, LIMB);

    let base = CLOTHING[spec.appearance.clothing as usize];
    let stripe = mix(base, [1.0; 3], 0.65);
    let angles = hatch_angles(spec.appearance.clothing);
    let neck = sk.neck;
    canvas.textured_segment(sk.neck, sk.hip, g.torso_half_width, |x, y| {
        let (u, v) = (x - neck.x, y - neck.y);
        let on = angles.iter().any(|a| {
            let t = (u * a.cos() + v * a.sin()) / HATCH_SPACING;
            t - t.floor() < 0.45
        });
        if on {
            stripe
        } else {
            base
        }
    });

    canvas.segment(sk.hand_a, sk.hand_b, lw, LIMB);
    draw_hair(&mut canvas, spec.appearance.hair, &sk, g);
    canvas.segment(sk.head, sk.head, g.head_radius, SKIN);

    let data = canvas
        .data
        .iter()
        .map(|v| f64::from(v.clamp(0.0, 1.0) as f32))
        .collect();
    Tensor::from_parts(vec![3, n, n], data)
}

fn draw_hair(canvas: &mut RgbCanvas, hair: u8, sk: &Skeleton, g: &FigureGeometry) {
    let r = g.head_radius;
    let h = sk.head;
    let w = g.limb_half_width;
    for (a, b, hw) in hair_segments(hair, h, r, sk.neck) {
        canvas.segment(a, b, hw * w, HAIR);
    }
}

/// Hair as segments `(from, to, relative half width)`, shared by frames and
/// sketches so both modalities depict the same style.
pub(crate) fn hair_segments(hair: u8, head: Point, r: f64, neck: Point) -> Vec<(Point, Point, f64)> {
    match hair {
        // Cap over the crown.
        0 => vec![(head.offset(-r, -0.6 * r), head.offset(r, -0.6 * r), 1.6)],
        // Long hair falling behind the head.
        1 => vec![(head.offset(-0.8 * r, -0.5 * r), Point::new(head.x - 1.3 * r, neck.y + 1.3 * r), 1.4)],
        // Bun on top.
        2 => vec![(head.offset(0.0, -1.55 * r), head.offset(0.0, -1.55 * r), 1.6)],
        // Spikes.
        _ => vec![
            (head.offset(-0.6 * r, -0.8 * r), head.offset(-1.0 * r, -1.8 * r), 0.8),
            (head.offset(0.0, -r), head.offset(0.0, -2.1 * r), 0.8),
            (head.offset(0.6 * r, -0.8 * r), head.offset(1.0 * r, -1.8 * r), 0.8),
        ],
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] * (1.0 - t) + b[0] * t,
        a[1] * (1.0 - t) + b[1] * t,
        a[2] * (1.0 - t) + b[2] * t,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::spec::{AppearanceSpec, MotionKind, Segment};

    fn spec(segments: Vec<Segment>) -> ClipSpec {
        ClipSpec::centred(
            AppearanceSpec {
                clothing: 2,
                hair: 1,
                limb_seed: 9,
            },
            segments,
            64,
        )
    }

    /// Centroid of the figure: pixels weighted by their difference from the ice.
    fn centroid(frame: &Tensor) -> (f64, f64) {
        let n = frame.shape()[2];
        let plane = n * n;
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for i in 0..plane {
            let w: f64 = (0..3).map(|c| (frame.data()[c * plane + i] - ICE[c]).abs()).sum();
            sx += w * ((i % n) as f64 + 0.5);
            sy += w * ((i / n) as f64 + 0.5);
            sw += w;
        }
        (sx / sw, sy / sw)
    }

    #[test]
    fn static_segment_frames_are_identical() {
        let clip = render_video(&spec(vec![Segment::new(MotionKind::Static, 0.0, 0.0, 12)]), "c", 11).unwrap();
        assert_eq!(clip.len(), 12);
        assert!(clip.frames.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(clip.fps, 30);
    }

    #[test]
    fn glide_moves_centroid_one_pixel_per_frame() {
        let clip = render_video(&spec(vec![Segment::new(MotionKind::Glide, 0.0, 1.0, 20)]), "c", 11).unwrap();
        let xs: Vec<f64> = clip.frames.iter().map(|f| centroid(f).0).collect();
        for w in xs.windows(2) {
            let step = w[1] - w[0];
            assert!((step - 1.0).abs() <= 0.25, "centroid step {step}");
        }
    }

    #[test]
    fn jump_height_trace_is_concave_with_apex_mid_segment() {
        let clip = render_video(&spec(vec![Segment::new(MotionKind::Jump, 0.0, 0.0, 20)]), "c", 11).unwrap();
        let heights: Vec<f64> = clip.frames.iter().map(|f| -centroid(f).1).collect();
        // Least-squares parabola fit h(t) = a t² + b t + c.
        let n = heights.len();
        let mut m = [[0.0f64; 4]; 3];
        for (i, h) in heights.iter().enumerate() {
            let t = i as f64;
            let row = [t * t, t, 1.0];
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] += row[r] * row[c];
                }
                m[r][3] += row[r] * h;
            }
        }
        for p in 0..3 {
            for r in 0..3 {
                if r != p {
                    let f = m[r][p] / m[p][p];
                    for c in 0..4 {
                        m[r][c] -= f * m[p][c];
                    }
                }
            }
        }
        let a = m[0][3] / m[0][0];
        let b = m[1][3] / m[1][1];
        assert!(a < 0.0, "parabola must open downwards, a = {a}");
        let apex = -b / (2.0 * a);
        assert!((apex - n as f64 / 2.0).abs() <= 1.0, "apex at {apex}");
    }

    #[test]
    fn pixel_values_in_unit_range() {
        let clip = render_video(&spec(vec![Segment::full_spin(false, 16)]), "c", 11).unwrap();
        for f in &clip.frames {
            assert_eq!(f.shape(), &[3, 64, 64]);
            assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn figure_leaving_frame_is_an_error() {
        let mut s = spec(vec![Segment::new(MotionKind::Glide, 0.0, 1.0, 20)]);
        s.start.x = 60.0;
        assert!(render_video(&s, "c", 11).is_err());
    }
}
