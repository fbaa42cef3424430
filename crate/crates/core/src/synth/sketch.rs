//! Vector sketches of clip specifications and their rasterisation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::draw::{GrayCanvas, Point};
use super::render::{hair_segments, hatch_angles, HATCH_SPACING};
use super::spec::{ClipSpec, FigureGeometry, MotionKind, Pose, Segment, Skeleton};
use super::types::{AlignmentAnnotation, SketchPage, SketchSequence, Stroke};
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Half of the 2 px stroke width.
pub const STROKE_HALF_WIDTH: f64 = 1.0;

/// Gap between the figure and its motion vector.
const MOTION_GAP: f64 = 3.0;

/// Largest extent of any figure above and below its torso centre at 64 px:
/// half the longest torso, neck gap, head and the tallest hair, and half
/// the longest torso plus the longest leg at the narrowest spread.
const FIGURE_ABOVE_CENTER: f64 = 5.75 + 1.0 + 3.0 + 6.3;
const FIGURE_BELOW_CENTER: f64 = 5.75 + 10.5;

/// Draws one page per segment and the matching alignment annotation.
pub fn render_sketch_pages(
    spec: &ClipSpec,
    id: impl Into<String>,
    paired_clip_id: impl Into<String>,
    min_frames: usize,
) -> Result<(SketchSequence, AlignmentAnnotation)> {
    spec.validate(min_frames)?;
    let g = spec.geometry();
    let poses = spec.poses();
    let size = spec.frame_size;
    let mut pages = Vec::with_capacity(spec.segments.len());
    let mut intervals = BTreeMap::new();
    for (i, (seg, (start, end))) in spec.segments.iter().zip(spec.segment_ranges()).enumerate() {
        let pose = Pose {
            center: Point::new(size as f64 / 2.0, size as f64 * 0.48),
            arm_angle: poses[spec.key_frame(i)].arm_angle,
        };
        let mut strokes = appearance_strokes(spec.appearance.clothing, spec.appearance.hair, &g, &pose);
        strokes.extend(motion_strokes(seg, pose.center, size as f64 / 64.0));
        let appearance_raster = rasterize_strokes(&strokes, size, size, false)?;
        let motion_raster = rasterize_strokes(&strokes, size, size, true)?;
        let page = SketchPage {
            page_index: i + 1,
            is_static: seg.kind == MotionKind::Static,
            strokes,
            appearance_raster,
            motion_raster,
        };
        page.validate()?;
        pages.push(page);
        intervals.insert(i + 1, [start + 1, end + 1]);
    }
    let seq = SketchSequence {
        id: id.into(),
        paired_clip_id: paired_clip_id.into(),
        pages,
    };
    seq.validate()?;
    Ok((seq, AlignmentAnnotation { intervals }))
}

/// Renders the strokes with `is_motion == include_motion` into a `1×H×W`
/// raster quantised to multiples of 1/255.
pub fn rasterize_strokes(strokes: &[Stroke], height: usize, width: usize, include_motion: bool) -> Result<Tensor> {
    let mut canvas = GrayCanvas::new(width, height);
    for s in strokes.iter().filter(|s| s.is_motion == include_motion) {
        if s.points.len() < 2 {
            return Err(Error::InvalidArgument("stroke needs at least 2 points".into()));
        }
        if let Some(p) = s
            .points
            .iter()
            .find(|p| !(p.x >= 0.0 && p.x < width as f64 && p.y >= 0.0 && p.y < height as f64))
        {
            return Err(Error::InvalidArgument(format!(
                "stroke point ({}, {}) outside the {width}×{height} page",
                p.x, p.y
            )));
        }
        canvas.polyline(&s.points, STROKE_HALF_WIDTH);
    }
    let data = canvas.data.iter().map(|v| (v * 255.0).round() / 255.0).collect();
    Ok(Tensor::from_parts(vec![1, height, width], data))
}

fn circle(c: Point, r: f64, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            c.offset(r * t.cos(), r * t.sin())
        })
        .collect()
}

fn appearance_strokes(clothing: u8, hair: u8, g: &FigureGeometry, pose: &Pose) -> Vec<Stroke> {
    let sk = Skeleton::new(g, pose);
    let hw = g.torso_half_width;
    let mut out = vec![Stroke::new(circle(sk.head, g.head_radius, 16), false)];
    for (a, b, w) in hair_segments(hair, sk.head, g.head_radius, sk.neck) {
        let pts = if a == b {
            circle(a, w * g.limb_half_width, 8)
        } else {
            vec![a, b]
        };
        out.push(Stroke::new(pts, false));
    }
    out.push(Stroke::new(
        vec![
            sk.neck.offset(-hw, 0.0),
            sk.neck.offset(hw, 0.0),
            sk.hip.offset(hw, 0.0),
            sk.hip.offset(-hw, 0.0),
            sk.neck.offset(-hw, 0.0),
        ],
        false,
    ));
    for angle in hatch_angles(clothing) {
        for (a, b) in hatch_lines(*angle, hw, sk.hip.y - sk.neck.y) {
            out.push(Stroke::new(vec![sk.neck.offset(a.x, a.y), sk.neck.offset(b.x, b.y)], false));
        }
    }
    out.push(Stroke::new(vec![sk.hand_b, sk.shoulder, sk.hand_a], false));
    out.push(Stroke::new(vec![sk.foot_a, sk.hip, sk.foot_b], false));
    out
}

/// Lines `u·cos a + v·sin a = c` clipped to the torso box `[-hw, hw]×[0, len]`.
fn hatch_lines(angle: f64, hw: f64, len: f64) -> Vec<(Point, Point)> {
    let (s, c) = angle.sin_cos();
    let corners = [(-hw, 0.0), (hw, 0.0), (hw, len), (-hw, len)];
    let proj: Vec<f64> = corners.iter().map(|(u, v)| u * c + v * s).collect();
    let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let mut k = (lo / HATCH_SPACING).ceil();
    while k * HATCH_SPACING < hi {
        let level = k * HATCH_SPACING + 0.5;
        k += 1.0;
        // Intersect the level line with each box edge.
        let mut hits: Vec<Point> = Vec::new();
        for i in 0..4 {
            let (p, q) = (corners[i], corners[(i + 1) % 4]);
            let (fp, fq) = (proj[i] - level, proj[(i + 1) % 4] - level);
            if (fp < 0.0) != (fq < 0.0) {
                let t = fp / (fp - fq);
                hits.push(Point::new(p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        if hits.len() == 2 && (hits[0].x - hits[1].x).hypot(hits[0].y - hits[1].y) > 1.0 {
            out.push((hits[0], hits[1]));
        }
    }
    out
}

/// Motion vector of one segment: a shaft and an arrow head. Jumps are drawn
/// above the head, glides and spins below the feet.
fn motion_strokes(seg: &Segment, center: Point, scale: f64) -> Vec<Stroke> {
    // Fixed lines at the extremes of any figure's head and feet, so the same
    // motion draws the same vector whoever performs it.
    let top = center.y - scale * FIGURE_ABOVE_CENTER;
    let bottom = center.y + scale * FIGURE_BELOW_CENTER;
    let cx = center.x;
    let sense = seg.sense();
    let gap = MOTION_GAP * scale;
    let shaft: Vec<Point> = match seg.kind {
        MotionKind::Static => return Vec::new(),
        MotionKind::Glide => {
            let half = scale * (3.0 + 6.0 * seg.speed);
            let y = bottom + gap + 2.0 * scale;
            vec![Point::new(cx - sense * half, y), Point::new(cx + sense * half, y)]
        }
        MotionKind::Jump => {
            let half = scale * (4.0 + 6.0 * seg.speed);
            let base = top - gap;
            let rise = 4.0 * scale;
            (0..=12)
                .map(|i| {
                    let t = i as f64 / 12.0;
                    Point::new(cx + sense * half * (2.0 * t - 1.0), base - 4.0 * rise * t * (1.0 - t))
                })
                .collect()
        }
        MotionKind::Spin => {
            let r = scale * (1.5 + 8.0 * seg.speed);
            let cy = bottom + gap + r;
            (0..=16)
                .map(|i| {
                    let t = -PI / 2.0 + sense * 1.5 * PI * i as f64 / 16.0;
                    Point::new(cx + r * t.cos(), cy - r * t.sin())
                })
                .collect()
        }
    };
    let tip = shaft[shaft.len() - 1];
    let prev = shaft[shaft.len() - 2];
    let (dx, dy) = (tip.x - prev.x, tip.y - prev.y);
    let len = dx.hypot(dy);
    let (ux, uy) = (dx / len, dy / len);
    let (back, side) = (2.5 * scale, 2.0 * scale);
    let head = vec![
        tip.offset(-back * ux - side * uy, -back * uy + side * ux),
        tip,
        tip.offset(-back * ux + side * uy, -back * uy - side * ux),
    ];
    vec![Stroke::new(shaft, true), Stroke::new(head, true)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::spec::AppearanceSpec;

    fn spec(segments: Vec<Segment>) -> ClipSpec {
        ClipSpec::centred(
            AppearanceSpec {
                clothing: 4,
                hair: 3,
                limb_seed: 11,
            },
            segments,
            64,
        )
    }

    fn y_range(strokes: &[Stroke], motion: bool) -> (f64, f64) {
        strokes
            .iter()
            .filter(|s| s.is_motion == motion)
            .flat_map(|s| s.points.iter().map(|p| p.y))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)))
    }

    #[test]
    fn empty_stroke_list_gives_zero_raster() {
        let r = rasterize_strokes(&[], 8, 8, false).unwrap();
        assert_eq!(r.shape(), &[1, 8, 8]);
        assert!(r.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn horizontal_line_stays_in_two_pixel_band() {
        let s = Stroke::new(vec![Point::new(3.0, 10.0), Point::new(20.0, 10.0)], false);
        let r = rasterize_strokes(&[s], 32, 32, false).unwrap();
        for (i, v) in r.data().iter().enumerate() {
            let y = i / 32;
            if *v > 0.0 {
                assert!(y == 9 || y == 10, "pixel on row {y}");
            }
        }
    }

    #[test]
    fn out_of_bounds_point_is_an_error() {
        let s = Stroke::new(vec![Point::new(3.0, 10.0), Point::new(40.0, 10.0)], true);
        assert!(rasterize_strokes(&[s], 32, 32, true).is_err());
        // Filtered-out strokes are not checked.
        let s = Stroke::new(vec![Point::new(3.0, 10.0), Point::new(40.0, 10.0)], true);
        assert!(rasterize_strokes(&[s], 32, 32, false).is_ok());
    }

    #[test]
    fn static_page_has_no_motion_strokes() {
        let (seq, _) = render_sketch_pages(&spec(vec![Segment::new(MotionKind::Static, 0.0, 0.0, 12)]), "s", "c", 11).unwrap();
        let page = &seq.pages[0];
        assert!(page.is_static);
        assert!(page.strokes.iter().all(|s| !s.is_motion));
        assert!(page.motion_raster.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jump_vector_above_head_and_glide_spin_below_feet() {
        let (seq, _) = render_sketch_pages(
            &spec(vec![
                Segment::new(MotionKind::Jump, 0.0, 0.4, 20),
                Segment::new(MotionKind::Glide, PI, 0.6, 20),
                Segment::full_spin(true, 20),
                Segment::full_spin(false, 24),
            ]),
            "s",
            "c",
            11,
        )
        .unwrap();
        for page in &seq.pages {
            let (ap_top, ap_bottom) = y_range(&page.strokes, false);
            let (mo_top, mo_bottom) = y_range(&page.strokes, true);
            if page.page_index == 1 {
                assert!(mo_bottom < ap_top, "jump vector {mo_bottom} vs head {ap_top}");
            } else {
                assert!(mo_top > ap_bottom, "vector {mo_top} vs feet {ap_bottom}");
            }
            assert!(!page.is_static);
            assert!(page.motion_raster.data().iter().any(|v| *v > 0.0));
        }
    }

    #[test]
    fn rasters_partition_strokes_by_motion_flag() {
        let (seq, _) = render_sketch_pages(&spec(vec![Segment::new(MotionKind::Glide, 0.0, 0.5, 20)]), "s", "c", 11).unwrap();
        let page = &seq.pages[0];
        let all = {
            let mut canvas = GrayCanvas::new(64, 64);
            for s in &page.strokes {
                canvas.polyline(&s.points, STROKE_HALF_WIDTH);
            }
            canvas.data
        };
        for (i, v) in all.iter().enumerate() {
            let combined = page.appearance_raster.data()[i].max(page.motion_raster.data()[i]);
            assert!((combined - v).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn alignment_matches_segment_ranges() {
        let s = spec(vec![
            Segment::new(MotionKind::Glide, 0.0, 0.5, 20),
            Segment::new(MotionKind::Static, 0.0, 0.0, 10),
            Segment::full_spin(false, 16),
        ]);
        let (seq, align) = render_sketch_pages(&s, "s", "c", 11).unwrap();
        assert_eq!(seq.pages.len(), 3);
        assert_eq!(align.interval(1), Some((1, 20)));
        assert_eq!(align.interval(2), Some((21, 30)));
        assert_eq!(align.interval(3), Some((31, 46)));
        align.validate(3, 46).unwrap();
    }

    #[test]
    fn rasters_are_quantised() {
        let (seq, _) = render_sketch_pages(&spec(vec![Segment::full_spin(false, 20)]), "s", "c", 11).unwrap();
        for v in seq.pages[0].appearance_raster.data() {
            assert_eq!((v * 255.0).round() / 255.0, *v);
        }
    }
}
