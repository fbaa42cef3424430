//! Anti-aliased line rasterisation shared by frame and sketch rendering.

/// A 2-D point in pixel coordinates; pixel `(x, y)` covers `[x, x+1)×[y, y+1)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

pub(crate) fn dist_to_segment(px: f64, py: f64, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Calls `f(index, coverage)` for every pixel touched by a segment of the
/// given half width; coverage falls off linearly over one pixel at the edge.
pub(crate) fn cover_segment(
    width: usize,
    height: usize,
    a: Point,
    b: Point,
    half_width: f64,
    mut f: impl FnMut(usize, f64),
) {
    let reach = half_width + 0.5;
    let x0 = (a.x.min(b.x) - reach).floor().max(0.0) as usize;
    let y0 = (a.y.min(b.y) - reach).floor().max(0.0) as usize;
    let x1 = ((a.x.max(b.x) + reach).ceil().max(0.0) as usize).min(width);
    let y1 = ((a.y.max(b.y) + reach).ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        for x in x0..x1 {
            let d = dist_to_segment(x as f64 + 0.5, y as f64 + 0.5, a, b);
            let c = (reach - d).clamp(0.0, 1.0);
            if c > 0.0 {
                f(y * width + x, c);
            }
        }
    }
}

/// Single-channel canvas combining strokes by maximum coverage.
pub(crate) struct GrayCanvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayCanvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn polyline(&mut self, points: &[Point], half_width: f64) {
        let (w, h) = (self.width, self.height);
        for pair in points.windows(2) {
            let data = &mut self.data;
            cover_segment(w, h, pair[0], pair[1], half_width, |i, c| {
                data[i] = data[i].max(c);
            });
        }
    }
}

/// Planar RGB canvas with alpha compositing.
pub(crate) struct RgbCanvas {
    pub width: usize,
    pub height: usize,
    /// Three planes, R then G then B.
    pub data: Vec<f64>,
}

impl RgbCanvas {
    pub fn new(width: usize, height: usize, background: [f64; 3]) -> Self {
        let n = width * height;
        let mut data = vec![0.0; 3 * n];
        for (c, bg) in background.iter().enumerate() {
            data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = *bg);
        }
        Self { width, height, data }
    }

    pub fn blend(&mut self, index: usize, color: [f64; 3], alpha: f64) {
        let n = self.width * self.height;
        for (c, col) in color.iter().enumerate() {
            let v = &mut self.data[c * n + index];
            *v = *v * (1.0 - alpha) + col * alpha;
        }
    }

    pub fn segment(&mut self, a: Point, b: Point, half_width: f64, color: [f64; 3]) {
        let mut hits = Vec::new();
        cover_segment(self.width, self.height, a, b, half_width, |i, c| hits.push((i, c)));
        for (i, c) in hits {
            self.blend(i, color, c);
        }
    }

    /// Segment whose colour varies per pixel, e.g. a textured torso.
    pub fn textured_segment(
        &mut self,
        a: Point,
        b: Point,
        half_width: f64,
        color_at: impl Fn(f64, f64) -> [f64; 3],
    ) {
        let mut hits = Vec::new();
        cover_segment(self.width, self.height, a, b, half_width, |i, c| hits.push((i, c)));
        for (i, c) in hits {
            let (x, y) = ((i % self.width) as f64 + 0.5, (i / self.width) as f64 + 0.5);
            self.blend(i, color_at(x, y), c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_line_covers_two_rows() {
        let mut c = GrayCanvas::new(16, 16);
        c.polyline(&[Point::new(2.0, 8.0), Point::new(12.0, 8.0)], 1.0);
        for y in 0..16 {
            let row_max = (0..16).map(|x| c.data[y * 16 + x]).fold(0.0, f64::max);
            if y == 7 || y == 8 {
                assert_eq!(row_max, 1.0);
            } else {
                assert_eq!(row_max, 0.0, "row {y}");
            }
        }
    }

    #[test]
    fn distance_to_degenerate_segment() {
        let p = Point::new(1.0, 1.0);
        assert!((dist_to_segment(4.0, 5.0, p, p) - 5.0).abs() < 1e-12);
    }
}
