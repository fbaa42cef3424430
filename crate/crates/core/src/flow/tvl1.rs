//! Duality-based TV-L1 optical flow (Zach, Pock, Bischof), coarse to fine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sha256_hex, Tensor};
use crate::synth::luminance;

const GRAD_IS_ZERO: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Weight of the data term, for intensities in `[0, 255]`.
    pub lambda: f64,
    pub theta: f64,
    pub tau: f64,
    pub warps: usize,
    pub max_iters: usize,
    pub pyramid_levels: usize,
    pub scale: f64,
    /// 3×3 median filter of the flow after every warp.
    pub median_filter: bool,
    /// Flow components are clamped to this many pixels.
    pub max_displacement: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            warps: 5,
            max_iters: 30,
            pyramid_levels: 3,
            scale: 0.5,
            median_filter: true,
            max_displacement: 16.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda, self.theta, self.tau, self.max_displacement];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config("flow lambda, theta, tau and max displacement must be positive".into()));
        }
        if self.tau > 0.25 {
            return Err(Error::Config(format!("flow tau {} exceeds the stable bound 0.25", self.tau)));
        }
        if self.warps == 0 || self.max_iters == 0 || self.pyramid_levels == 0 {
            return Err(Error::Config("flow warps, iterations and pyramid levels must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return Err(Error::Config(format!("pyramid scale {} outside (0, 1)", self.scale)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("params serialise"))
    }
}

/// Dense displacement field: frame_a(x) ≈ frame_b(x + (u, v)).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// `H×W` horizontal displacement in pixels.
    pub u: Tensor,
    /// `H×W` vertical displacement in pixels.
    pub v: Tensor,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Tensor::zeros(&[height, width]),
            v: Tensor::zeros(&[height, width]),
        }
    }

    pub fn height(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn max_abs(&self) -> f64 {
        self.u.max_abs().max(self.v.max_abs())
    }
}

#[derive(Clone, Debug)]
struct Image {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Image {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Bilinear sample at `(x, y)` with replicated borders.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = self.at(xi, yi) * (1.0 - fx) + self.at(xi + 1, yi) * fx;
        let bottom = self.at(xi, yi + 1) * (1.0 - fx) + self.at(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Accepts `H×W`, `1×H×W` or RGB `3×H×W` frames and returns luminance in `[0, 255]`.
fn to_gray(frame: &Tensor, name: &str) -> Result<Image> {
    let (h, w, data) = match frame.shape() {
        [h, w] => (*h, *w, frame.data().to_vec()),
        [1, h, w] => (*h, *w, frame.data().to_vec()),
        [3, h, w] => (*h, *w, luminance(frame)),
        s => return Err(Error::shape("tvl1_flow", format!("{name} has shape {s:?}, expected H×W, 1×H×W or 3×H×W"))),
    };
    if data.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
        return Err(Error::InvalidArgument(format!("{name} has values outside [0, 1]")));
    }
    Ok(Image {
        w,
        h,
        data: data.into_iter().map(|v| v * 255.0).collect(),
    })
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let mut tmp = Image::new(img.w, img.h);
    for y in 0..img.h {
        for x in 0..img.w {
            tmp.data[y * img.w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * img.at(x as isize + k as isize - radius, y as isize))
                .sum();
        }
    }
    let mut out = Image::new(img.w, img.h);
    for y in 0..img.h {
        for x in 0..img.w {
            out.data[y * img.w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp.at(x as isize, y as isize + k as isize - radius))
                .sum();
        }
    }
    out
}

fn level_size(n: usize, scale: f64) -> usize {
    ((n as f64 * scale + 0.5) as usize).max(1)
}

/// Anti-aliased downsampling by `scale`.
fn zoom_out(img: &Image, scale: f64) -> Image {
    let sigma = 0.6 * (1.0 / (scale * scale) - 1.0).sqrt();
    let smooth = gaussian_blur(img, sigma);
    let (w, h) = (level_size(img.w, scale), level_size(img.h, scale));
    let mut out = Image::new(w, h);
    let (sx, sy) = (img.w as f64 / w as f64, img.h as f64 / h as f64);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = smooth.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
        }
    }
    out
}

/// Bilinear resize of a flow component to `w×h`, scaling values by `factor`.
fn zoom_in(img: &Image, w: usize, h: usize, factor: f64) -> Image {
    let mut out = Image::new(w, h);
    let (sx, sy) = (img.w as f64 / w as f64, img.h as f64 / h as f64);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = factor * img.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
        }
    }
    out
}

fn centered_gradient(img: &Image) -> (Image, Image) {
    let (mut gx, mut gy) = (Image::new(img.w, img.h), Image::new(img.w, img.h));
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let i = y as usize * img.w + x as usize;
            gx.data[i] = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
            gy.data[i] = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
        }
    }
    (gx, gy)
}

fn forward_gradient(f: &[f64], w: usize, h: usize, fx: &mut [f64], fy: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            fx[i] = if x + 1 < w { f[i + 1] - f[i] } else { 0.0 };
            fy[i] = if y + 1 < h { f[i + w] - f[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`forward_gradient`].
fn divergence(p1: &[f64], p2: &[f64], w: usize, h: usize, div: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut d = 0.0;
            if x + 1 < w {
                d += p1[i];
            }
            if x > 0 {
                d -= p1[i - 1];
            }
            if y + 1 < h {
                d += p2[i];
            }
            if y > 0 {
                d -= p2[i - w];
            }
            div[i] = d;
        }
    }
}

fn median3x3(img: &Image) -> Image {
    let mut out = Image::new(img.w, img.h);
    let mut win = [0.0f64; 9];
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    win[k] = img.at(x + dx, y + dy);
                    k += 1;
                }
            }
            win.sort_unstable_by(f64::total_cmp);
            out.data[y as usize * img.w + x as usize] = win[4];
        }
    }
    out
}

/// TV-L1 energy `Σ |∇u₁| + |∇u₂| + λ Σ |I₁(x + u) − I₀(x)|` of a flow at one level.
fn energy(i0: &Image, i1: &Image, u1: &Image, u2: &Image, lambda: f64) -> f64 {
    let (w, h) = (i0.w, i0.h);
    let n = w * h;
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut tv = 0.0;
    for f in [&u1.data, &u2.data] {
        forward_gradient(f, w, h, &mut gx, &mut gy);
        tv += gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum::<f64>();
    }
    let mut data = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            data += (i1.sample(x as f64 + u1.data[i], y as f64 + u2.data[i]) - i0.data[i]).abs();
        }
    }
    tv + lambda * data
}

/// Energies at the finest level: the upsampled initial flow, then the flow
/// after each warp.
pub type EnergyTrace = Vec<f64>;

#[allow(clippy::too_many_arguments)]
fn solve_level(
    i0: &Image,
    i1: &Image,
    u1: &mut Image,
    u2: &mut Image,
    p: &FlowParams,
    mut trace: Option<&mut EnergyTrace>,
) {
    let (w, h) = (i0.w, i0.h);
    let n = w * h;
    let l_t = p.lambda * p.theta;
    let taut = p.tau / p.theta;
    let (i1x, i1y) = centered_gradient(i1);
    let (mut p11, mut p12, mut p21, mut p22) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut v1, mut v2) = (vec![0.0; n], vec![0.0; n]);
    let (mut div1, mut div2) = (vec![0.0; n], vec![0.0; n]);
    let (mut u1x, mut u1y, mut u2x, mut u2y) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut i1w, mut i1wx, mut i1wy, mut grad, mut rho_c) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    if let Some(t) = trace.as_deref_mut() {
        t.push(energy(i0, i1, u1, u2, p.lambda));
    }
    for _ in 0..p.warps {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f64 + u1.data[i], y as f64 + u2.data[i]);
                i1w[i] = i1.sample(sx, sy);
                i1wx[i] = i1x.sample(sx, sy);
                i1wy[i] = i1y.sample(sx, sy);
                grad[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u1.data[i] - i1wy[i] * u2.data[i] - i0.data[i];
            }
        }

        for _ in 0..p.max_iters {
            for i in 0..n {
                let rho = rho_c[i] + i1wx[i] * u1.data[i] + i1wy[i] * u2.data[i];
                let (d1, d2) = if rho < -l_t * grad[i] {
                    (l_t * i1wx[i], l_t * i1wy[i])
                } else if rho > l_t * grad[i] {
                    (-l_t * i1wx[i], -l_t * i1wy[i])
                } else if grad[i] < GRAD_IS_ZERO {
                    (0.0, 0.0)
                } else {
                    let fi = -rho / grad[i];
                    (fi * i1wx[i], fi * i1wy[i])
                };
                v1[i] = u1.data[i] + d1;
                v2[i] = u2.data[i] + d2;
            }
            divergence(&p11, &p12, w, h, &mut div1);
            divergence(&p21, &p22, w, h, &mut div2);
            for i in 0..n {
                u1.data[i] = v1[i] + p.theta * div1[i];
                u2.data[i] = v2[i] + p.theta * div2[i];
            }
            forward_gradient(&u1.data, w, h, &mut u1x, &mut u1y);
            forward_gradient(&u2.data, w, h, &mut u2x, &mut u2y);
            for i in 0..n {
                let ng1 = 1.0 + taut * u1x[i].hypot(u1y[i]);
                let ng2 = 1.0 + taut * u2x[i].hypot(u2y[i]);
                p11[i] = (p11[i] + taut * u1x[i]) / ng1;
                p12[i] = (p12[i] + taut * u1y[i]) / ng1;
                p21[i] = (p21[i] + taut * u2x[i]) / ng2;
                p22[i] = (p22[i] + taut * u2y[i]) / ng2;
            }
        }
        if p.median_filter {
            *u1 = median3x3(u1);
            *u2 = median3x3(u2);
        }
        for f in [&mut *u1, &mut *u2] {
            f.data
                .iter_mut()
                .for_each(|v| *v = v.clamp(-p.max_displacement, p.max_displacement));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(energy(i0, i1, u1, u2, p.lambda));
        }
    }
}

fn flow_impl(frame_a: &Tensor, frame_b: &Tensor, p: &FlowParams, trace: Option<&mut EnergyTrace>) -> Result<FlowField> {
    p.validate()?;
    let a = to_gray(frame_a, "frame_a")?;
    let b = to_gray(frame_b, "frame_b")?;
    if (a.w, a.h) != (b.w, b.h) {
        return Err(Error::shape(
            "tvl1_flow",
            format!("frames differ in size: {}×{} vs {}×{}", a.h, a.w, b.h, b.w),
        ));
    }
    let min_side = 1usize << p.pyramid_levels;
    if a.w < min_side || a.h < min_side {
        return Err(Error::InvalidArgument(format!(
            "frames of {}×{} are smaller than 2^{} = {min_side}",
            a.h, a.w, p.pyramid_levels
        )));
    }

    let mut pyr0 = vec![gaussian_blur(&a, 0.8)];
    let mut pyr1 = vec![gaussian_blur(&b, 0.8)];
    for _ in 1..p.pyramid_levels {
        let next0 = zoom_out(pyr0.last().expect("non-empty"), p.scale);
        let next1 = zoom_out(pyr1.last().expect("non-empty"), p.scale);
        pyr0.push(next0);
        pyr1.push(next1);
    }

    let coarsest = pyr0.last().expect("non-empty");
    let mut u1 = Image::new(coarsest.w, coarsest.h);
    let mut u2 = Image::new(coarsest.w, coarsest.h);
    let mut trace = trace;
    for level in (0..p.pyramid_levels).rev() {
        let (i0, i1) = (&pyr0[level], &pyr1[level]);
        if (u1.w, u1.h) != (i0.w, i0.h) {
            u1 = zoom_in(&u1, i0.w, i0.h, 1.0 / p.scale);
            u2 = zoom_in(&u2, i0.w, i0.h, 1.0 / p.scale);
        }
        let t = if level == 0 { trace.as_deref_mut() } else { None };
        solve_level(i0, i1, &mut u1, &mut u2, p, t);
    }

    let field = FlowField {
        u: Tensor::new(vec![a.h, a.w], u1.data)?,
        v: Tensor::new(vec![a.h, a.w], u2.data)?,
    };
    Ok(field)
}

/// TV-L1 flow from `frame_a` to `frame_b`; values in `[0, 1]`, colour frames
/// are converted to luminance.
pub fn tvl1_flow(frame_a: &Tensor, frame_b: &Tensor, params: &FlowParams) -> Result<FlowField> {
    flow_impl(frame_a, frame_b, params, None)
}

/// As [`tvl1_flow`], also returning the finest-level energy trace.
pub fn tvl1_flow_traced(frame_a: &Tensor, frame_b: &Tensor, params: &FlowParams) -> Result<(FlowField, EnergyTrace)> {
    let mut trace = Vec::new();
    let flow = flow_impl(frame_a, frame_b, params, Some(&mut trace))?;
    Ok((flow, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let (w, h) = (5, 4);
        let f: Vec<f64> = (0..w * h).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let p1: Vec<f64> = (0..w * h).map(|i| ((i * 3) % 7) as f64 * 0.5).collect();
        let p2: Vec<f64> = (0..w * h).map(|i| ((i * 5) % 3) as f64 - 1.0).collect();
        let (mut fx, mut fy, mut div) = (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]);
        forward_gradient(&f, w, h, &mut fx, &mut fy);
        divergence(&p1, &p2, w, h, &mut div);
        let lhs: f64 = (0..w * h).map(|i| fx[i] * p1[i] + fy[i] * p2[i]).sum();
        let rhs: f64 = (0..w * h).map(|i| -f[i] * div[i]).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn median_removes_isolated_outlier() {
        let mut img = Image::new(5, 5);
        img.data[12] = 100.0;
        assert!(median3x3(&img).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bad_params_are_rejected() {
        let p = FlowParams {
            tau: 0.3,
            ..FlowParams::default()
        };
        assert!(p.validate().is_err());
        let p = FlowParams {
            scale: 1.0,
            ..FlowParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn digest_changes_with_params() {
        let a = FlowParams::default();
        let b = FlowParams {
            median_filter: false,
            ..FlowParams::default()
        };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), FlowParams::default().digest());
    }
}
