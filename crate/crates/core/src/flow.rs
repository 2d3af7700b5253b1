//! Dense optical flow by iterative pyramidal Lucas-Kanade.
//!
//! Every pixel iterates the 2x2 Lucas-Kanade system over its own square window,
//! warping the second frame by that pixel's current estimate. Levels are processed
//! coarse to fine and the field is bilinearly upsampled between them.

use thiserror::Error;

use crate::image::Image;
use crate::stream::GrayFrame;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("pyramid needs at least one level")]
    NoLevels,
    #[error("flow field length {actual} does not match {width}x{height}")]
    BadField {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("flow field holds a non-finite value")]
    NonFinite,
}

/// Per-pixel displacement from one frame to the next, in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, FlowError> {
        for c in [&u, &v] {
            if c.len() != width * height {
                return Err(FlowError::BadField {
                    width,
                    height,
                    actual: c.len(),
                });
            }
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(FlowError::NonFinite);
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Constant displacement everywhere.
    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// 3x3 median filter applied to each component separately.
    pub fn median_filtered(&self) -> FlowField {
        let (u, v) = self.images();
        FlowField {
            width: self.width,
            height: self.height,
            u: u.median3().data,
            v: v.median3().data,
        }
    }

    /// Median of each component over pixels at least `margin` away from every border.
    pub fn interior_median(&self, margin: usize) -> Option<(f32, f32)> {
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let (u, v) = self.at(x, y);
                us.push(u);
                vs.push(v);
            }
        }
        if us.is_empty() {
            return None;
        }
        Some((median(&mut us), median(&mut vs)))
    }

    pub(crate) fn images(&self) -> (Image, Image) {
        (
            Image {
                w: self.width,
                h: self.height,
                data: self.u.clone(),
            },
            Image {
                w: self.width,
                h: self.height,
                data: self.v.clone(),
            },
        )
    }
}

fn median(xs: &mut [f32]) -> f32 {
    xs.sort_unstable_by(f32::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub levels: usize,
    /// Window half-size; the Lucas-Kanade window is `(2r+1)^2` pixels.
    pub window_radius: usize,
    pub iterations: usize,
    /// Minimum eigenvalue of the per-pixel structure tensor, divided by window area,
    /// below which a pixel keeps its propagated estimate.
    pub min_eigen: f32,
    /// Largest update accepted in one iteration, in pixels.
    pub max_update: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window_radius: 3,
            iterations: 6,
            min_eigen: 1e-2,
            max_update: 2.0,
        }
    }
}

/// Dense flow from `prev` to `next` with default parameters and `levels` pyramid levels.
pub fn dense_flow(prev: &GrayFrame, next: &GrayFrame, levels: usize) -> Result<FlowField, FlowError> {
    let params = FlowParams {
        levels,
        ..FlowParams::default()
    };
    dense_flow_with(prev, next, &params)
}

pub fn dense_flow_with(
    prev: &GrayFrame,
    next: &GrayFrame,
    params: &FlowParams,
) -> Result<FlowField, FlowError> {
    if !prev.same_dims(next) {
        return Err(FlowError::DimensionMismatch(
            prev.width(),
            prev.height(),
            next.width(),
            next.height(),
        ));
    }
    if params.levels == 0 {
        return Err(FlowError::NoLevels);
    }
    let (w, h) = (prev.width(), prev.height());
    if prev == next {
        return Ok(FlowField::zeros(w, h));
    }

    let mut pyr_prev = vec![Image::from_gray(prev).blur()];
    let mut pyr_next = vec![Image::from_gray(next).blur()];
    for _ in 1..params.levels {
        let p = pyr_prev.last().unwrap();
        if p.w < 8 || p.h < 8 {
            break;
        }
        let p = p.downsample();
        let n = pyr_next.last().unwrap().downsample();
        pyr_prev.push(p);
        pyr_next.push(n);
    }

    let coarsest = pyr_prev.last().unwrap();
    let mut u = Image::zeros(coarsest.w, coarsest.h);
    let mut v = Image::zeros(coarsest.w, coarsest.h);
    for level in (0..pyr_prev.len()).rev() {
        let img_prev = &pyr_prev[level];
        let img_next = &pyr_next[level];
        if u.w != img_prev.w || u.h != img_prev.h {
            u = upsample(&u, img_prev.w, img_prev.h);
            v = upsample(&v, img_prev.w, img_prev.h);
        }
        refine_level(img_prev, img_next, &mut u, &mut v, params);
    }
    FlowField::new(w, h, u.data, v.data)
}

/// Doubles resolution (to the exact target size) and scales displacements by 2.
fn upsample(field: &Image, w: usize, h: usize) -> Image {
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            // Coarse pixel k sits at fine pixel 2k.
            out.data[y * w + x] = 2.0 * field.sample(x as f32 / 2.0, y as f32 / 2.0);
        }
    }
    out
}

fn refine_level(prev: &Image, next: &Image, u: &mut Image, v: &mut Image, params: &FlowParams) {
    let r = params.window_radius as isize;
    let (gx, gy) = prev.gradients();
    let sxx = gx.mul(&gx).box_sum(params.window_radius);
    let sxy = gx.mul(&gy).box_sum(params.window_radius);
    let syy = gy.mul(&gy).box_sum(params.window_radius);
    let (w, h) = (prev.w as isize, prev.h as isize);

    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let area = window_area(x as usize, y as usize, prev.w, prev.h, params.window_radius);
            let (a, b, c) = (sxx.data[i], sxy.data[i], syy.data[i]);
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            // Pixels without enough texture keep the propagated estimate.
            if (half_trace - disc) / area < params.min_eigen {
                continue;
            }
            let det = a * c - b * b;
            let (ia, ib, ic) = (c / det, -b / det, a / det);
            let (y0, y1) = ((y - r).max(0), (y + r).min(h - 1));
            let (x0, x1) = ((x - r).max(0), (x + r).min(w - 1));
            let (mut du, mut dv) = (u.data[i], v.data[i]);
            for _ in 0..params.iterations {
                let fx = du.floor();
                let fy = dv.floor();
                let (ax, ay) = (du - fx, dv - fy);
                let (ox, oy) = (fx as isize, fy as isize);
                let (w00, w10, w01, w11) =
                    ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
                let (mut bx, mut by) = (0f32, 0f32);
                for qy in y0..=y1 {
                    for qx in x0..=x1 {
                        let (sx, sy) = (qx + ox, qy + oy);
                        let warped = w00 * next.clamped(sx, sy)
                            + w10 * next.clamped(sx + 1, sy)
                            + w01 * next.clamped(sx, sy + 1)
                            + w11 * next.clamped(sx + 1, sy + 1);
                        let q = (qy * w + qx) as usize;
                        let it = warped - prev.data[q];
                        bx += gx.data[q] * it;
                        by += gy.data[q] * it;
                    }
                }
                let step_u = (-(ia * bx + ib * by)).clamp(-params.max_update, params.max_update);
                let step_v = (-(ib * bx + ic * by)).clamp(-params.max_update, params.max_update);
                du += step_u;
                dv += step_v;
                if step_u.abs() < 0.01 && step_v.abs() < 0.01 {
                    break;
                }
            }
            u.data[i] = du;
            v.data[i] = dv;
        }
    }
}

fn window_area(x: usize, y: usize, w: usize, h: usize, r: usize) -> f32 {
    let cols = (x + r + 1).min(w) - x.saturating_sub(r);
    let rows = (y + r + 1).min(h) - y.saturating_sub(r);
    (cols * rows) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::textured_frame;

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = textured_frame(48, 40, 0.0, 0.0, 3);
        let flow = dense_flow(&f, &f, 3).unwrap();
        assert!(flow.u().iter().chain(flow.v()).all(|&x| x == 0.0));
    }

    #[test]
    fn recovers_integer_translation() {
        for &(dx, dy) in &[(3.0, 0.0), (-2.0, 1.0)] {
            let a = textured_frame(64, 64, 0.0, 0.0, 11);
            let b = textured_frame(64, 64, dx, dy, 11);
            let flow = dense_flow(&a, &b, 3).unwrap();
            let (mu, mv) = flow.interior_median(8).unwrap();
            assert!((mu - dx).abs() <= 0.25, "u {mu} vs {dx}");
            assert!((mv - dy).abs() <= 0.25, "v {mv} vs {dy}");
        }
    }

    #[test]
    fn rejects_mismatched_frames() {
        let a = GrayFrame::filled(4, 4, 0).unwrap();
        let b = GrayFrame::filled(5, 4, 0).unwrap();
        assert!(matches!(dense_flow(&a, &b, 3), Err(FlowError::DimensionMismatch(..))));
        assert!(matches!(dense_flow(&a, &a, 0), Err(FlowError::NoLevels)));
    }

    #[test]
    fn median_filter_removes_spike() {
        let mut f = FlowField::uniform(5, 5, 1.0, -1.0);
        f.u[12] = 50.0;
        let m = f.median_filtered();
        assert_eq!(m.at(2, 2), (1.0, -1.0));
    }
}
