//! Minimal float image used internally by the flow and descriptor code.

use crate::stream::GrayFrame;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Image {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    pub fn from_gray(frame: &GrayFrame) -> Self {
        Self {
            w: frame.width(),
            h: frame.height(),
            data: frame.data().iter().map(|&v| f32::from(v)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Bilinear lookup with edge clamping.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Central-difference gradients, `(I(x+1) - I(x-1)) / 2`, edges clamped.
    pub fn gradients(&self) -> (Image, Image) {
        let mut gx = Image::zeros(self.w, self.h);
        let mut gy = Image::zeros(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let i = y as usize * self.w + x as usize;
                gx.data[i] = 0.5 * (self.clamped(x + 1, y) - self.clamped(x - 1, y));
                gy.data[i] = 0.5 * (self.clamped(x, y + 1) - self.clamped(x, y - 1));
            }
        }
        (gx, gy)
    }

    /// Separable 5-tap binomial blur `[1 4 6 4 1] / 16`.
    pub fn blur(&self) -> Image {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = Image::zeros(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let s: f32 = (-2..=2).map(|k| K[(k + 2) as usize] * self.clamped(x + k, y)).sum();
                tmp.data[y as usize * self.w + x as usize] = s;
            }
        }
        let mut out = Image::zeros(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let s: f32 = (-2..=2).map(|k| K[(k + 2) as usize] * tmp.clamped(x, y + k)).sum();
                out.data[y as usize * self.w + x as usize] = s;
            }
        }
        out
    }

    /// Blur then drop every other row and column.
    pub fn downsample(&self) -> Image {
        let b = self.blur();
        let w = self.w.div_ceil(2);
        let h = self.h.div_ceil(2);
        let mut out = Image::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = b.at(2 * x, 2 * y);
            }
        }
        out
    }

    pub fn mul(&self, other: &Image) -> Image {
        Image {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }

    /// Sum over a `(2r+1)^2` window around every pixel, window clipped at the borders.
    pub fn box_sum(&self, r: usize) -> Image {
        let (w, h) = (self.w, self.h);
        let stride = w + 1;
        let mut integral = vec![0f64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                row += f64::from(self.data[y * w + x]);
                integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
            }
        }
        let mut out = Image::zeros(w, h);
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let s = integral[y1 * stride + x1] - integral[y0 * stride + x1]
                    - integral[y1 * stride + x0]
                    + integral[y0 * stride + x0];
                out.data[y * w + x] = s as f32;
            }
        }
        out
    }

    /// 3x3 median filter, edges clamped.
    pub fn median3(&self) -> Image {
        let mut out = Image::zeros(self.w, self.h);
        let mut buf = [0f32; 9];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let mut k = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        buf[k] = self.clamped(x + dx, y + dy);
                        k += 1;
                    }
                }
                buf.sort_unstable_by(f32::total_cmp);
                out.data[y as usize * self.w + x as usize] = buf[4];
            }
        }
        out
    }
}
