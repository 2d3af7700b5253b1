//! Procedural fixtures shared by unit tests, integration tests and the self-test.

use crate::stream::GrayFrame;

/// Smooth random-phase texture sampled at `(x - dx, y - dy)`, so a shift of
/// `(dx, dy)` is an exact translation of the content.
pub fn textured_frame(width: usize, height: usize, dx: f32, dy: f32, seed: u64) -> GrayFrame {
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            data.push(texture_value(x as f32 - dx, y as f32 - dy, seed));
        }
    }
    GrayFrame::new(width, height, data).expect("positive dimensions")
}

/// Deterministic band-limited texture in `[0, 255]`.
pub fn texture_value(x: f32, y: f32, seed: u64) -> u8 {
    let mut s = 128.0f32;
    for k in 0..6u64 {
        let h = splitmix(seed.wrapping_mul(31).wrapping_add(k));
        let fx = 0.15 + 0.35 * unit(h);
        let fy = 0.15 + 0.35 * unit(h >> 16);
        let sx = if h & 1 == 0 { 1.0 } else { -1.0 };
        let phase = std::f32::consts::TAU * unit(h >> 32);
        s += 18.0 * (sx * fx * x + fy * y + phase).sin();
    }
    s.round().clamp(0.0, 255.0) as u8
}

fn unit(h: u64) -> f32 {
    (h & 0xffff) as f32 / 65535.0
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
