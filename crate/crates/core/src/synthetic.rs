//! Deterministic synthetic scenes with known motion: smooth noise textures,
//! smooth checkerboards and linearly moving objects. Used for tests,
//! benchmarks and toy training sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{gaussian_blur, sample_channel, BorderPolicy, Image};

/// Single-channel noise smoothed by a Gaussian of `sigma` and stretched to
/// roughly `[0.1, 0.9]`.
pub fn smooth_noise(width: usize, height: usize, sigma: f32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Image::from_fn(width, height, 1, |_, _, _| rng.gen::<f32>())
        .expect("positive dimensions");
    let blurred = gaussian_blur(&raw, sigma).expect("positive sigma");
    normalize(&blurred)
}

fn normalize(img: &Image) -> Image {
    let mean = img.mean();
    let var = img
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / img.data().len() as f64;
    let std = var.sqrt().max(1e-12);
    img.map(|v| ((v as f64 - mean) / std * 0.15 + 0.5).clamp(0.1, 0.9) as f32)
        .expect("finite")
}

/// A pair of frames where the second is the first translated by
/// `(du, dv)`: `second(x, y) = first(x − du, y − dv)`. Both are cut from a
/// larger smooth-noise canvas, so no border artifacts enter the pair;
/// fractional shifts are realized by bilinear resampling of the canvas.
pub fn shifted_pair(
    width: usize,
    height: usize,
    du: f32,
    dv: f32,
    sigma: f32,
    seed: u64,
) -> (Image, Image) {
    let margin = (du.abs().max(dv.abs()).ceil() as usize) + 4;
    let canvas = smooth_noise(width + 2 * margin, height + 2 * margin, sigma, seed);
    let m = margin as f32;
    let first = canvas
        .crop(margin, margin, width, height)
        .expect("crop inside canvas");
    let second = Image::from_fn(width, height, 1, |x, y, _| {
        sample_channel(
            &canvas,
            0,
            x as f32 + m - du,
            y as f32 + m - dv,
            BorderPolicy::Replicate,
        )
    })
    .expect("finite");
    (first, second)
}

/// Checkerboard with smooth (tanh) transitions, evaluated analytically so
/// that fractional offsets are exact: `value(x, y) = f(x − ox, y − oy)`.
pub fn smooth_checkerboard(
    width: usize,
    height: usize,
    period: f32,
    ox: f32,
    oy: f32,
) -> Image {
    let sharp = 2.5f32;
    let wave = |t: f32| (sharp * (std::f32::consts::PI * t / period).sin()).tanh();
    Image::from_fn(width, height, 1, |x, y, _| {
        let sx = wave(x as f32 - ox);
        let sy = wave(y as f32 - oy);
        0.5 + 0.4 * sx * sy
    })
    .expect("finite")
}

/// [`smooth_checkerboard`] faded to flat gray within `margin` pixels of the
/// pattern's own frame, so translating it never drags texture across the
/// image border.
pub fn checkerboard_patch(
    width: usize,
    height: usize,
    period: f32,
    margin: f32,
    ox: f32,
    oy: f32,
) -> Image {
    let sharp = 2.5f32;
    let wave = |t: f32| (sharp * (std::f32::consts::PI * t / period).sin()).tanh();
    let fade = |t: f32, len: f32| {
        let d = t.min(len - 1.0 - t);
        ((d - 0.5 * margin) / (0.25 * margin)).clamp(-1.0, 1.0) * 0.5 + 0.5
    };
    Image::from_fn(width, height, 1, |x, y, _| {
        let (px, py) = (x as f32 - ox, y as f32 - oy);
        let env = fade(px, width as f32) * fade(py, height as f32);
        0.5 + 0.4 * wave(px) * wave(py) * env
    })
    .expect("finite")
}

/// Parameters for a frame triplet with linear motion.
#[derive(Debug, Clone, Copy)]
pub struct MotionScene {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Background displacement between frame 0 and frame 1.
    pub background_motion: (f32, f32),
    /// Object displacement between frame 0 and frame 1.
    pub object_motion: (f32, f32),
    /// Top-left corner of the object in frame 0.
    pub object_origin: (f32, f32),
    pub object_size: f32,
    pub seed: u64,
}

impl MotionScene {
    /// Renders the scene at time `s` in `[0, 1]`.
    pub fn render(&self, s: f32) -> Image {
        let pad = 24usize;
        let bg = multi_channel_noise(
            self.width + 2 * pad,
            self.height + 2 * pad,
            self.channels,
            2.0,
            self.seed,
        );
        let size = self.object_size.ceil() as usize + 8;
        let obj = multi_channel_noise(size, size, self.channels, 1.5, self.seed ^ 0x9e37_79b9);
        let (bx, by) = (self.background_motion.0 * s, self.background_motion.1 * s);
        let ox = self.object_origin.0 + self.object_motion.0 * s;
        let oy = self.object_origin.1 + self.object_motion.1 * s;
        let p = pad as f32;
        Image::from_fn(self.width, self.height, self.channels, |x, y, c| {
            let (xf, yf) = (x as f32, y as f32);
            let back = sample_channel(&bg, c, xf + p - bx, yf + p - by, BorderPolicy::Replicate);
            // Anti-aliased coverage of the square [ox, ox + size).
            let cover = |t: f32, lo: f32| {
                ((t + 0.5 - lo).clamp(0.0, 1.0)) * ((lo + self.object_size - t + 0.5).clamp(0.0, 1.0))
            };
            let a = cover(xf, ox) * cover(yf, oy);
            if a <= 0.0 {
                return back;
            }
            let front =
                sample_channel(&obj, c, xf - ox + 4.0, yf - oy + 4.0, BorderPolicy::Replicate);
            // Object is brighter than the background for easy localisation.
            let front = 0.35 + 0.65 * front;
            a * front + (1.0 - a) * back
        })
        .expect("finite")
    }

    /// `(frame0, ground truth at t = 0.5, frame1)`.
    pub fn triplet(&self) -> (Image, Image, Image) {
        (self.render(0.0), self.render(0.5), self.render(1.0))
    }
}

/// Independent smooth noise in every channel.
pub fn multi_channel_noise(w: usize, h: usize, channels: usize, sigma: f32, seed: u64) -> Image {
    let planes: Vec<Vec<f32>> = (0..channels)
        .map(|c| smooth_noise(w, h, sigma, seed.wrapping_add(c as u64 * 7919)).into_data())
        .collect();
    Image::from_planes(w, h, planes).expect("consistent planes")
}

/// A reproducible family of linear-motion scenes.
pub fn motion_suite(
    count: usize,
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
) -> Vec<MotionScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let size = (width.min(height) as f32 * rng.gen_range(0.25..0.4)).round();
            let bg = (rng.gen_range(-2.0..2.0f32).round(), rng.gen_range(-2.0..2.0f32).round());
            let obj = (rng.gen_range(-5.0..5.0f32), rng.gen_range(-4.0..4.0f32));
            let origin = (
                rng.gen_range(8.0..(width as f32 - size - 8.0)),
                rng.gen_range(8.0..(height as f32 - size - 8.0)),
            );
            MotionScene {
                width,
                height,
                channels,
                background_motion: bg,
                object_motion: obj,
                object_origin: origin,
                object_size: size,
                seed: seed.wrapping_mul(31).wrapping_add(i as u64),
            }
        })
        .collect()
}

/// Square scenes with one large object moving `motion` pixels, each in a
/// different direction, centred on the frame midway through. Occlusions
/// are wide enough that a plain blend leaves visible ghosting.
pub fn fast_motion_suite(count: usize, size: usize, channels: usize, motion: f32, seed: u64) -> Vec<MotionScene> {
    let mut scenes = motion_suite(count, size, size, channels, seed);
    for (i, s) in scenes.iter_mut().enumerate() {
        let a = i as f32 * 1.3;
        s.object_motion = (motion * a.cos(), motion * a.sin());
        s.object_size = (size as f32 * 0.4).round();
        s.object_origin = (
            size as f32 * 0.3 - s.object_motion.0 / 2.0,
            size as f32 * 0.3 - s.object_motion.1 / 2.0,
        );
    }
    scenes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_shift_is_an_exact_translation() {
        let (a, b) = shifted_pair(40, 30, 3.0, -2.0, 2.0, 11);
        for y in 2..28 {
            for x in 0..37 {
                assert_eq!(b.get(x + 3, y, 0), a.get(x, y + 2, 0));
            }
        }
    }

    #[test]
    fn checkerboard_offset_is_a_translation() {
        let a = smooth_checkerboard(32, 32, 8.0, 0.0, 0.0);
        let b = smooth_checkerboard(32, 32, 8.0, 2.0, 1.0);
        assert!((b.get(10, 10, 0) - a.get(8, 9, 0)).abs() < 1e-6);
    }

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let s = motion_suite(2, 48, 40, 3, 5);
        let (a, g, b) = s[0].triplet();
        assert_eq!(a, s[0].render(0.0));
        for img in [&a, &g, &b] {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
