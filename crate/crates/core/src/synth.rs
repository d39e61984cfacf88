//! Procedural test footage.
//!
//! Scenes are continuous functions of the plane, so translating them by
//! sub-pixel offsets gives smooth, controllable motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::RgbFrame;
use crate::patch::Frame;

#[derive(Clone, Debug)]
struct Wave {
    fx: f32,
    fy: f32,
    phase: f32,
    amp: f32,
}

#[derive(Clone, Debug)]
struct Disc {
    cx: f32,
    cy: f32,
    radius: f32,
    amp: f32,
}

/// Sum of oriented sinusoids plus soft-edged discs.
#[derive(Clone, Debug)]
pub struct TexturedScene {
    waves: Vec<Wave>,
    discs: Vec<Disc>,
}

impl TexturedScene {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..6)
            .map(|_| {
                let freq = rng.gen_range(0.15f32..1.1);
                let theta = rng.gen_range(0.0f32..std::f32::consts::PI);
                Wave {
                    fx: freq * theta.cos(),
                    fy: freq * theta.sin(),
                    phase: rng.gen_range(0.0..std::f32::consts::TAU),
                    amp: rng.gen_range(0.03..0.09),
                }
            })
            .collect();
        let discs = (0..14)
            .map(|_| Disc {
                cx: rng.gen_range(0.0..128.0),
                cy: rng.gen_range(0.0..128.0),
                radius: rng.gen_range(4.0..18.0),
                amp: rng.gen_range(-0.2..0.2),
            })
            .collect();
        TexturedScene { waves, discs }
    }

    /// Intensity at continuous position `(x, y)`, in `[0.02, 0.98]`.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let mut v = 0.5;
        for w in &self.waves {
            v += w.amp * (w.fx * x + w.fy * y + w.phase).sin();
        }
        for d in &self.discs {
            // discs tile with period 128 so large frames stay textured
            let dx = (x - d.cx).rem_euclid(128.0).min((d.cx - x).rem_euclid(128.0));
            let dy = (y - d.cy).rem_euclid(128.0).min((d.cy - y).rem_euclid(128.0));
            let r = (dx * dx + dy * dy).sqrt();
            v += d.amp * 0.5 * (1.0 - ((r - d.radius) * 0.8).tanh());
        }
        v.clamp(0.02, 0.98)
    }

    /// Render with the scene shifted by `(dx, dy)` pixels.
    pub fn render(&self, width: usize, height: usize, dx: f32, dy: f32) -> Frame {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(self.sample(x as f32 + dx, y as f32 + dy));
            }
        }
        Frame { width, height, data }
    }

    /// `frames` renders translating at `(vx, vy)` pixels per frame.
    pub fn pan(&self, width: usize, height: usize, frames: usize, vx: f32, vy: f32) -> Vec<Frame> {
        (0..frames).map(|t| self.render(width, height, vx * t as f32, vy * t as f32)).collect()
    }
}

/// Largest per-pixel absolute difference between consecutive frames.
pub fn max_frame_drift(frames: &[Frame]) -> f32 {
    frames.windows(2).flat_map(|w| w[0].data.iter().zip(&w[1].data).map(|(a, b)| (a - b).abs())).fold(0.0, f32::max)
}

/// Alternating still and moving segments: `still` repeats of the current
/// position, then `moving` frames each shifted by `step` pixels, and so on.
pub fn still_motion_sequence(
    scene: &TexturedScene,
    width: usize,
    height: usize,
    segments: usize,
    still: usize,
    moving: usize,
    step: f32,
) -> Vec<Frame> {
    let mut out = Vec::new();
    let mut offset = 0.0f32;
    for s in 0..segments {
        let (count, dv) = if s % 2 == 0 { (still, 0.0) } else { (moving, step) };
        for _ in 0..count {
            offset += dv;
            out.push(scene.render(width, height, offset, 0.5 * offset));
        }
    }
    out
}

/// Two-material colour scene. Material A carries horizontal stripes and a
/// warm hue, material B vertical stripes and a cool hue; a smooth blob field
/// decides which material covers each point. Colour is thus predictable from
/// local luminance texture.
#[derive(Clone, Debug)]
pub struct ColorScene {
    blobs: TexturedScene,
}

impl ColorScene {
    pub fn new(seed: u64) -> Self {
        ColorScene { blobs: TexturedScene::new(seed) }
    }

    fn material(&self, x: f32, y: f32) -> f32 {
        // 0 = material A, 1 = material B, with a soft boundary
        let m = self.blobs.sample(x * 0.35, y * 0.35) - 0.5;
        0.5 * (1.0 + (m * 25.0).tanh())
    }

    pub fn sample_rgb(&self, x: f32, y: f32) -> [f32; 3] {
        let b = self.material(x, y);
        let stripes_a = 0.55 + 0.3 * (y * std::f32::consts::TAU / 5.0).sin();
        let stripes_b = 0.5 + 0.3 * (x * std::f32::consts::TAU / 7.0).sin() * (y * 0.4).cos().abs().max(0.4);
        let warm = [1.0, 0.55, 0.35].map(|c| c * stripes_a);
        let cool = [0.35, 0.6, 1.0].map(|c| c * stripes_b);
        [0, 1, 2].map(|c| ((1.0 - b) * warm[c] + b * cool[c]).clamp(0.0, 1.0))
    }

    pub fn render(&self, width: usize, height: usize, dx: f32, dy: f32) -> RgbFrame {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let rgb = self.sample_rgb(x as f32 + dx, y as f32 + dy);
                data.extend(rgb.map(|c| (c * 255.0).round() as u8));
            }
        }
        RgbFrame { width, height, data }
    }
}
