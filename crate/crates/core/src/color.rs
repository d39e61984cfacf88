//! Luminance plus two chroma planes.
//!
//! Integer full-range BT.601 (the JPEG/JFIF variant), 16-bit fixed point:
//!
//! ```text
//! Y  = (19595 R + 38470 G +  7471 B + 32768) >> 16
//! Cb = ((-11059 R - 21709 G + 32768 B + 32768) >> 16) + 128
//! Cr = ((32768 R - 27439 G -  5329 B + 32768) >> 16) + 128
//!
//! R = Y + ((91881 (Cr-128) + 32768) >> 16)
//! G = Y + ((-22554 (Cb-128) - 46802 (Cr-128) + 32768) >> 16)
//! B = Y + ((116130 (Cb-128) + 32768) >> 16)
//! ```
//!
//! Shifts are arithmetic (floor) and every result is clamped to `0..=255`.

use crate::error::{Error, Result};
use crate::patch::{quantize_u8, Frame};

#[inline]
fn clamp8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

#[inline]
pub fn rgb_to_ycbcr(r: u8, g: u8, b: u8) -> (u8, u8, u8) {
    let (r, g, b) = (r as i32, g as i32, b as i32);
    let y = (19595 * r + 38470 * g + 7471 * b + 32768) >> 16;
    let cb = ((-11059 * r - 21709 * g + 32768 * b + 32768) >> 16) + 128;
    let cr = ((32768 * r - 27439 * g - 5329 * b + 32768) >> 16) + 128;
    (clamp8(y), clamp8(cb), clamp8(cr))
}

#[inline]
pub fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> (u8, u8, u8) {
    let (y, cb, cr) = (y as i32, cb as i32 - 128, cr as i32 - 128);
    let r = y + ((91881 * cr + 32768) >> 16);
    let g = y + ((-22554 * cb - 46802 * cr + 32768) >> 16);
    let b = y + ((116130 * cb + 32768) >> 16);
    (clamp8(r), clamp8(g), clamp8(b))
}

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!("rgb frame {width}x{height} needs {} bytes", width * height * 3)));
        }
        Ok(RgbFrame { width, height, data })
    }

    /// Split into `[0, 1]` luminance and chroma planes (neutral chroma is 128/255).
    pub fn to_ycbcr(&self) -> YCbCrFrame {
        let n = self.width * self.height;
        let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for px in self.data.chunks_exact(3) {
            let (a, b, c) = rgb_to_ycbcr(px[0], px[1], px[2]);
            y.push(a as f32 / 255.0);
            cb.push(b as f32 / 255.0);
            cr.push(c as f32 / 255.0);
        }
        let plane = |data| Frame { width: self.width, height: self.height, data };
        YCbCrFrame { y: plane(y), cb: plane(cb), cr: plane(cr) }
    }

    pub fn luma(&self) -> Frame {
        self.to_ycbcr().y
    }

    /// Per-pixel sum of squared channel differences, in 8-bit units, averaged
    /// over pixels.
    pub fn ssd_per_pixel(&self, other: &RgbFrame) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension("rgb frames differ in size".into()));
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(total / (self.width * self.height) as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct YCbCrFrame {
    pub y: Frame,
    pub cb: Frame,
    pub cr: Frame,
}

impl YCbCrFrame {
    /// Luminance with neutral chroma.
    pub fn gray(y: Frame) -> Self {
        let neutral = Frame::filled(y.width, y.height, 128.0 / 255.0);
        YCbCrFrame { cb: neutral.clone(), cr: neutral, y }
    }

    /// Quantise each plane to 8 bits and convert with the integer transform.
    pub fn to_rgb(&self) -> RgbFrame {
        let mut data = Vec::with_capacity(self.y.data.len() * 3);
        for ((&y, &cb), &cr) in self.y.data.iter().zip(&self.cb.data).zip(&self.cr.data) {
            let (r, g, b) = ycbcr_to_rgb(quantize_u8(y), quantize_u8(cb), quantize_u8(cr));
            data.extend_from_slice(&[r, g, b]);
        }
        RgbFrame { width: self.y.width, height: self.y.height, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(rgb_to_ycbcr(0, 0, 0), (0, 128, 128));
        assert_eq!(rgb_to_ycbcr(255, 255, 255), (255, 128, 128));
        assert_eq!(rgb_to_ycbcr(255, 0, 0), (76, 85, 255));
        assert_eq!(rgb_to_ycbcr(0, 0, 255), (29, 255, 107));
    }

    #[test]
    fn grays_round_trip_exactly() {
        for v in 0..=255u8 {
            let (y, cb, cr) = rgb_to_ycbcr(v, v, v);
            assert_eq!((y, cb, cr), (v, 128, 128));
            assert_eq!(ycbcr_to_rgb(y, cb, cr), (v, v, v));
        }
    }

    #[test]
    fn round_trip_error_is_small() {
        let mut worst = 0i32;
        for r in (0..=255u8).step_by(5) {
            for g in (0..=255u8).step_by(5) {
                for b in (0..=255u8).step_by(5) {
                    let (y, cb, cr) = rgb_to_ycbcr(r, g, b);
                    let (r2, g2, b2) = ycbcr_to_rgb(y, cb, cr);
                    for (a, c) in [(r, r2), (g, g2), (b, b2)] {
                        worst = worst.max((a as i32 - c as i32).abs());
                    }
                }
            }
        }
        assert!(worst <= 3, "worst channel error {worst}");
    }

    #[test]
    fn gray_planes_use_neutral_chroma() {
        let y = Frame::filled(2, 1, 100.0 / 255.0);
        let rgb = YCbCrFrame::gray(y).to_rgb();
        assert_eq!(rgb.data, vec![100; 6]);
    }
}
