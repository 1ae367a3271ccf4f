//! On-the-fly geometric and intensity augmentation of (frame, mask) pairs.

use crate::corpus::Frame;
use crate::maskgen::BinaryMask;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    /// Max translation per axis, pixels.
    pub shift_px: f64,
    /// Max rotation magnitude, degrees.
    pub rotation_deg: f64,
    pub zoom: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            shift_px: 4.0,
            rotation_deg: 10.0,
            zoom: (0.9, 1.1),
            gamma: (0.8, 1.25),
        }
    }
}

impl AugConfig {
    pub fn identity() -> Self {
        Self {
            shift_px: 0.0,
            rotation_deg: 0.0,
            zoom: (1.0, 1.0),
            gamma: (1.0, 1.0),
        }
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub shift: (f64, f64),
    pub rotation_deg: f64,
    pub zoom: f64,
    pub gamma: f64,
}

impl Transform {
    pub const IDENTITY: Self = Self {
        shift: (0.0, 0.0),
        rotation_deg: 0.0,
        zoom: 1.0,
        gamma: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(cfg: &AugConfig, rng: &mut R) -> Self {
        let sym = |rng: &mut R, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        let span = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let shift = (sym(rng, cfg.shift_px), sym(rng, cfg.shift_px));
        let rotation_deg = sym(rng, cfg.rotation_deg);
        let zoom = span(rng, cfg.zoom);
        let gamma = span(rng, cfg.gamma);
        Self {
            shift,
            rotation_deg,
            zoom,
            gamma,
        }
    }
}

/// Applies `t` about the image centre: bilinear for the frame, nearest for the mask,
/// zero outside the source. Gamma is applied to the frame only.
pub fn apply_transform(frame: &Frame, mask: &BinaryMask, t: &Transform) -> (Frame, BinaryMask) {
    let (h, w) = (frame.height, frame.width);
    assert_eq!((mask.height, mask.width), (h, w), "frame and mask must align");
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = t.rotation_deg.to_radians();
    let (s, c) = if t.rotation_deg == 0.0 { (0.0, 1.0) } else { theta.sin_cos() };
    let mut out = vec![0f32; h * w];
    let mut out_mask = vec![0u8; h * w];
    for r in 0..h {
        for col in 0..w {
            // Inverse map: output → source.
            let dy = (r as f64 - cy - t.shift.0) / t.zoom;
            let dx = (col as f64 - cx - t.shift.1) / t.zoom;
            let sy = cy + c * dy + s * dx;
            let sx = cx - s * dy + c * dx;
            let idx = r * w + col;
            let (ny, nx) = (sy.round(), sx.round());
            if ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64 {
                out_mask[idx] = mask.pixels[ny as usize * w + nx as usize];
            }
            if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
                continue;
            }
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
            let top = frame.at(y0, x0) * (1.0 - fx) + frame.at(y0, x1) * fx;
            let bot = frame.at(y1, x0) * (1.0 - fx) + frame.at(y1, x1) * fx;
            out[idx] = top * (1.0 - fy) + bot * fy;
        }
    }
    if t.gamma != 1.0 {
        let g = t.gamma as f32;
        out.iter_mut().for_each(|v| *v = v.max(0.0).powf(g));
    }
    (
        Frame {
            height: h,
            width: w,
            pixels: out,
        },
        BinaryMask {
            height: h,
            width: w,
            pixels: out_mask,
        },
    )
}

pub fn augment<R: Rng + ?Sized>(frame: &Frame, mask: &BinaryMask, cfg: &AugConfig, rng: &mut R) -> (Frame, BinaryMask) {
    apply_transform(frame, mask, &Transform::sample(cfg, rng))
}
