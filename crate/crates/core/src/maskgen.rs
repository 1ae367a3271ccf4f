//! Landmark ↔ heatmap conversion: disc masks for training, blobs and centres of
//! gravity for decoding predictions.

use crate::corpus::{LandmarkLabel, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl BinaryMask {
    pub fn foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32).collect()
    }
}

/// An 8-connected component of a thresholded heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    /// `sqrt(area / π)`
    pub equivalent_radius: f64,
    /// Probability-weighted centre of gravity.
    pub cog: Point,
}

/// Marks every pixel within `radius` of any landmark point.
pub fn rasterize_mask(label: &LandmarkLabel, radius: f64, height: usize, width: usize) -> Result<BinaryMask> {
    if !(radius >= 0.0) {
        return Err(Error::Label(format!("disc radius {radius} must be non-negative")));
    }
    for &(r, c) in &label.points {
        if !(r >= 0.0 && c >= 0.0 && r <= (height - 1) as f64 && c <= (width - 1) as f64) {
            return Err(Error::Label(format!("point ({r}, {c}) outside {height}×{width} frame")));
        }
    }
    let mut pixels = vec![0u8; height * width];
    let r2 = radius * radius;
    for &(pr, pc) in &label.points {
        if radius == 0.0 {
            pixels[pr.round() as usize * width + pc.round() as usize] = 1;
            continue;
        }
        let r_lo = (pr - radius).floor().max(0.0) as usize;
        let r_hi = ((pr + radius).ceil() as usize).min(height - 1);
        let c_lo = (pc - radius).floor().max(0.0) as usize;
        let c_hi = ((pc + radius).ceil() as usize).min(width - 1);
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                if (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2) <= r2 {
                    pixels[r * width + c] = 1;
                }
            }
        }
    }
    Ok(BinaryMask { height, width, pixels })
}

/// Connected components of `{p ≥ threshold}`, largest first (ties by COG ascending).
pub fn extract_blobs(heatmap: &[f32], height: usize, width: usize, threshold: f32) -> Vec<Blob> {
    assert_eq!(heatmap.len(), height * width, "heatmap shape");
    let mut seen = vec![false; heatmap.len()];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..heatmap.len() {
        if seen[start] || heatmap[start] < threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let (mut wsum, mut wr, mut wc) = (0.0f64, 0.0f64, 0.0f64);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / width, i % width);
            pixels.push((r, c));
            let p = heatmap[i] as f64;
            wsum += p;
            wr += p * r as f64;
            wc += p * c as f64;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= height as isize || cc >= width as isize {
                        continue;
                    }
                    let j = rr as usize * width + cc as usize;
                    if !seen[j] && heatmap[j] >= threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        let area = pixels.len();
        let cog = if wsum > 0.0 {
            (wr / wsum, wc / wsum)
        } else {
            let n = area as f64;
            (
                pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n,
                pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n,
            )
        };
        blobs.push(Blob {
            pixels,
            area,
            equivalent_radius: (area as f64 / std::f64::consts::PI).sqrt(),
            cog,
        });
    }
    blobs.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.cog.0.total_cmp(&b.cog.0))
            .then(a.cog.1.total_cmp(&b.cog.1))
    });
    blobs
}

/// Result of counting landmark-sized blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Number of blobs with radius strictly greater than the disc radius.
    pub count: usize,
    pub points: Vec<Point>,
}

pub fn decode_landmarks(blobs: &[Blob], radius: f64) -> Decoded {
    let points: Vec<Point> = blobs
        .iter()
        .filter(|b| b.equivalent_radius > radius)
        .map(|b| b.cog)
        .collect();
    Decoded {
        count: points.len(),
        points,
    }
}
