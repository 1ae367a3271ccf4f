//! Synthetic key-frame video corpus.
//!
//! Each video shows a bright ribbon between two landmark endpoints. A periodic
//! visibility cycle modulates the ribbon's contrast, blur, length and position;
//! frames whose visibility reaches `v_key` form the key set. Exactly one key frame
//! carries a (noisy) landmark label. Speckle and drifting distractor blobs appear
//! on every frame.

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

pub const VIDEO_MAGIC: &[u8; 5] = b"ULVD1";

/// Grayscale frame, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!("{} pixels for {height}×{width}", pixels.len())));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * self.width + c]
    }
}

/// `(row, col)` in pixels, sub-pixel precision.
pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkLabel {
    pub points: Vec<Point>,
    /// Distance between the two points in millimetres.
    pub length_gt: f64,
}

/// Which partition a video belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Calib,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    pub frames: Vec<Frame>,
    pub labeled_key_index: usize,
    pub label: LandmarkLabel,
    /// Ground-truth key frames, ascending. Evaluation only.
    pub key_set: Vec<usize>,
    pub pixel_spacing: f64,
    pub seed: u64,
}

/// Read access to a video. Pipelines take this trait so tests can observe which
/// frames and which ground-truth fields a stage touches.
pub trait VideoSource: Sync {
    fn id(&self) -> &str;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn frame(&self, index: usize) -> &Frame;
    fn pixel_spacing(&self) -> f64;
    fn labeled_key_index(&self) -> usize;
    fn label(&self) -> &LandmarkLabel;
    fn key_set(&self) -> &[usize];
}

impl VideoSource for SyntheticVideo {
    fn id(&self) -> &str {
        &self.id
    }
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }
    fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }
    fn labeled_key_index(&self) -> usize {
        self.labeled_key_index
    }
    fn label(&self) -> &LandmarkLabel {
        &self.label
    }
    fn key_set(&self) -> &[usize] {
        &self.key_set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub p_min: usize,
    pub p_max: usize,
    /// Visibility cycle period in frames.
    pub period: f64,
    /// Sharpness exponent of the visibility cycle.
    pub gamma: f64,
    pub v_key: f64,
    /// Std of the Gaussian label-coordinate noise at full contrast, pixels; divided by the labelled frame's contrast.
    pub label_noise_std: f64,
    /// Max offset of the labelled frame from the visibility peak (stays inside the key set).
    pub key_jitter: usize,
    pub pixel_spacing: f64,
    pub length_min_px: f64,
    pub length_max_px: f64,
    /// Relative shortening of the ribbon at zero visibility.
    pub length_modulation: f64,
    /// Rigid displacement of the structure at zero visibility, pixels.
    pub motion_px: f64,
    pub ribbon_sigma: f64,
    pub ribbon_amplitude: f64,
    pub knob_sigma: f64,
    pub knob_amplitude: f64,
    /// Relative ribbon contrast at zero visibility.
    pub contrast_floor: f64,
    /// Relative widening of the ribbon profile at zero visibility.
    pub blur_gain: f64,
    /// Range of the per-video acquisition quality scaling all structure contrast.
    pub quality_range: (f64, f64),
    pub background_level: f64,
    pub speckle_std: f64,
    /// Frame-to-frame correlation of the speckle field.
    pub speckle_correlation: f64,
    pub additive_noise_std: f64,
    pub distractors_min: usize,
    pub distractors_max: usize,
    pub distractor_amplitude: (f64, f64),
    pub distractor_sigma: (f64, f64),
    /// Std of the per-frame random-walk step of each distractor, pixels.
    pub distractor_step: f64,
    /// Landmark-like fragments redrawn near the ribbon on every frame, fading in as visibility drops.
    pub fragments_min: usize,
    pub fragments_max: usize,
    /// Fragment amplitude at zero visibility, relative to `knob_amplitude`.
    pub fragment_amplitude: f64,
    /// Std of the fragment offset across the ribbon, pixels.
    pub fragment_spread: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            p_min: 32,
            p_max: 64,
            period: 32.0,
            gamma: 1.0,
            v_key: 0.85,
            label_noise_std: 0.5,
            key_jitter: 1,
            pixel_spacing: 0.5,
            length_min_px: 18.0,
            length_max_px: 34.0,
            length_modulation: 0.2,
            motion_px: 3.0,
            ribbon_sigma: 1.2,
            ribbon_amplitude: 0.45,
            knob_sigma: 1.6,
            knob_amplitude: 0.4,
            contrast_floor: 0.6,
            blur_gain: 0.5,
            quality_range: (0.4, 1.0),
            background_level: 0.18,
            speckle_std: 0.3,
            speckle_correlation: 0.3,
            additive_noise_std: 0.02,
            distractors_min: 1,
            distractors_max: 3,
            distractor_amplitude: (0.3, 0.6),
            distractor_sigma: (1.5, 3.0),
            distractor_step: 0.8,
            fragments_min: 2,
            fragments_max: 4,
            fragment_amplitude: 1.0,
            fragment_spread: 3.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < 16 || self.width < 16 {
            return bad(format!("frame {}×{} smaller than 16×16", self.height, self.width));
        }
        if !(self.period >= 8.0) {
            return bad(format!("period {} < 8 frames", self.period));
        }
        if self.p_min == 0 || self.p_min > self.p_max {
            return bad(format!("invalid frame-count range [{}, {}]", self.p_min, self.p_max));
        }
        if !(self.v_key > 0.0 && self.v_key < 1.0) {
            return bad(format!("v_key {} outside (0, 1)", self.v_key));
        }
        if !(self.label_noise_std >= 0.0) || !(self.gamma > 0.0) {
            return bad("label_noise_std must be ≥ 0 and gamma > 0".into());
        }
        if !(self.length_min_px > 0.0 && self.length_min_px <= self.length_max_px) {
            return bad("invalid ribbon length range".into());
        }
        let span = self.height.min(self.width) as f64;
        if self.length_max_px + 2.0 * (self.motion_px + 4.0) > span {
            return bad(format!("ribbon up to {} px does not fit a {span}-px frame", self.length_max_px));
        }
        if !(0.0..=1.0).contains(&self.contrast_floor)
            || !(0.0..=1.0).contains(&self.length_modulation)
            || !(0.0..1.0).contains(&self.speckle_correlation)
        {
            return bad("contrast_floor, length_modulation and speckle_correlation must lie in [0, 1]".into());
        }
        if self.fragments_min > self.fragments_max {
            return bad(format!("invalid fragment range [{}, {}]", self.fragments_min, self.fragments_max));
        }
        if self.distractors_min == 0 || self.distractors_min > self.distractors_max {
            return bad("need at least one distractor per frame".into());
        }
        let (q0, q1) = self.quality_range;
        if !(q0 > 0.0 && q0 <= q1 && q1 <= 1.0) {
            return bad(format!("quality range [{q0}, {q1}] must satisfy 0 < lo ≤ hi ≤ 1"));
        }
        let ranges = [self.distractor_amplitude, self.distractor_sigma];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi)) {
            return bad("distractor ranges must be positive and ordered".into());
        }
        let nonneg = [
            self.pixel_spacing,
            self.ribbon_sigma,
            self.knob_sigma,
            self.ribbon_amplitude,
            self.knob_amplitude,
            self.blur_gain,
            self.background_level,
            self.speckle_std,
            self.additive_noise_std,
            self.distractor_step,
            self.motion_px,
            self.fragment_amplitude,
            self.fragment_spread,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.pixel_spacing > 0.0) {
            return bad("amplitudes, widths and noise levels must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Distractor {
    pos: Point,
    amplitude: f64,
    sigma: f64,
}

/// Per-video geometry and appearance parameters, drawn from the video seed.
#[derive(Debug, Clone)]
pub struct Scene {
    cfg: GenConfig,
    pub n_frames: usize,
    pub phase: f64,
    pub center: Point,
    /// Unit vector along the ribbon.
    pub direction: Point,
    /// Unit vector of the rigid motion over the cycle.
    pub motion_dir: Point,
    pub peak_length_px: f64,
    pub quality: f64,
    background: Vec<f64>,
}

impl Scene {
    fn sample(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let n_frames = rng.random_range(cfg.p_min..=cfg.p_max);
        let phase = rng.random_range(0.0..cfg.period);
        let peak = rng.random_range(cfg.length_min_px..=cfg.length_max_px);
        let theta = rng.random_range(0.0..PI);
        let direction = (theta.sin(), theta.cos());
        let mtheta = rng.random_range(0.0..2.0 * PI);
        let motion_dir = (mtheta.sin(), mtheta.cos());
        let margin = 3.0 + cfg.motion_px;
        let half_r = 0.5 * peak * direction.0.abs() + margin;
        let half_c = 0.5 * peak * direction.1.abs() + margin;
        if 2.0 * half_r >= h - 1.0 || 2.0 * half_c >= w - 1.0 {
            return Err(Error::Generation("ribbon does not fit in frame".into()));
        }
        let center = (
            rng.random_range(half_r..=(h - 1.0 - half_r)),
            rng.random_range(half_c..=(w - 1.0 - half_c)),
        );
        // Smooth background: a few low-frequency cosines around the base level.
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.5..2.0) * 2.0 * PI / h,
                    rng.random_range(0.5..2.0) * 2.0 * PI / w,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.05..0.15),
                )
            })
            .collect();
        let mut background = Vec::with_capacity(cfg.height * cfg.width);
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                let m: f64 = waves
                    .iter()
                    .map(|&(fr, fc, ph, a)| a * (fr * r as f64 + fc * c as f64 + ph).cos())
                    .sum();
                background.push(cfg.background_level * (1.0 + m));
            }
        }
        let (q0, q1) = cfg.quality_range;
        let quality = if q0 < q1 { rng.random_range(q0..=q1) } else { q0 };
        Ok(Self {
            cfg: cfg.clone(),
            n_frames,
            phase,
            center,
            direction,
            motion_dir,
            peak_length_px: peak,
            quality,
            background,
        })
    }

    /// `max(0, cos(2π(t − φ)/T))^γ`
    pub fn visibility(&self, t: usize) -> f64 {
        let c = (2.0 * PI * (t as f64 - self.phase) / self.cfg.period).cos();
        c.max(0.0).powf(self.cfg.gamma)
    }

    pub fn length_px(&self, t: usize) -> f64 {
        self.peak_length_px * (1.0 - self.cfg.length_modulation * (1.0 - self.visibility(t)))
    }

    /// Ribbon endpoints at frame `t`, ordered by (row, col).
    pub fn endpoints(&self, t: usize) -> [Point; 2] {
        let v = self.visibility(t);
        let shift = self.cfg.motion_px * (1.0 - v);
        let c = (
            self.center.0 + shift * self.motion_dir.0,
            self.center.1 + shift * self.motion_dir.1,
        );
        let half = 0.5 * self.length_px(t);
        let a = (c.0 - half * self.direction.0, c.1 - half * self.direction.1);
        let b = (c.0 + half * self.direction.0, c.1 + half * self.direction.1);
        if (a.0, a.1) <= (b.0, b.1) {
            [a, b]
        } else {
            [b, a]
        }
    }

    /// Key set: every frame with visibility ≥ `v_key`.
    pub fn key_set(&self) -> Vec<usize> {
        (0..self.n_frames).filter(|&t| self.visibility(t) >= self.cfg.v_key).collect()
    }

    /// Relative structure contrast at frame `t`, 1 for a full-quality video at peak visibility.
    pub fn contrast(&self, t: usize) -> f64 {
        self.quality * (self.cfg.contrast_floor + (1.0 - self.cfg.contrast_floor) * self.visibility(t))
    }

    /// Ribbon and endpoint layer at frame `t` (no background, distractors or noise).
    pub fn render_structure(&self, t: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let v = self.visibility(t);
        let contrast = self.contrast(t);
        let spread = 1.0 + cfg.blur_gain * (1.0 - v);
        let rs = cfg.ribbon_sigma * spread;
        let ks = cfg.knob_sigma * spread;
        let ra = cfg.ribbon_amplitude * contrast / spread;
        let ka = cfg.knob_amplitude * contrast / spread;
        let [a, b] = self.endpoints(t);
        let seg = (b.0 - a.0, b.1 - a.1);
        let seg_len2 = (seg.0 * seg.0 + seg.1 * seg.1).max(1e-12);
        let mut out = Vec::with_capacity(cfg.height * cfg.width);
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                let (y, x) = (r as f64, c as f64);
                let u = (((y - a.0) * seg.0 + (x - a.1) * seg.1) / seg_len2).clamp(0.0, 1.0);
                let d2 = (y - a.0 - u * seg.0).powi(2) + (x - a.1 - u * seg.1).powi(2);
                let ka2 = (y - a.0).powi(2) + (x - a.1).powi(2);
                let kb2 = (y - b.0).powi(2) + (x - b.1).powi(2);
                out.push(
                    ra * (-d2 / (2.0 * rs * rs)).exp()
                        + ka * ((-ka2 / (2.0 * ks * ks)).exp() + (-kb2 / (2.0 * ks * ks)).exp()),
                );
            }
        }
        out
    }

    /// Fragments of frame `t`; drawn from their own stream so the rest of the video does not depend on them.
    fn fragments(&self, seed: u64, t: usize) -> Vec<Distractor> {
        let cfg = &self.cfg;
        let amplitude = self.quality * cfg.knob_amplitude * cfg.fragment_amplitude * (1.0 - self.visibility(t));
        if amplitude <= 0.0 || cfg.fragments_max == 0 {
            return Vec::new();
        }
        let mut rng = rng::stream(seed, &[tag::FRAGMENTS, t as u64]);
        let [a, b] = self.endpoints(t);
        let normal = (-self.direction.1, self.direction.0);
        let n = rng.random_range(cfg.fragments_min..=cfg.fragments_max);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(-0.1..1.1);
                let off = cfg.fragment_spread * rng.sample::<f64, _>(StandardNormal);
                Distractor {
                    pos: (
                        a.0 + u * (b.0 - a.0) + off * normal.0,
                        a.1 + u * (b.1 - a.1) + off * normal.1,
                    ),
                    amplitude,
                    sigma: cfg.knob_sigma,
                }
            })
            .collect()
    }

    /// Mean of the structure layer over pixels within `ribbon_sigma` of the peak-frame segment.
    pub fn ribbon_contrast(&self, t: usize) -> f64 {
        let key = (0..self.n_frames)
            .max_by(|&x, &y| self.visibility(x).total_cmp(&self.visibility(y)).then(y.cmp(&x)))
            .unwrap_or(0);
        let [a, b] = self.endpoints(key);
        let seg = (b.0 - a.0, b.1 - a.1);
        let seg_len2 = (seg.0 * seg.0 + seg.1 * seg.1).max(1e-12);
        let layer = self.render_structure(t);
        let (mut sum, mut n) = (0.0, 0usize);
        for r in 0..self.cfg.height {
            for c in 0..self.cfg.width {
                let (y, x) = (r as f64, c as f64);
                let u = (((y - a.0) * seg.0 + (x - a.1) * seg.1) / seg_len2).clamp(0.0, 1.0);
                let d2 = (y - a.0 - u * seg.0).powi(2) + (x - a.1 - u * seg.1).powi(2);
                if d2 <= self.cfg.ribbon_sigma.powi(2) {
                    sum += layer[r * self.cfg.width + c];
                    n += 1;
                }
            }
        }
        sum / n.max(1) as f64
    }
}

fn gaussian_layer(out: &mut [f64], w: usize, d: &Distractor) {
    let reach = (4.0 * d.sigma).ceil() as isize;
    let h = out.len() / w;
    let (r0, c0) = (d.pos.0.round() as isize, d.pos.1.round() as isize);
    for r in (r0 - reach).max(0)..(r0 + reach + 1).min(h as isize) {
        for c in (c0 - reach).max(0)..(c0 + reach + 1).min(w as isize) {
            let d2 = (r as f64 - d.pos.0).powi(2) + (c as f64 - d.pos.1).powi(2);
            out[r as usize * w + c as usize] += d.amplitude * (-d2 / (2.0 * d.sigma * d.sigma)).exp();
        }
    }
}

/// Draws the scene of a video without rendering it.
pub fn scene_for(cfg: &GenConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, &[tag::VIDEO]);
    Scene::sample(cfg, &mut rng)
}

pub fn generate_video(cfg: &GenConfig, seed: u64) -> Result<SyntheticVideo> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, &[tag::VIDEO]);
    let scene = Scene::sample(cfg, &mut rng)?;
    let key_set = scene.key_set();
    if key_set.is_empty() {
        return Err(Error::Generation(format!(
            "no frame reaches visibility {} in {} frames",
            cfg.v_key, scene.n_frames
        )));
    }
    let peak = (0..scene.n_frames)
        .max_by(|&a, &b| scene.visibility(a).total_cmp(&scene.visibility(b)).then(b.cmp(&a)))
        .expect("non-empty video");
    let candidates: Vec<usize> = key_set
        .iter()
        .copied()
        .filter(|&t| t.abs_diff(peak) <= cfg.key_jitter)
        .collect();
    let k = candidates[rng.random_range(0..candidates.len())];

    // Annotators place points less precisely on faint structures.
    let noise = Normal::new(0.0, cfg.label_noise_std / scene.contrast(k)).unwrap();
    let (h, w) = (cfg.height, cfg.width);
    let clamp_r = |v: f64| v.clamp(0.0, (h - 1) as f64);
    let clamp_c = |v: f64| v.clamp(0.0, (w - 1) as f64);
    let mut points: Vec<Point> = scene
        .endpoints(k)
        .iter()
        .map(|&(r, c)| {
            if cfg.label_noise_std > 0.0 {
                (clamp_r(r + noise.sample(&mut rng)), clamp_c(c + noise.sample(&mut rng)))
            } else {
                (r, c)
            }
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let length_px = ((points[0].0 - points[1].0).powi(2) + (points[0].1 - points[1].1).powi(2)).sqrt();

    let n_dis = rng.random_range(cfg.distractors_min..=cfg.distractors_max);
    let mut distractors: Vec<Distractor> = (0..n_dis)
        .map(|_| Distractor {
            pos: (rng.random_range(4.0..(h as f64 - 4.0)), rng.random_range(4.0..(w as f64 - 4.0))),
            amplitude: rng.random_range(cfg.distractor_amplitude.0..=cfg.distractor_amplitude.1),
            sigma: rng.random_range(cfg.distractor_sigma.0..=cfg.distractor_sigma.1),
        })
        .collect();

    let rho = cfg.speckle_correlation;
    let innov = (1.0 - rho * rho).sqrt();
    let mut speckle: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    let mut frames = Vec::with_capacity(scene.n_frames);
    for t in 0..scene.n_frames {
        if t > 0 {
            for s in speckle.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *s = rho * *s + innov * z;
            }
            for d in distractors.iter_mut() {
                let step: (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                d.pos.0 = reflect(d.pos.0 + cfg.distractor_step * step.0, 2.0, h as f64 - 3.0);
                d.pos.1 = reflect(d.pos.1 + cfg.distractor_step * step.1, 2.0, w as f64 - 3.0);
            }
        }
        let mut clean = scene.render_structure(t);
        for (v, b) in clean.iter_mut().zip(&scene.background) {
            *v += b;
        }
        for d in &distractors {
            gaussian_layer(&mut clean, w, d);
        }
        for f in scene.fragments(seed, t) {
            gaussian_layer(&mut clean, w, &f);
        }
        let pixels = clean
            .iter()
            .zip(&speckle)
            .map(|(&v, &s)| {
                let n: f64 = rng.sample(StandardNormal);
                let mult = (1.0 + cfg.speckle_std * s).max(0.0);
                (v * mult + cfg.additive_noise_std * n).clamp(0.0, 1.0) as f32
            })
            .collect();
        frames.push(Frame {
            height: h,
            width: w,
            pixels,
        });
    }

    Ok(SyntheticVideo {
        id: format!("v{seed:016x}"),
        frames,
        labeled_key_index: k,
        label: LandmarkLabel {
            points,
            length_gt: length_px * cfg.pixel_spacing,
        },
        key_set,
        pixel_spacing: cfg.pixel_spacing,
        seed,
    })
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        (2.0 * lo - v).min(hi)
    } else if v > hi {
        (2.0 * hi - v).max(lo)
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<SyntheticVideo>,
    pub calib: Vec<SyntheticVideo>,
    pub test: Vec<SyntheticVideo>,
    pub generation_config: GenConfig,
    pub master_seed: u64,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[SyntheticVideo] {
        match split {
            Split::Train => &self.train,
            Split::Calib => &self.calib,
            Split::Test => &self.test,
        }
    }

    pub fn find(&self, id: &str) -> Option<&SyntheticVideo> {
        self.train.iter().chain(&self.calib).chain(&self.test).find(|v| v.id == id)
    }
}

/// Sizes of (train, calib, test): 10% test, then 10% of the rest for calibration,
/// each floored with a minimum of one video; the remainder trains.
pub fn split_sizes(n_videos: usize) -> Result<(usize, usize, usize)> {
    if n_videos < 10 {
        return Err(Error::Config(format!("need at least 10 videos to populate every split, got {n_videos}")));
    }
    let test = (n_videos / 10).max(1);
    let calib = ((n_videos - test) / 10).max(1);
    Ok((n_videos - test - calib, calib, test))
}

pub fn generate_corpus(cfg: &GenConfig, n_videos: usize, master_seed: u64) -> Result<Corpus> {
    use rayon::prelude::*;
    cfg.validate()?;
    let (n_train, n_calib, _) = split_sizes(n_videos)?;
    let videos: Vec<SyntheticVideo> = (0..n_videos)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive(master_seed, &[tag::CORPUS, i as u64]);
            generate_video(cfg, seed).map(|mut v| {
                v.id = format!("v{i:04}");
                v
            })
        })
        .collect::<Result<_>>()?;
    let mut it = videos.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let calib = it.by_ref().take(n_calib).collect();
    let test = it.collect();
    Ok(Corpus {
        train,
        calib,
        test,
        generation_config: cfg.clone(),
        master_seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    #[serde(rename = "P")]
    frames: usize,
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    k: usize,
    #[serde(rename = "K")]
    key_set: Vec<usize>,
    label_points: Vec<Point>,
    length_gt: f64,
    pixel_spacing: f64,
    split: Split,
    seed: u64,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    master_seed: u64,
    generation_config: GenConfig,
    videos: Vec<ManifestEntry>,
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (split, videos) in [
        (Split::Train, &corpus.train),
        (Split::Calib, &corpus.calib),
        (Split::Test, &corpus.test),
    ] {
        for v in videos {
            let file = format!("{}.ulvd", v.id);
            write_video_tensor(v, &dir.join(&file))?;
            let (height, width) = v.frames.first().map_or((0, 0), |f| (f.height, f.width));
            entries.push(ManifestEntry {
                id: v.id.clone(),
                frames: v.frames.len(),
                height,
                width,
                k: v.labeled_key_index,
                key_set: v.key_set.clone(),
                label_points: v.label.points.clone(),
                length_gt: v.label.length_gt,
                pixel_spacing: v.pixel_spacing,
                split,
                seed: v.seed,
                file,
            });
        }
    }
    let manifest = Manifest {
        master_seed: corpus.master_seed,
        generation_config: corpus.generation_config.clone(),
        videos: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn write_video_tensor(v: &SyntheticVideo, path: &Path) -> Result<()> {
    let (h, w) = v.frames.first().map_or((0, 0), |f| (f.height, f.width));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(VIDEO_MAGIC)?;
    for d in [v.frames.len(), h, w] {
        f.write_all(&(d as u32).to_le_bytes())?;
    }
    for frame in &v.frames {
        for p in &frame.pixels {
            f.write_all(&p.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

fn read_video_tensor(path: &Path, entry: &ManifestEntry) -> Result<Vec<Frame>> {
    let name = path.display();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::format(&name, format!("cannot open: {e}")))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 17 {
        return Err(Error::format(&name, "truncated header"));
    }
    if &bytes[..5] != VIDEO_MAGIC {
        return Err(Error::format(&name, "bad magic, expected ULVD1"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let (p, h, w) = (dim(0), dim(1), dim(2));
    for (field, got, want) in [("P", p, entry.frames), ("H", h, entry.height), ("W", w, entry.width)] {
        if got != want {
            return Err(Error::format(&name, format!("header {field}={got} but manifest says {want}")));
        }
    }
    let expected = 17 + 4 * p * h * w;
    if bytes.len() != expected {
        return Err(Error::format(
            &name,
            format!("payload is {} bytes, expected {} for {p}×{h}×{w}", bytes.len() - 17, expected - 17),
        ));
    }
    let values: Vec<f32> = bytes[17..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(values
        .chunks(h * w)
        .map(|c| Frame {
            height: h,
            width: w,
            pixels: c.to_vec(),
        })
        .collect())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::format(manifest_path.display(), format!("cannot read: {e}")))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path.display(), e.to_string()))?;
    let mut corpus = Corpus {
        train: Vec::new(),
        calib: Vec::new(),
        test: Vec::new(),
        generation_config: manifest.generation_config,
        master_seed: manifest.master_seed,
    };
    for e in &manifest.videos {
        let frames = read_video_tensor(&dir.join(&e.file), e)?;
        if e.k >= frames.len() || !e.key_set.contains(&e.k) {
            return Err(Error::format(manifest_path.display(), format!("video {}: k={} not in K", e.id, e.k)));
        }
        let video = SyntheticVideo {
            id: e.id.clone(),
            frames,
            labeled_key_index: e.k,
            label: LandmarkLabel {
                points: e.label_points.clone(),
                length_gt: e.length_gt,
            },
            key_set: e.key_set.clone(),
            pixel_spacing: e.pixel_spacing,
            seed: e.seed,
        };
        match e.split {
            Split::Train => corpus.train.push(video),
            Split::Calib => corpus.calib.push(video),
            Split::Test => corpus.test.push(video),
        }
    }
    Ok(corpus)
}
