//! Per-video measurement: infer every frame, gate, pool accepted lengths and
//! report a percentile. Also the two reference measurements without gating.

use crate::bunet::Bunet;
use crate::corpus::{Point, VideoSource};
use crate::error::{Error, Result};
use crate::gating::{apply_temporal, gate_evidence, pixel_distance, CalibrationStats, FrameEvidence, GateMode};
use crate::maskgen::extract_blobs;
use crate::nn::Real;
use crate::uncertainty::{aleatoric_predict, predict_frame};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Stochastic passes per frame (M_E).
    pub mc_passes: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mc_passes: crate::uncertainty::DEFAULT_MC_PASSES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Uland(GateMode),
    AllFrames,
    SemiAuto,
}

impl Method {
    /// Baselines first, then the gate modes from fewest to most criteria.
    pub const ALL: [Method; 6] = [
        Method::AllFrames,
        Method::SemiAuto,
        Method::Uland(GateMode::Cqc),
        Method::Uland(GateMode::CqcAl),
        Method::Uland(GateMode::CqcEp),
        Method::Uland(GateMode::CqcAlEp),
    ];

    pub fn name(self) -> String {
        match self {
            Method::Uland(m) => format!("ULAND({m})"),
            Method::AllFrames => "ALL_FRAMES".into(),
            Method::SemiAuto => "SEMI_AUTO".into(),
        }
    }

    pub fn mode(self) -> &'static str {
        match self {
            Method::Uland(m) => m.name(),
            _ => "",
        }
    }

    /// File-name friendly form, e.g. `uland_cqc_al_ep`.
    pub fn slug(self) -> String {
        self.name()
            .to_ascii_lowercase()
            .replace(['(', '+'], "_")
            .replace(')', "")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeasurement {
    pub video_id: String,
    pub method: Method,
    /// Lengths in mm, in frame order.
    pub pooled_lengths: Vec<f64>,
    pub reported_length: Option<f64>,
    pub rejected: bool,
    pub accepted_indices: Vec<usize>,
}

impl VideoMeasurement {
    fn from_pool(video_id: &str, method: Method, pool: Vec<(usize, f64)>, percentile: f64) -> Self {
        let (accepted_indices, pooled_lengths): (Vec<usize>, Vec<f64>) = pool.into_iter().unzip();
        let reported_length = percentile_of(&pooled_lengths, percentile).ok();
        Self {
            video_id: video_id.to_string(),
            method,
            rejected: reported_length.is_none(),
            pooled_lengths,
            reported_length,
            accepted_indices,
        }
    }
}

pub fn measure_length(points: &[Point], pixel_spacing: f64) -> Result<f64> {
    match points {
        [a, b] => Ok(pixel_distance(*a, *b) * pixel_spacing),
        _ => Err(Error::Label(format!("a length needs exactly 2 points, got {}", points.len()))),
    }
}

/// Linear-interpolation percentile, `q` in [0, 100].
pub fn percentile_of(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of an empty pool".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    Ok(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

pub fn percentile_75(values: &[f64]) -> Result<f64> {
    percentile_of(values, 75.0)
}

/// Length in pixels between the COGs of the two largest blobs, if there are two.
pub fn two_largest_length_px(heatmap: &[f32], height: usize, width: usize, bin_threshold: f32) -> Option<f64> {
    let blobs = extract_blobs(heatmap, height, width, bin_threshold);
    match blobs.as_slice() {
        [a, b, ..] => Some(pixel_distance(a.cog, b.cog)),
        _ => None,
    }
}

/// Everything the measurement methods need from one frame; the maps themselves are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub evidence: FrameEvidence,
    /// Two-largest-blob length on the deterministic heatmap.
    pub det_length_px: Option<f64>,
}

/// Runs stochastic and deterministic inference on every frame, in order.
pub fn analyze_video<T: Real, V: VideoSource + ?Sized>(
    model: &Bunet<T>,
    video: &V,
    inference: &InferenceConfig,
    delta: f64,
    bin_threshold: f32,
) -> Result<Vec<FrameRecord>> {
    (0..video.len())
        .map(|i| {
            let p = predict_frame(model, video.frame(i), i, inference.mc_passes, inference.seed)?;
            Ok(FrameRecord {
                evidence: FrameEvidence::from_prediction(&p, delta, bin_threshold),
                det_length_px: two_largest_length_px(&p.heatmap_det, p.height, p.width, bin_threshold),
            })
        })
        .collect()
}

/// Gates analysed frames under `mode` and pools the accepted lengths.
pub fn measure_gated(
    video_id: &str,
    records: &[FrameRecord],
    stats: &CalibrationStats,
    mode: GateMode,
    pixel_spacing: f64,
    percentile: f64,
) -> Result<VideoMeasurement> {
    let mut decisions = records
        .iter()
        .map(|r| gate_evidence(&r.evidence, stats, mode))
        .collect::<Result<Vec<_>>>()?;
    apply_temporal(&mut decisions, stats.lambda, stats.temporal_mode);
    let pool = decisions
        .iter()
        .filter(|d| d.accepted)
        .filter_map(|d| d.length_px.map(|l| (d.frame_index, l * pixel_spacing)))
        .collect();
    Ok(VideoMeasurement::from_pool(video_id, Method::Uland(mode), pool, percentile))
}

pub fn measure_all_frames(video_id: &str, records: &[FrameRecord], pixel_spacing: f64, percentile: f64) -> VideoMeasurement {
    let pool = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.det_length_px.map(|l| (i, l * pixel_spacing)))
        .collect();
    VideoMeasurement::from_pool(video_id, Method::AllFrames, pool, percentile)
}

/// Fully automatic measurement. Reads frames and pixel spacing only.
pub fn predict_video<T: Real, V: VideoSource + ?Sized>(
    model: &Bunet<T>,
    stats: &CalibrationStats,
    video: &V,
    mode: GateMode,
    inference: &InferenceConfig,
    percentile: f64,
) -> Result<VideoMeasurement> {
    stats.check_model(model)?;
    let records = analyze_video(model, video, inference, stats.delta, stats.bin_threshold)?;
    measure_gated(video.id(), &records, stats, mode, video.pixel_spacing(), percentile)
}

/// Deterministic pass on every frame; any frame with two blobs contributes.
pub fn baseline_all_frames<T: Real, V: VideoSource + ?Sized>(
    model: &Bunet<T>,
    video: &V,
    bin_threshold: f32,
    percentile: f64,
) -> Result<VideoMeasurement> {
    let mut pool = Vec::new();
    for i in 0..video.len() {
        let f = video.frame(i);
        let (heat, _) = aleatoric_predict(model, f)?;
        if let Some(l) = two_largest_length_px(&heat, f.height, f.width, bin_threshold) {
            pool.push((i, l * video.pixel_spacing()));
        }
    }
    Ok(VideoMeasurement::from_pool(video.id(), Method::AllFrames, pool, percentile))
}

/// Deterministic pass on the labelled key frame only, or on every ground-truth
/// key frame when `all_of_key_set` is set.
pub fn baseline_semi_automatic<T: Real, V: VideoSource + ?Sized>(
    model: &Bunet<T>,
    video: &V,
    bin_threshold: f32,
    percentile: f64,
    all_of_key_set: bool,
) -> Result<VideoMeasurement> {
    let frames: Vec<usize> = if all_of_key_set {
        video.key_set().to_vec()
    } else {
        vec![video.labeled_key_index()]
    };
    let mut pool = Vec::new();
    for i in frames {
        let f = video.frame(i);
        let (heat, _) = aleatoric_predict(model, f)?;
        if let Some(l) = two_largest_length_px(&heat, f.height, f.width, bin_threshold) {
            pool.push((i, l * video.pixel_spacing()));
        }
    }
    Ok(VideoMeasurement::from_pool(video.id(), Method::SemiAuto, pool, percentile))
}

/// Semi-automatic measurement from records already computed for the video.
pub fn measure_semi_automatic(
    video_id: &str,
    records: &[FrameRecord],
    key_frames: &[usize],
    pixel_spacing: f64,
    percentile: f64,
) -> VideoMeasurement {
    let pool = key_frames
        .iter()
        .filter_map(|&i| records[i].det_length_px.map(|l| (i, l * pixel_spacing)))
        .collect();
    VideoMeasurement::from_pool(video_id, Method::SemiAuto, pool, percentile)
}

pub const MEASUREMENT_CSV_HEADER: &str = "video_id,method,mode,reported_mm,gt_mm,rejected,n_pooled,accepted_indices";

pub fn measurement_csv_row(m: &VideoMeasurement, gt_mm: f64) -> String {
    let indices: Vec<String> = m.accepted_indices.iter().map(|i| i.to_string()).collect();
    format!(
        "{},{},{},{},{},{},{},{}",
        m.video_id,
        m.method,
        m.method.mode(),
        m.reported_length.map(|v| v.to_string()).unwrap_or_default(),
        gt_mm,
        m.rejected,
        m.pooled_lengths.len(),
        indices.join(";")
    )
}
