//! Key-frame gating: blob-count check, calibrated Z-score gates on summed
//! uncertainty and the temporal window filter.

use crate::bunet::Bunet;
use crate::corpus::{Point, VideoSource};
use crate::error::{Error, Result};
use crate::maskgen::{decode_landmarks, extract_blobs};
use crate::nn::Real;
use crate::uncertainty::{aleatoric_predict, mc_dropout_predict, uncertainty_scalar, Prediction};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// How "λ frames in its adjacency" is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Accept frames inside a run of at least λ consecutive passing frames.
    RunLength,
    /// Accept a frame when every in-bounds frame of the λ-wide window centred on it passes.
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatingConfig {
    /// Blob radius threshold δ in pixels; also the training disc radius.
    pub delta: f64,
    /// Required blob count τ.
    pub tau: usize,
    /// Z-score threshold ξ.
    pub xi: f64,
    /// Temporal window λ in frames.
    pub lambda: usize,
    pub bin_threshold: f32,
    /// Percentile reported from the pool of accepted lengths.
    pub percentile: f64,
    pub temporal_mode: TemporalMode,
    pub stat_floor: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            delta: 2.0,
            tau: 2,
            xi: 1.0,
            lambda: 5,
            bin_threshold: 0.5,
            percentile: 75.0,
            temporal_mode: TemporalMode::RunLength,
            stat_floor: 1e-6,
        }
    }
}

impl GatingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.delta >= 0.0) {
            return bad(format!("gating.delta must be ≥ 0, got {}", self.delta));
        }
        if self.tau == 0 {
            return bad("gating.tau must be ≥ 1".into());
        }
        if !(self.xi > 0.0) {
            return bad(format!("gating.xi must be > 0, got {}", self.xi));
        }
        if self.lambda == 0 {
            return bad("gating.lambda must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.bin_threshold) {
            return bad(format!("gating.bin_threshold must lie in [0, 1], got {}", self.bin_threshold));
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return bad(format!("gating.percentile must lie in [0, 100], got {}", self.percentile));
        }
        if !(self.stat_floor > 0.0) {
            return bad(format!("gating.stat_floor must be > 0, got {}", self.stat_floor));
        }
        Ok(())
    }
}

/// Which confidence criteria are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateMode {
    #[serde(rename = "CQC")]
    Cqc,
    #[serde(rename = "CQC+AL")]
    CqcAl,
    #[serde(rename = "CQC+EP")]
    CqcEp,
    #[serde(rename = "CQC+AL+EP")]
    CqcAlEp,
}

impl GateMode {
    pub const ALL: [GateMode; 4] = [GateMode::Cqc, GateMode::CqcAl, GateMode::CqcEp, GateMode::CqcAlEp];

    pub fn uses_aleatoric(self) -> bool {
        matches!(self, GateMode::CqcAl | GateMode::CqcAlEp)
    }

    pub fn uses_epistemic(self) -> bool {
        matches!(self, GateMode::CqcEp | GateMode::CqcAlEp)
    }

    pub fn name(self) -> &'static str {
        match self {
            GateMode::Cqc => "CQC",
            GateMode::CqcAl => "CQC+AL",
            GateMode::CqcEp => "CQC+EP",
            GateMode::CqcAlEp => "CQC+AL+EP",
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateMode {
    type Err = Error;

    /// Case-insensitive; `full` is accepted for `CQC+AL+EP`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CQC" => Ok(GateMode::Cqc),
            "CQC+AL" => Ok(GateMode::CqcAl),
            "CQC+EP" => Ok(GateMode::CqcEp),
            "CQC+AL+EP" | "FULL" => Ok(GateMode::CqcAlEp),
            _ => Err(Error::Config(format!(
                "unknown gate mode '{s}' (expected cqc, cqc+al, cqc+ep or cqc+al+ep)"
            ))),
        }
    }
}

/// Summed-uncertainty statistics over calibration key frames plus the gate settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationStats {
    pub mu_alea: f64,
    pub sigma_alea: f64,
    pub mu_epi: f64,
    pub sigma_epi: f64,
    pub xi: f64,
    pub lambda: usize,
    pub delta: f64,
    pub tau: usize,
    pub bin_threshold: f32,
    pub temporal_mode: TemporalMode,
    pub n_calib: usize,
    pub mc_passes: usize,
    pub model_checksum: String,
}

impl CalibrationStats {
    pub fn check_model<T: Real>(&self, model: &Bunet<T>) -> Result<()> {
        let model_sum = model.checksum();
        if model_sum != self.model_checksum {
            return Err(Error::ChecksumMismatch {
                stats: self.model_checksum.clone(),
                model: model_sum,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display(), e.to_string()))
    }
}

/// Mean and population standard deviation, the latter floored at `floor`.
pub fn mean_std_floored(values: &[f64], floor: f64) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(floor))
}

/// Builds stats from per-video summed uncertainties of the calibration key frames.
pub fn stats_from_sums(
    alea_sums: &[f64],
    epi_sums: &[f64],
    cfg: &GatingConfig,
    mc_passes: usize,
    model_checksum: String,
) -> Result<CalibrationStats> {
    cfg.validate()?;
    if alea_sums.len() != epi_sums.len() {
        return Err(Error::Calibration(format!(
            "{} aleatoric sums but {} epistemic sums",
            alea_sums.len(),
            epi_sums.len()
        )));
    }
    if alea_sums.len() < 2 {
        return Err(Error::Calibration(format!(
            "at least 2 calibration videos are required, got {}",
            alea_sums.len()
        )));
    }
    if let Some(v) = alea_sums.iter().chain(epi_sums).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("calibration uncertainty sum {v}")));
    }
    let (mu_alea, sigma_alea) = mean_std_floored(alea_sums, cfg.stat_floor);
    let (mu_epi, sigma_epi) = mean_std_floored(epi_sums, cfg.stat_floor);
    Ok(CalibrationStats {
        mu_alea,
        sigma_alea,
        mu_epi,
        sigma_epi,
        xi: cfg.xi,
        lambda: cfg.lambda,
        delta: cfg.delta,
        tau: cfg.tau,
        bin_threshold: cfg.bin_threshold,
        temporal_mode: cfg.temporal_mode,
        n_calib: alea_sums.len(),
        mc_passes,
        model_checksum,
    })
}

/// Per-video summed uncertainties `(Σaleatoric, Σepistemic)` on each labelled key frame.
pub fn calibration_sums<T: Real, V: VideoSource>(
    model: &Bunet<T>,
    videos: &[V],
    mc_passes: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut alea = Vec::with_capacity(videos.len());
    let mut epi = Vec::with_capacity(videos.len());
    for v in videos {
        let k = v.labeled_key_index();
        let frame = v.frame(k);
        let (_, e) = mc_dropout_predict(model, frame, k, mc_passes, seed)?;
        let (_, a) = aleatoric_predict(model, frame)?;
        alea.push(uncertainty_scalar(&a));
        epi.push(uncertainty_scalar(&e));
    }
    Ok((alea, epi))
}

pub fn calibrate<T: Real, V: VideoSource>(
    model: &Bunet<T>,
    calib_videos: &[V],
    cfg: &GatingConfig,
    mc_passes: usize,
    seed: u64,
) -> Result<CalibrationStats> {
    if calib_videos.len() < 2 {
        return Err(Error::Calibration(format!(
            "at least 2 calibration videos are required, got {}",
            calib_videos.len()
        )));
    }
    let (alea, epi) = calibration_sums(model, calib_videos, mc_passes, seed)?;
    stats_from_sums(&alea, &epi, cfg, mc_passes, model.checksum())
}

pub fn z_score(sum: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Calibration(format!("Z-score needs σ > 0, got {sigma}")));
    }
    Ok((sum - mu).abs() / sigma)
}

/// What gating needs from one frame's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvidence {
    pub frame_index: usize,
    /// τ̂ on the mean heatmap.
    pub count: usize,
    pub points: Vec<Point>,
    pub sum_alea: f64,
    pub sum_epi: f64,
}

impl FrameEvidence {
    pub fn from_prediction(p: &Prediction, delta: f64, bin_threshold: f32) -> Self {
        let blobs = extract_blobs(&p.heatmap, p.height, p.width, bin_threshold);
        let decoded = decode_landmarks(&blobs, delta);
        Self {
            frame_index: p.frame_index,
            count: decoded.count,
            points: decoded.points,
            sum_alea: uncertainty_scalar(&p.aleatoric),
            sum_epi: uncertainty_scalar(&p.epistemic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDecision {
    pub frame_index: usize,
    pub cqc_pass: bool,
    pub count: usize,
    pub z_alea: f64,
    pub z_epi: f64,
    pub alea_pass: bool,
    pub epi_pass: bool,
    /// All enabled criteria pass, before the temporal filter.
    pub passed: bool,
    /// Set by [`apply_temporal`].
    pub accepted: bool,
    /// Distance between the two landmark COGs in pixels.
    pub length_px: Option<f64>,
}

pub fn gate_evidence(ev: &FrameEvidence, stats: &CalibrationStats, mode: GateMode) -> Result<FrameDecision> {
    let cqc_pass = ev.count == stats.tau;
    let z_alea = z_score(ev.sum_alea, stats.mu_alea, stats.sigma_alea)?;
    let z_epi = z_score(ev.sum_epi, stats.mu_epi, stats.sigma_epi)?;
    let alea_pass = !mode.uses_aleatoric() || !(z_alea > stats.xi);
    let epi_pass = !mode.uses_epistemic() || !(z_epi > stats.xi);
    let length_px = match (cqc_pass, ev.points.as_slice()) {
        (true, [a, b]) => Some(pixel_distance(*a, *b)),
        _ => None,
    };
    Ok(FrameDecision {
        frame_index: ev.frame_index,
        cqc_pass,
        count: ev.count,
        z_alea,
        z_epi,
        alea_pass,
        epi_pass,
        passed: cqc_pass && alea_pass && epi_pass,
        accepted: false,
        length_px,
    })
}

pub fn gate_frame(p: &Prediction, stats: &CalibrationStats, mode: GateMode) -> Result<FrameDecision> {
    gate_evidence(&FrameEvidence::from_prediction(p, stats.delta, stats.bin_threshold), stats, mode)
}

pub fn pixel_distance(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn temporal_filter(passes: &[bool], lambda: usize, mode: TemporalMode) -> Vec<bool> {
    let lambda = lambda.max(1);
    let n = passes.len();
    let mut out = vec![false; n];
    match mode {
        TemporalMode::RunLength => {
            let mut start = 0;
            while start < n {
                if !passes[start] {
                    start += 1;
                    continue;
                }
                let mut end = start;
                while end < n && passes[end] {
                    end += 1;
                }
                if end - start >= lambda {
                    out[start..end].iter_mut().for_each(|a| *a = true);
                }
                start = end;
            }
        }
        TemporalMode::Centered => {
            let before = (lambda - 1) / 2;
            let after = lambda / 2;
            for i in 0..n {
                let lo = i.saturating_sub(before);
                let hi = (i + after).min(n - 1);
                out[i] = passes[lo..=hi].iter().all(|&p| p);
            }
        }
    }
    out
}

/// Runs [`temporal_filter`] over decisions ordered by frame index.
pub fn apply_temporal(decisions: &mut [FrameDecision], lambda: usize, mode: TemporalMode) {
    let passes: Vec<bool> = decisions.iter().map(|d| d.passed).collect();
    for (d, a) in decisions.iter_mut().zip(temporal_filter(&passes, lambda, mode)) {
        d.accepted = a;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> CalibrationStats {
        stats_from_sums(&[9.0, 11.0], &[4.0, 6.0], &GatingConfig::default(), 30, "x".into()).unwrap()
    }

    fn evidence(count: usize, alea: f64, epi: f64) -> FrameEvidence {
        FrameEvidence {
            frame_index: 0,
            count,
            points: vec![(10.0, 10.0), (13.0, 14.0), (40.0, 40.0)][..count.min(3)].to_vec(),
            sum_alea: alea,
            sum_epi: epi,
        }
    }

    #[test]
    fn calibration_of_two_sums() {
        let s = stats_from_sums(&[2.0, 4.0], &[2.0, 4.0], &GatingConfig::default(), 30, String::new()).unwrap();
        assert_eq!((s.mu_alea, s.sigma_alea), (3.0, 1.0));
        assert_eq!((s.mu_epi, s.sigma_epi), (3.0, 1.0));
    }

    #[test]
    fn equal_sums_engage_the_floor() {
        let s = stats_from_sums(&[5.0; 4], &[7.0; 4], &GatingConfig::default(), 30, String::new()).unwrap();
        assert_eq!((s.mu_alea, s.sigma_alea), (5.0, 1e-6));
        assert_eq!((s.mu_epi, s.sigma_epi), (7.0, 1e-6));
    }

    #[test]
    fn calibration_needs_two_videos() {
        let r = stats_from_sums(&[1.0], &[1.0], &GatingConfig::default(), 30, String::new());
        assert!(matches!(r, Err(Error::Calibration(_))));
    }

    #[test]
    fn z_score_cases() {
        assert_eq!(z_score(3.0, 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(z_score(4.0, 3.0, 1.0).unwrap(), 1.0);
        assert_eq!(z_score(0.0, 3.0, 1.0).unwrap(), 3.0);
        assert!(z_score(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn gate_boundary_is_kept() {
        let s = stats();
        let d = gate_evidence(&evidence(2, 11.0, 6.0), &s, GateMode::CqcAlEp).unwrap();
        assert_eq!((d.z_alea, d.z_epi), (1.0, 1.0));
        assert!(d.passed);
        let d = gate_evidence(&evidence(2, 13.0, 5.0), &s, GateMode::CqcAlEp).unwrap();
        assert!(!d.alea_pass && d.epi_pass && !d.passed);
    }

    #[test]
    fn wrong_count_fails_regardless_of_uncertainty() {
        let d = gate_evidence(&evidence(3, 10.0, 5.0), &stats(), GateMode::CqcAlEp).unwrap();
        assert!(!d.cqc_pass && !d.passed && d.length_px.is_none());
    }

    #[test]
    fn cqc_mode_ignores_uncertainty() {
        let d = gate_evidence(&evidence(2, 1e9, 1e9), &stats(), GateMode::Cqc).unwrap();
        assert!(d.passed);
        assert_eq!(d.length_px, Some(5.0));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in GateMode::ALL {
            assert_eq!(m.name().parse::<GateMode>().unwrap(), m);
            assert_eq!(m.name().to_lowercase().parse::<GateMode>().unwrap(), m);
        }
        assert!("cqc+xx".parse::<GateMode>().is_err());
    }

    #[test]
    fn temporal_examples() {
        assert_eq!(temporal_filter(&[true; 10], 5, TemporalMode::RunLength), vec![true; 10]);
        let mut one = vec![false; 9];
        one[4] = true;
        assert_eq!(temporal_filter(&one, 5, TemporalMode::RunLength), vec![false; 9]);
        let run = [false, true, true, true, true, true, false, true];
        assert_eq!(
            temporal_filter(&run, 5, TemporalMode::RunLength),
            vec![false, true, true, true, true, true, false, false]
        );
        let mixed = [true, false, true, true];
        assert_eq!(temporal_filter(&mixed, 1, TemporalMode::RunLength), mixed.to_vec());
    }

    #[test]
    fn centered_window_clips_at_edges() {
        let p = [true, true, true, false, true, true, true, true, true];
        assert_eq!(
            temporal_filter(&p, 3, TemporalMode::Centered),
            vec![true, true, false, false, false, true, true, true, true]
        );
    }

    #[test]
    fn stats_json_round_trip_and_strictness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let s = stats();
        s.save(&path).unwrap();
        assert_eq!(CalibrationStats::load(&path).unwrap(), s);
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["bogus"] = serde_json::json!(1);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(CalibrationStats::load(&path), Err(Error::Format { .. })));
    }
}
