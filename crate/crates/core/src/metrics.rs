//! Agreement metrics and the method comparison harness.

use crate::bunet::Bunet;
use crate::corpus::VideoSource;
use crate::error::{Error, Result};
use crate::gating::CalibrationStats;
use crate::nn::Real;
use crate::pipeline::{
    analyze_video, measure_all_frames, measure_gated, measure_semi_automatic, measurement_csv_row, InferenceConfig,
    Method, VideoMeasurement, MEASUREMENT_CSV_HEADER,
};
use std::fmt::Write as _;
use std::path::Path;

/// Squared Pearson correlation in percent.
pub fn r2_score(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} references", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Undefined(format!("correlation needs at least 2 pairs, got {}", pred.len())));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gt.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sxy += (p - mp) * (g - mg);
        sxx += (p - mp) * (p - mp);
        syy += (g - mg) * (g - mg);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant list".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok((100.0 * r * r).min(100.0))
}

/// Relative improvement over a baseline, in percent.
pub fn delta_r2(r2: f64, r2_baseline: f64) -> Result<f64> {
    if !(r2_baseline > 0.0) {
        return Err(Error::Undefined(format!("relative change against baseline R² {r2_baseline}")));
    }
    Ok(100.0 * (r2 - r2_baseline) / r2_baseline)
}

/// Integer ΔR² as tabulated; halves go to the even neighbour.
pub fn delta_r2_rounded(r2: f64, r2_baseline: f64) -> Result<i64> {
    Ok(delta_r2(r2, r2_baseline)?.round_ties_even() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mae: f64,
    /// Population standard deviation of the absolute errors.
    pub std: f64,
    pub max: f64,
}

pub fn error_stats(pred: &[f64], gt: &[f64]) -> Result<ErrorStats> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} references", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no evaluated videos".into()));
    }
    let abs: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).collect();
    let n = abs.len() as f64;
    let mae = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / n;
    Ok(ErrorStats {
        mae,
        std: var.sqrt(),
        max: abs.iter().copied().fold(0.0, f64::max),
    })
}

pub fn reject_rate(measurements: &[VideoMeasurement]) -> Result<f64> {
    if measurements.is_empty() {
        return Err(Error::Empty("no measurements".into()));
    }
    let rejected = measurements.iter().filter(|m| m.rejected).count();
    Ok(100.0 * rejected as f64 / measurements.len() as f64)
}

/// Rank AUC of `-sum` as a key-frame score; ties count one half.
pub fn key_frame_separation_auc(sums: &[f64], is_key: &[bool]) -> Result<f64> {
    if sums.len() != is_key.len() {
        return Err(Error::Shape(format!("{} sums for {} flags", sums.len(), is_key.len())));
    }
    let n_key = is_key.iter().filter(|&&k| k).count();
    let n_other = sums.len() - n_key;
    if n_key == 0 || n_other == 0 {
        return Err(Error::Undefined("separation needs both key and non-key frames".into()));
    }
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]));
    let mut key_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && sums[order[j + 1]] == sums[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        key_rank_sum += rank * order[i..=j].iter().filter(|&&o| is_key[o]).count() as f64;
        i = j + 1;
    }
    let nk = n_key as f64;
    Ok((key_rank_sum - nk * (nk + 1.0) / 2.0) / (nk * n_other as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    /// `None` when fewer than two videos were measured or a list is constant.
    pub r2_pct: Option<f64>,
    /// Against `ALL_FRAMES`; `None` for that row itself.
    pub delta_r2_pct: Option<f64>,
    pub errors: Option<ErrorStats>,
    pub reject_rate_pct: f64,
    pub n_evaluated: usize,
    pub n_videos: usize,
}

/// Scores one method from `(measurement, ground truth mm)` pairs.
pub fn evaluate(method: Method, rows: &[(VideoMeasurement, f64)]) -> Result<EvalReport> {
    let measurements: Vec<VideoMeasurement> = rows.iter().map(|(m, _)| m.clone()).collect();
    let (pred, gt): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|(m, g)| m.reported_length.map(|p| (p, *g)))
        .unzip();
    Ok(EvalReport {
        method,
        r2_pct: r2_score(&pred, &gt).ok(),
        delta_r2_pct: None,
        errors: error_stats(&pred, &gt).ok(),
        reject_rate_pct: reject_rate(&measurements)?,
        n_evaluated: pred.len(),
        n_videos: rows.len(),
    })
}

/// Fills `delta_r2_pct` for every row except the baseline.
pub fn attach_delta(reports: &mut [EvalReport], baseline: Method) {
    let base = reports.iter().find(|r| r.method == baseline).and_then(|r| r.r2_pct);
    for r in reports.iter_mut() {
        r.delta_r2_pct = match (r.method == baseline, r.r2_pct, base) {
            (false, Some(v), Some(b)) => delta_r2(v, b).ok(),
            _ => None,
        };
    }
}

pub const REPORT_CSV_HEADER: &str =
    "method,mode,r2_pct,delta_r2_pct,delta_r2_rounded,mae_mm,std_mm,max_mm,reject_rate_pct,n_evaluated,n_videos";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into())
}

pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for r in reports {
        let rounded = r.delta_r2_pct.map(|d| format!("{:+}", d.round_ties_even() as i64));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.method.mode(),
            opt(r.r2_pct),
            opt(r.delta_r2_pct),
            rounded.unwrap_or_else(|| "n/a".into()),
            opt(r.errors.map(|e| e.mae)),
            opt(r.errors.map(|e| e.std)),
            opt(r.errors.map(|e| e.max)),
            r.reject_rate_pct,
            r.n_evaluated,
            r.n_videos
        );
    }
    s
}

/// Summed uncertainties of one test frame with its ground-truth key flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub video_id: String,
    pub frame_index: usize,
    pub is_key: bool,
    pub sum_alea: f64,
    pub sum_epi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AblationOptions {
    pub inference: InferenceConfig,
    pub percentile: f64,
    /// Semi-automatic reference measures every ground-truth key frame instead of k only.
    pub semi_all_of_key_set: bool,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub reports: Vec<EvalReport>,
    /// One entry per method in [`Method::ALL`] order, videos in input order.
    pub measurements: Vec<(Method, Vec<(VideoMeasurement, f64)>)>,
    pub frames: Vec<FrameScore>,
}

impl AblationResult {
    pub fn report(&self, method: Method) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn r2(&self, method: Method) -> Option<f64> {
        self.report(method).and_then(|r| r.r2_pct)
    }

    /// `(aleatoric, epistemic)` key-frame separation over all test frames.
    pub fn separation_auc(&self) -> Result<(f64, f64)> {
        let key: Vec<bool> = self.frames.iter().map(|f| f.is_key).collect();
        let alea: Vec<f64> = self.frames.iter().map(|f| f.sum_alea).collect();
        let epi: Vec<f64> = self.frames.iter().map(|f| f.sum_epi).collect();
        Ok((key_frame_separation_auc(&alea, &key)?, key_frame_separation_auc(&epi, &key)?))
    }

    pub fn frames_csv(&self) -> String {
        let mut s = String::from("video_id,frame,is_key,sum_aleatoric,sum_epistemic,blob_count\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                f.video_id, f.frame_index, f.is_key, f.sum_alea, f.sum_epi, f.count
            );
        }
        s
    }

    pub fn measurements_csv(&self) -> String {
        let mut s = String::from(MEASUREMENT_CSV_HEADER);
        s.push('\n');
        for (_, rows) in &self.measurements {
            for (m, gt) in rows {
                s.push_str(&measurement_csv_row(m, *gt));
                s.push('\n');
            }
        }
        s
    }

    pub fn scatter_csv(&self, method: Method) -> Option<String> {
        let (_, rows) = self.measurements.iter().find(|(m, _)| *m == method)?;
        let mut s = String::from("video_id,pred_mm,gt_mm\n");
        for (m, gt) in rows {
            if let Some(p) = m.reported_length {
                let _ = writeln!(s, "{},{},{}", m.video_id, p, gt);
            }
        }
        Some(s)
    }

    /// Writes `report.csv`, `scatter_<method>.csv`, `measurements.csv` and `frames.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), report_csv(&self.reports))?;
        for (method, _) in &self.measurements {
            if let Some(s) = self.scatter_csv(*method) {
                std::fs::write(dir.join(format!("scatter_{}.csv", method.slug())), s)?;
            }
        }
        std::fs::write(dir.join("measurements.csv"), self.measurements_csv())?;
        std::fs::write(dir.join("frames.csv"), self.frames_csv())?;
        Ok(())
    }
}

/// Evaluates the two reference measurements and the four gate modes on the same
/// test videos. Frames are inferred once per video and shared by every method.
pub fn run_ablation<T: Real, V: VideoSource>(
    model: &Bunet<T>,
    stats: &CalibrationStats,
    test_videos: &[V],
    opts: &AblationOptions,
) -> Result<AblationResult> {
    run_ablation_with(model, stats, test_videos, opts, &mut |_, _| {})
}

/// As [`run_ablation`], calling `progress(done, total)` after each video.
pub fn run_ablation_with<T: Real, V: VideoSource>(
    model: &Bunet<T>,
    stats: &CalibrationStats,
    test_videos: &[V],
    opts: &AblationOptions,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<AblationResult> {
    stats.check_model(model)?;
    if test_videos.is_empty() {
        return Err(Error::Empty("no test videos".into()));
    }
    let mut measurements: Vec<(Method, Vec<(VideoMeasurement, f64)>)> =
        Method::ALL.iter().map(|&m| (m, Vec::with_capacity(test_videos.len()))).collect();
    let mut frames = Vec::new();
    for (done, video) in test_videos.iter().enumerate() {
        let records = analyze_video(model, video, &opts.inference, stats.delta, stats.bin_threshold)?;
        let id = video.id();
        let spacing = video.pixel_spacing();
        let gt = video.label().length_gt;
        let key_set = video.key_set();
        for r in &records {
            frames.push(FrameScore {
                video_id: id.to_string(),
                frame_index: r.evidence.frame_index,
                is_key: key_set.contains(&r.evidence.frame_index),
                sum_alea: r.evidence.sum_alea,
                sum_epi: r.evidence.sum_epi,
                count: r.evidence.count,
            });
        }
        let semi_frames = if opts.semi_all_of_key_set {
            key_set.to_vec()
        } else {
            vec![video.labeled_key_index()]
        };
        for (method, rows) in measurements.iter_mut() {
            let m = match *method {
                Method::AllFrames => measure_all_frames(id, &records, spacing, opts.percentile),
                Method::SemiAuto => measure_semi_automatic(id, &records, &semi_frames, spacing, opts.percentile),
                Method::Uland(mode) => measure_gated(id, &records, stats, mode, spacing, opts.percentile)?,
            };
            rows.push((m, gt));
        }
        progress(done + 1, test_videos.len());
    }
    let mut reports = measurements
        .iter()
        .map(|(m, rows)| evaluate(*m, rows))
        .collect::<Result<Vec<_>>>()?;
    attach_delta(&mut reports, Method::AllFrames);
    Ok(AblationResult {
        reports,
        measurements,
        frames,
    })
}
