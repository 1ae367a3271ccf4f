//! Per-frame prediction with epistemic (MC dropout) and aleatoric (learned σ) maps.

use crate::bunet::{sigmoid, Bunet};
use crate::corpus::Frame;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::rng::{self, tag};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Default number of stochastic passes (M_E).
pub const DEFAULT_MC_PASSES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    /// Mean of the sampled probability maps.
    pub heatmap: Vec<f32>,
    /// Per-pixel population std of the sampled probability maps.
    pub epistemic: Vec<f32>,
    /// σ-map of the deterministic pass.
    pub aleatoric: Vec<f32>,
    /// Probability map of the deterministic pass.
    pub heatmap_det: Vec<f32>,
}

fn frame_tensor<T: Real>(model: &Bunet<T>, frames: &[&Frame]) -> Result<Tensor<T>> {
    let s = model.arch.input_size;
    let mut data = Vec::with_capacity(frames.len() * s * s);
    for f in frames {
        if f.height != s || f.width != s {
            return Err(Error::Shape(format!("frame {}×{} but model expects {s}×{s}", f.height, f.width)));
        }
        data.extend(f.pixels.iter().map(|&v| T::from_f32(v).unwrap()));
    }
    Ok(Tensor::from_vec(frames.len(), 1, s, s, data))
}

/// Raw single-frame pass: `(mu_logits, sigma)`; dropout is sampled when `rng` is given.
pub fn forward_frame<T: Real>(model: &Bunet<T>, frame: &Frame, rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<T>, Vec<T>)> {
    let x = frame_tensor(model, &[frame])?;
    let out = model.forward(&x, rng.map(std::slice::from_mut))?;
    Ok((out.mu.data, out.sigma.data))
}

/// Stream for stochastic pass `pass` over frame `frame_index`.
pub fn pass_stream(seed: u64, frame_index: usize, pass: usize) -> ChaCha8Rng {
    rng::stream(seed, &[tag::MC_DROPOUT, frame_index as u64, pass as u64])
}

/// Mean and population std of `passes` dropout-enabled probability maps.
///
/// Pass `m` draws its masks from `pass_stream(seed, frame_index, m)`, so results
/// do not depend on scheduling.
pub fn mc_dropout_predict<T: Real>(
    model: &Bunet<T>,
    frame: &Frame,
    frame_index: usize,
    passes: usize,
    seed: u64,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if passes == 0 {
        return Err(Error::Config("at least one MC dropout pass is required".into()));
    }
    let frames = vec![frame; passes];
    let x = frame_tensor(model, &frames)?;
    let mut streams: Vec<ChaCha8Rng> = (0..passes).map(|m| pass_stream(seed, frame_index, m)).collect();
    let out = model.forward(&x, Some(&mut streams))?;
    let plane = x.plane();
    let probs: Vec<f64> = out.mu.data.iter().map(|&v| sigmoid(v.to_f64().unwrap())).collect();
    Ok(mean_and_std(&probs, passes, plane))
}

/// Per-pixel mean and population standard deviation over `samples` stacked maps.
pub fn mean_and_std(stack: &[f64], samples: usize, plane: usize) -> (Vec<f32>, Vec<f32>) {
    // Welford updates keep the spread of identical samples exactly zero.
    let mut mean = vec![0.0f64; plane];
    let mut m2 = vec![0.0f64; plane];
    for (i, s) in stack.chunks(plane).take(samples).enumerate() {
        let n = (i + 1) as f64;
        for ((m, q), &v) in mean.iter_mut().zip(m2.iter_mut()).zip(s) {
            let d = v - *m;
            *m += d / n;
            *q += d * (v - *m);
        }
    }
    (
        mean.iter().map(|&m| m as f32).collect(),
        m2.iter().map(|&q| (q.max(0.0) / samples as f64).sqrt() as f32).collect(),
    )
}

/// One deterministic pass (dropout off, no logit noise): `(sigmoid(mu), sigma)`.
pub fn aleatoric_predict<T: Real>(model: &Bunet<T>, frame: &Frame) -> Result<(Vec<f32>, Vec<f32>)> {
    let (mu, sigma) = forward_frame(model, frame, None)?;
    Ok((
        mu.iter().map(|&v| sigmoid(v.to_f64().unwrap()) as f32).collect(),
        sigma.iter().map(|&v| v.to_f32().unwrap()).collect(),
    ))
}

/// Both predictions for one frame.
pub fn predict_frame<T: Real>(
    model: &Bunet<T>,
    frame: &Frame,
    frame_index: usize,
    passes: usize,
    seed: u64,
) -> Result<Prediction> {
    let (heatmap, epistemic) = mc_dropout_predict(model, frame, frame_index, passes, seed)?;
    let (heatmap_det, aleatoric) = aleatoric_predict(model, frame)?;
    Ok(Prediction {
        frame_index,
        height: frame.height,
        width: frame.width,
        heatmap,
        epistemic,
        aleatoric,
        heatmap_det,
    })
}

/// Sum of all pixel values.
pub fn uncertainty_scalar(map: &[f32]) -> f64 {
    map.iter().map(|&v| v as f64).sum()
}

/// Writes a binary PGM scaled so the map's maximum maps to 255.
pub fn write_pgm(path: &Path, map: &[f32], height: usize, width: usize) -> Result<()> {
    let max = map.iter().copied().fold(0.0f32, f32::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = map.iter().map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Dumps heatmap, epistemic and aleatoric maps as `<stem>_{heatmap,epistemic,aleatoric}.pgm`.
pub fn dump_prediction(dir: &Path, stem: &str, p: &Prediction) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, map) in [("heatmap", &p.heatmap), ("epistemic", &p.epistemic), ("aleatoric", &p.aleatoric)] {
        write_pgm(&dir.join(format!("{stem}_{name}.pgm")), map, p.height, p.width)?;
    }
    Ok(())
}
