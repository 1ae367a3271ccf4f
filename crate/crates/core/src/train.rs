//! Training loop: only the labelled key frame of each video is ever read.

use crate::augment::{self, AugConfig};
use crate::bunet::Bunet;
use crate::corpus::VideoSource;
use crate::error::{Error, Result};
use crate::loss::{self, ClassWeights, LossWeights};
use crate::maskgen::{rasterize_mask, BinaryMask};
use crate::nn::{Adam, Real, Tensor};
use crate::rng::{self, tag};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Monte-Carlo samples integrating the logit noise (M_A).
    pub mc_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub augmentation: AugConfig,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            mc_samples: 100,
            epochs: 60,
            batch_size: 16,
            augmentation: AugConfig::default(),
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.batch_size == 0 {
            return Err(Error::Config("mc_samples and batch_size must be ≥ 1".into()));
        }
        let a = &self.augmentation;
        let finite = [
            self.learning_rate,
            self.beta1,
            self.beta2,
            a.shift_px,
            a.rotation_deg,
            a.zoom.0,
            a.zoom.1,
            a.gamma.0,
            a.gamma.1,
            self.loss_weights.dice,
            self.loss_weights.wbce,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("training ranges must be finite".into()));
        }
        if !(a.zoom.0 > 0.0 && a.zoom.0 <= a.zoom.1 && a.gamma.0 > 0.0 && a.gamma.0 <= a.gamma.1) {
            return Err(Error::Config("zoom and gamma ranges must be positive and ordered".into()));
        }
        if a.shift_px < 0.0 || a.rotation_deg < 0.0 {
            return Err(Error::Config("shift and rotation ranges must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub dice: f64,
    pub wbce: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
    pub class_weights: Option<ClassWeights>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,dice,wbce,total\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.dice, e.wbce, e.total);
        }
        s
    }

    pub fn last_total(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.total)
    }
}

/// One labelled training pair.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub frame: crate::corpus::Frame,
    pub mask: BinaryMask,
}

/// Collects `(frame k, mask)` from every video; no other frame is read.
pub fn training_pairs<V: VideoSource>(videos: &[V], mask_radius: f64) -> Result<Vec<TrainingPair>> {
    videos
        .iter()
        .map(|v| {
            let k = v.labeled_key_index();
            let frame = v.frame(k).clone();
            let mask = rasterize_mask(v.label(), mask_radius, frame.height, frame.width)?;
            Ok(TrainingPair { frame, mask })
        })
        .collect()
}

pub fn train<T: Real, V: VideoSource>(
    model: &mut Bunet<T>,
    videos: &[V],
    cfg: &TrainConfig,
    mask_radius: f64,
) -> Result<LossTrace> {
    train_with(model, videos, cfg, mask_radius, &mut |_| {})
}

pub fn train_with<T: Real, V: VideoSource>(
    model: &mut Bunet<T>,
    videos: &[V],
    cfg: &TrainConfig,
    mask_radius: f64,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<LossTrace> {
    let pairs = training_pairs(videos, mask_radius)?;
    train_pairs(model, &pairs, cfg, on_epoch)
}

pub fn train_pairs<T: Real>(
    model: &mut Bunet<T>,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<LossTrace> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("no training videos".into()));
    }
    let size = model.arch.input_size;
    if let Some(p) = pairs.iter().find(|p| p.frame.height != size || p.frame.width != size) {
        return Err(Error::Shape(format!(
            "training frame {}×{} does not match model input {size}×{size}",
            p.frame.height, p.frame.width
        )));
    }
    let class_weights = ClassWeights::from_masks(pairs.iter().map(|p| p.mask.pixels.as_slice()));
    let plane = size * size;
    let mut opt = Adam::<T>::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut trace = LossTrace {
        epochs: Vec::with_capacity(cfg.epochs),
        class_weights: Some(class_weights),
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let (mut sum, mut seen) = (loss::LossParts::default(), 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n = batch.len();
            let mut x = Vec::with_capacity(n * plane);
            let mut masks = Vec::with_capacity(n * plane);
            for &i in batch {
                let mut aug_rng = rng::stream(cfg.seed, &[tag::AUGMENT, epoch as u64, i as u64]);
                let (f, m) = augment::augment(&pairs[i].frame, &pairs[i].mask, &cfg.augmentation, &mut aug_rng);
                x.extend(f.pixels.iter().map(|&v| T::from_f32(v).unwrap()));
                masks.extend(m.pixels.iter().map(|&v| T::from_u8(v).unwrap()));
            }
            let x = Tensor::from_vec(n, 1, size, size, x);
            let mut drop_rngs: Vec<ChaCha8Rng> = batch
                .iter()
                .map(|&i| rng::stream(cfg.seed, &[tag::TRAIN_DROPOUT, epoch as u64, i as u64]))
                .collect();
            let mut eps_rngs: Vec<ChaCha8Rng> = batch
                .iter()
                .map(|&i| rng::stream(cfg.seed, &[tag::TRAIN_EPSILON, epoch as u64, i as u64]))
                .collect();
            let (out, cache) = model.forward_train(&x, &mut drop_rngs)?;
            let (parts, d_mu, d_sigma) = loss::composite_objective(
                &out.mu.data,
                &out.sigma.data,
                &masks,
                plane,
                class_weights,
                cfg.loss_weights,
                cfg.mc_samples,
                &mut eps_rngs,
            );
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} step {step}: dice={} wbce={}",
                    parts.dice, parts.wbce
                )));
            }
            model.zero_grad();
            let d_mu = Tensor::from_vec(n, 1, size, size, d_mu);
            let d_sigma = Tensor::from_vec(n, 1, size, size, d_sigma);
            model.backward(&cache, &d_mu, &d_sigma);
            opt.update(model.params_mut());
            model.commit_batch_stats(&cache);
            sum.dice += parts.dice * n as f64;
            sum.wbce += parts.wbce * n as f64;
            sum.total += parts.total * n as f64;
            seen += n;
        }
        let e = EpochLoss {
            epoch,
            dice: sum.dice / seen as f64,
            wbce: sum.wbce / seen as f64,
            total: sum.total / seen as f64,
        };
        on_epoch(&e);
        trace.epochs.push(e);
    }
    Ok(trace)
}
