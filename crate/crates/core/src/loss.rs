//! Training objective: Monte-Carlo integration of the logit-space Gaussian,
//! soft Dice and class-weighted binary cross-entropy.

use crate::bunet::sigmoid;
use crate::nn::Real;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Monte-Carlo integrated probabilities and their derivatives w.r.t. `mu` and `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct McIntegration<T> {
    pub p: Vec<T>,
    pub dp_dmu: Vec<T>,
    pub dp_dsigma: Vec<T>,
}

/// `p = mean_m sigmoid(mu + sigma·eps_m)` per pixel with `eps_m ~ N(0, 1)`.
///
/// Noise is drawn pixel by pixel, `samples` draws each. Where `sigma == 0` the
/// result is exactly `sigmoid(mu)`.
pub fn mc_integrated_probability<T: Real, R: Rng + ?Sized>(
    mu: &[T],
    sigma: &[T],
    samples: usize,
    rng: &mut R,
) -> McIntegration<T> {
    assert_eq!(mu.len(), sigma.len());
    let samples = samples.max(1);
    let inv = T::one() / T::from_usize(samples).unwrap();
    let mut out = McIntegration {
        p: Vec::with_capacity(mu.len()),
        dp_dmu: Vec::with_capacity(mu.len()),
        dp_dsigma: Vec::with_capacity(mu.len()),
    };
    for (&m, &s) in mu.iter().zip(sigma) {
        let (mut p, mut dmu, mut dsig) = (T::zero(), T::zero(), T::zero());
        for _ in 0..samples {
            let eps = T::lit(rng.sample::<f64, _>(StandardNormal));
            let q = sigmoid(m + s * eps);
            let slope = q * (T::one() - q);
            p = p + q;
            dmu = dmu + slope;
            dsig = dsig + slope * eps;
        }
        out.p.push(if s == T::zero() { sigmoid(m) } else { p * inv });
        out.dp_dmu.push(dmu * inv);
        out.dp_dsigma.push(dsig * inv);
    }
    out
}

pub const DICE_SMOOTH: f64 = 1.0;
pub const PROB_CLAMP: f64 = 1e-7;

/// `1 − (2·Σp·m + s) / (Σp + Σm + s)` with `s = 1`.
pub fn soft_dice_loss<T: Real>(p: &[T], mask: &[T]) -> T {
    soft_dice_with_grad(p, mask, false).0
}

pub fn soft_dice_with_grad<T: Real>(p: &[T], mask: &[T], want_grad: bool) -> (T, Vec<T>) {
    assert_eq!(p.len(), mask.len());
    let s = T::lit(DICE_SMOOTH);
    let inter: T = p.iter().zip(mask).map(|(&a, &b)| a * b).sum();
    let union = p.iter().copied().sum::<T>() + mask.iter().copied().sum::<T>();
    let den = union + s;
    let num = T::lit(2.0) * inter + s;
    let loss = T::one() - num / den;
    let grad = if want_grad {
        let den2 = den * den;
        mask.iter().map(|&m| -(T::lit(2.0) * m * den - num) / den2).collect()
    } else {
        Vec::new()
    };
    (loss, grad)
}

/// Foreground/background weights of the weighted cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub foreground: f64,
    pub background: f64,
}

impl ClassWeights {
    pub const UNIT: Self = Self {
        foreground: 1.0,
        background: 1.0,
    };

    /// Inverse-frequency weights `N/(2·N_fg)`, `N/(2·N_bg)` over all given masks.
    pub fn from_masks<'a>(masks: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let (mut total, mut fg) = (0usize, 0usize);
        for m in masks {
            total += m.len();
            fg += m.iter().filter(|&&v| v != 0).count();
        }
        let bg = total - fg;
        Self {
            foreground: total as f64 / (2.0 * fg.max(1) as f64),
            background: total as f64 / (2.0 * bg.max(1) as f64),
        }
    }
}

/// Mean over pixels of `−[w_fg·m·ln p + w_bg·(1−m)·ln(1−p)]`, `p` clamped to `[1e-7, 1−1e-7]`.
pub fn wbce_loss<T: Real>(p: &[T], mask: &[T], weights: ClassWeights) -> T {
    wbce_with_grad(p, mask, weights, false).0
}

pub fn wbce_with_grad<T: Real>(p: &[T], mask: &[T], weights: ClassWeights, want_grad: bool) -> (T, Vec<T>) {
    assert_eq!(p.len(), mask.len());
    let n = T::from_usize(p.len().max(1)).unwrap();
    let (lo, hi) = (T::lit(PROB_CLAMP), T::lit(1.0 - PROB_CLAMP));
    let (wf, wb) = (T::lit(weights.foreground), T::lit(weights.background));
    let mut total = T::zero();
    let mut grad = if want_grad { Vec::with_capacity(p.len()) } else { Vec::new() };
    for (&pi, &m) in p.iter().zip(mask) {
        let q = pi.max(lo).min(hi);
        total = total - (wf * m * q.ln() + wb * (T::one() - m) * (T::one() - q).ln());
        if want_grad {
            let g = if pi < lo || pi > hi {
                T::zero()
            } else {
                -(wf * m / q - wb * (T::one() - m) / (T::one() - q)) / n
            };
            grad.push(g);
        }
    }
    (total / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub dice: f64,
    pub wbce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dice: 1.0, wbce: 1.0 }
    }
}

/// Loss components averaged over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub dice: f64,
    pub wbce: f64,
    pub total: f64,
}

/// Batch objective on raw network outputs and its gradients w.r.t. `mu` and `sigma`.
///
/// Per sample: MC-integrated probabilities, then `wd·dice + ww·wbce`; the batch
/// loss is the mean over samples. `eps_rngs` supplies one noise stream per sample.
pub fn composite_objective<T: Real, R: Rng>(
    mu: &[T],
    sigma: &[T],
    masks: &[T],
    plane: usize,
    class_weights: ClassWeights,
    loss_weights: LossWeights,
    samples: usize,
    eps_rngs: &mut [R],
) -> (LossParts, Vec<T>, Vec<T>) {
    let n = mu.len() / plane;
    assert_eq!(eps_rngs.len(), n, "one noise stream per sample");
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let (wd, ww) = (T::lit(loss_weights.dice), T::lit(loss_weights.wbce));
    let mut parts = LossParts::default();
    let mut d_mu = vec![T::zero(); mu.len()];
    let mut d_sigma = vec![T::zero(); mu.len()];
    for (i, rng) in eps_rngs.iter_mut().enumerate() {
        let r = i * plane..(i + 1) * plane;
        let mc = mc_integrated_probability(&mu[r.clone()], &sigma[r.clone()], samples, rng);
        let (dice, gd) = soft_dice_with_grad(&mc.p, &masks[r.clone()], true);
        let (wbce, gw) = wbce_with_grad(&mc.p, &masks[r.clone()], class_weights, true);
        parts.dice += dice.to_f64().unwrap();
        parts.wbce += wbce.to_f64().unwrap();
        for j in 0..plane {
            let dp = (wd * gd[j] + ww * gw[j]) * inv_n;
            d_mu[r.start + j] = dp * mc.dp_dmu[j];
            d_sigma[r.start + j] = dp * mc.dp_dsigma[j];
        }
    }
    parts.dice /= n as f64;
    parts.wbce /= n as f64;
    parts.total = loss_weights.dice * parts.dice + loss_weights.wbce * parts.wbce;
    (parts, d_mu, d_sigma)
}
