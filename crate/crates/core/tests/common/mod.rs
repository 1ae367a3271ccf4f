//! Oracles and instrumentation shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use uland::bunet::{ArchConfig, Bunet};
use uland::corpus::{Frame, LandmarkLabel, SyntheticVideo, VideoSource};
use uland::loss::{composite_objective, ClassWeights, LossWeights};
use uland::nn::Tensor;

/// Wraps a video and records every accessor it serves.
pub struct Spy<'a> {
    pub inner: &'a SyntheticVideo,
    pub frames: Mutex<BTreeSet<usize>>,
    pub read_k: AtomicBool,
    pub read_key_set: AtomicBool,
    pub read_label: AtomicBool,
}

impl<'a> Spy<'a> {
    pub fn new(inner: &'a SyntheticVideo) -> Self {
        Self {
            inner,
            frames: Mutex::new(BTreeSet::new()),
            read_k: AtomicBool::new(false),
            read_key_set: AtomicBool::new(false),
            read_label: AtomicBool::new(false),
        }
    }

    pub fn frames_read(&self) -> BTreeSet<usize> {
        self.frames.lock().unwrap().clone()
    }
}

impl VideoSource for Spy<'_> {
    fn id(&self) -> &str {
        &self.inner.id
    }
    fn len(&self) -> usize {
        self.inner.frames.len()
    }
    fn frame(&self, index: usize) -> &Frame {
        self.frames.lock().unwrap().insert(index);
        &self.inner.frames[index]
    }
    fn pixel_spacing(&self) -> f64 {
        self.inner.pixel_spacing
    }
    fn labeled_key_index(&self) -> usize {
        self.read_k.store(true, Ordering::SeqCst);
        self.inner.labeled_key_index
    }
    fn label(&self) -> &LandmarkLabel {
        self.read_label.store(true, Ordering::SeqCst);
        &self.inner.label
    }
    fn key_set(&self) -> &[usize] {
        self.read_key_set.store(true, Ordering::SeqCst);
        &self.inner.key_set
    }
}


impl Spy<'_> {
    pub fn touched_ground_truth(&self) -> (bool, bool, bool) {
        (
            self.read_k.load(Ordering::SeqCst),
            self.read_key_set.load(Ordering::SeqCst),
            self.read_label.load(Ordering::SeqCst),
        )
    }
}

/// Breadth-first labelling with an explicit 8-neighbourhood, visiting seeds in
/// column-major order so it shares nothing with the implementation.
pub fn flood_fill_oracle(heat: &[f32], h: usize, w: usize, t: f32) -> Vec<(BTreeSet<(usize, usize)>, f64, f64)> {
    let mut label = vec![usize::MAX; h * w];
    let mut comps = Vec::new();
    for c0 in 0..w {
        for r0 in 0..h {
            if heat[r0 * w + c0] < t || label[r0 * w + c0] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut set = BTreeSet::new();
            let mut q = VecDeque::from([(r0, c0)]);
            label[r0 * w + c0] = id;
            let (mut s, mut sr, mut sc) = (0.0, 0.0, 0.0);
            while let Some((r, c)) = q.pop_front() {
                set.insert((r, c));
                let p = heat[r * w + c] as f64;
                s += p;
                sr += p * r as f64;
                sc += p * c as f64;
                for (dr, dc) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        let j = rr as usize * w + cc as usize;
                        if heat[j] >= t && label[j] == usize::MAX {
                            label[j] = id;
                            q.push_back((rr as usize, cc as usize));
                        }
                    }
                }
            }
            comps.push((set, sr / s, sc / s));
        }
    }
    comps
}

pub fn run_length_oracle(passes: &[bool], lambda: usize) -> Vec<bool> {
    (0..passes.len())
        .map(|i| {
            if !passes[i] {
                return false;
            }
            let mut lo = i;
            while lo > 0 && passes[lo - 1] {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < passes.len() && passes[hi + 1] {
                hi += 1;
            }
            hi - lo + 1 >= lambda
        })
        .collect()
}

// Gradient check of the composite loss through a tiny network.

pub const SIZE: usize = 16;

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_size: SIZE,
        levels: 3,
        base_filters: 2,
        p_drop: 0.2,
        ..ArchConfig::default()
    }
}

pub struct Fixture {
    pub x: Tensor<f64>,
    pub masks: Vec<f64>,
    pub weights: ClassWeights,
}

pub fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 2;
    let x: Vec<f64> = (0..n * SIZE * SIZE).map(|_| rng.random::<f64>()).collect();
    let mut masks = vec![0.0; n * SIZE * SIZE];
    for (i, m) in masks.iter_mut().enumerate() {
        let (r, c) = ((i % (SIZE * SIZE)) / SIZE, i % SIZE);
        if (r as i32 - 5).pow(2) + (c as i32 - 6).pow(2) <= 4 || (r as i32 - 11).pow(2) + (c as i32 - 9).pow(2) <= 4 {
            *m = 1.0;
        }
    }
    Fixture {
        x: Tensor::from_vec(n, 1, SIZE, SIZE, x),
        masks,
        weights: ClassWeights {
            foreground: 3.0,
            background: 0.6,
        },
    }
}

/// Loss with every random draw (dropout masks, logit noise) pinned by fixed seeds.
pub fn objective(model: &Bunet<f64>, f: &Fixture, with_grad: bool) -> (f64, Option<(Tensor<f64>, Tensor<f64>)>, Option<uland::bunet::ForwardCache<f64>>) {
    let mut drop: Vec<ChaCha8Rng> = (0..f.x.n).map(|i| ChaCha8Rng::seed_from_u64(1000 + i as u64)).collect();
    let mut eps: Vec<ChaCha8Rng> = (0..f.x.n).map(|i| ChaCha8Rng::seed_from_u64(2000 + i as u64)).collect();
    let (out, cache) = model.forward_train(&f.x, &mut drop).unwrap();
    let (parts, d_mu, d_sigma) = composite_objective(
        &out.mu.data,
        &out.sigma.data,
        &f.masks,
        SIZE * SIZE,
        f.weights,
        LossWeights::default(),
        8,
        &mut eps,
    );
    if with_grad {
        let dm = Tensor::from_vec(f.x.n, 1, SIZE, SIZE, d_mu);
        let ds = Tensor::from_vec(f.x.n, 1, SIZE, SIZE, d_sigma);
        (parts.total, Some((dm, ds)), Some(cache))
    } else {
        (parts.total, None, None)
    }
}

/// Worst relative error between backprop and central differences over 24 probes.
pub fn worst_relative_error(seed: u64, h: f64) -> f64 {
    let mut model = Bunet::<f64>::new(tiny_arch(), seed).unwrap();
    // Move the sigma head off its initial point so the aleatoric path carries signal.
    model.head_sigma.bias.as_mut().unwrap().value[0] = 0.3;
    let f = fixture();
    let (_, grads, cache) = objective(&model, &f, true);
    let (dm, ds) = grads.unwrap();
    model.zero_grad();
    model.backward(&cache.unwrap(), &dm, &ds);

    let analytic: Vec<(usize, usize, f64)> = {
        let params = model.params_mut();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut picks = Vec::new();
        // Always probe both output heads, then random tensors.
        let n = params.len();
        let heads = [n - 4, n - 3, n - 2, n - 1];
        for &t in &heads {
            picks.push((t, rng.random_range(0..params[t].len())));
        }
        while picks.len() < 24 {
            let t = rng.random_range(0..n);
            picks.push((t, rng.random_range(0..params[t].len())));
        }
        picks.into_iter().map(|(t, i)| (t, i, params[t].grad[i])).collect()
    };

    let mut worst = 0.0f64;
    for &(t, i, g) in &analytic {
        let orig = model.params_mut()[t].value[i];
        model.params_mut()[t].value[i] = orig + h;
        let (lp, _, _) = objective(&model, &f, false);
        model.params_mut()[t].value[i] = orig - h;
        let (lm, _, _) = objective(&model, &f, false);
        model.params_mut()[t].value[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
        let name = model.params_mut()[t].name.clone();
        println!("seed {seed} h {h:e} {name}[{i}]: analytic {g:+.6e} numeric {fd:+.6e} rel {rel:.2e}");
        worst = worst.max(rel);
    }
    worst
}

