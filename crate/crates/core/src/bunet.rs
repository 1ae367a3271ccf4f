//! Bayesian U-Net: encoder-decoder with a heatmap-logit head and an aleatoric scale head.
//!
//! Every conv block is conv → batch norm → ReLU → dropout. Batch norm uses batch
//! statistics only inside [`Bunet::forward_train`]; every inference path uses the
//! running statistics, whether or not dropout is sampled.

use crate::error::{Error, Result};
use crate::nn::layers::{self, BnCache};
use crate::nn::{BatchNorm2d, Conv2d, ConvTranspose2x2, Param, Real, Tensor};
use crate::rng::{self, tag};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 5] = b"ULWT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub input_size: usize,
    pub levels: usize,
    pub base_filters: usize,
    pub kernel: usize,
    pub batchnorm_momentum: f64,
    pub p_drop: f64,
    pub sigma_floor: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            levels: 3,
            base_filters: 32,
            kernel: 3,
            batchnorm_momentum: 0.8,
            p_drop: 0.2,
            sigma_floor: 1e-6,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.input_size == 0 || self.input_size % (1 << self.levels) != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^levels = {}",
                self.input_size,
                1usize << self.levels
            )));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop {} outside [0, 1)", self.p_drop)));
        }
        if self.kernel % 2 == 0 || self.base_filters == 0 {
            return Err(Error::Config("kernel must be odd and base_filters positive".into()));
        }
        if !(self.sigma_floor > 0.0) || !(0.0..1.0).contains(&self.batchnorm_momentum) {
            return Err(Error::Config("sigma_floor must be positive, momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Filters at encoder level `i`; `i == levels` is the bottleneck.
    pub fn filters(&self, i: usize) -> usize {
        self.base_filters << i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    out: Tensor<T>,
    mask: Option<Vec<T>>,
}

impl<T: Real> ConvBlock<T> {
    fn new(name: &str, cin: usize, cout: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * arch.kernel * arch.kernel) as f64;
        let he = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, arch.kernel, false, || T::lit(he.sample(rng))),
            bn: BatchNorm2d::new(&format!("{name}.bn"), cout, arch.batchnorm_momentum),
        }
    }

    fn eval(&self, x: &Tensor<T>, p_drop: f64, rngs: Option<&mut [ChaCha8Rng]>) -> Tensor<T> {
        let mut a = self.bn.forward_eval(&self.conv.forward(x));
        layers::relu_inplace(&mut a);
        if let Some(r) = rngs {
            if p_drop > 0.0 {
                layers::dropout_apply(&mut a, p_drop, r);
            }
        }
        a
    }

    fn train(&self, x: Tensor<T>, p_drop: f64, rngs: &mut [ChaCha8Rng]) -> (Tensor<T>, BlockCache<T>) {
        let (mut a, bn) = self.bn.forward_train(&self.conv.forward(&x));
        layers::relu_inplace(&mut a);
        let mask = (p_drop > 0.0).then(|| layers::dropout_inplace(&mut a, p_drop, rngs));
        let cache = BlockCache {
            input: x,
            bn,
            out: a.clone(),
            mask,
        };
        (a, cache)
    }

    fn backward(&mut self, cache: &BlockCache<T>, mut dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        if let Some(m) = &cache.mask {
            layers::apply_mask(&mut dy, m);
        }
        layers::relu_backward_inplace(&cache.out, &mut dy);
        let dz = self.bn.backward_train(&cache.bn, &dy);
        self.conv.backward(&cache.input, &dz, need_dx)
    }

    fn params_mut(&mut self) -> [&mut Param<T>; 3] {
        [&mut self.conv.weight, &mut self.bn.gamma, &mut self.bn.beta]
    }
}

/// Raw network outputs for a batch: heatmap logits and aleatoric scale, each `N×1×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<T> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

/// Everything a training-mode forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    enc: Vec<[BlockCache<T>; 2]>,
    skips: Vec<Tensor<T>>,
    pool_idx: Vec<Vec<u32>>,
    bottleneck: [BlockCache<T>; 2],
    up_in: Vec<Tensor<T>>,
    dec: Vec<[BlockCache<T>; 2]>,
    dec_out: Tensor<T>,
    sigma_pre: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bunet<T> {
    pub arch: ArchConfig,
    pub enc: Vec<[ConvBlock<T>; 2]>,
    pub bottleneck: [ConvBlock<T>; 2],
    /// `up[i]` maps level `i + 1` features to level `i`.
    pub up: Vec<ConvTranspose2x2<T>>,
    pub dec: Vec<[ConvBlock<T>; 2]>,
    pub head_mu: Conv2d<T>,
    pub head_sigma: Conv2d<T>,
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Bunet<T> {
    /// Builds a freshly initialized network; identical seeds give identical parameters.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut enc = Vec::with_capacity(arch.levels);
        let mut cin = 1;
        for i in 0..arch.levels {
            let f = arch.filters(i);
            enc.push([
                ConvBlock::new(&format!("enc{i}.0"), cin, f, &arch, &mut rng),
                ConvBlock::new(&format!("enc{i}.1"), f, f, &arch, &mut rng),
            ]);
            cin = f;
        }
        let fb = arch.filters(arch.levels);
        let bottleneck = [
            ConvBlock::new("bottleneck.0", cin, fb, &arch, &mut rng),
            ConvBlock::new("bottleneck.1", fb, fb, &arch, &mut rng),
        ];
        let mut up = Vec::with_capacity(arch.levels);
        let mut dec = Vec::with_capacity(arch.levels);
        for i in 0..arch.levels {
            let (f, fu) = (arch.filters(i), arch.filters(i + 1));
            let n = Normal::new(0.0, (2.0 / (fu * 4) as f64).sqrt()).unwrap();
            up.push(ConvTranspose2x2::new(&format!("up{i}"), fu, f, || T::lit(n.sample(&mut rng))));
            dec.push([
                ConvBlock::new(&format!("dec{i}.0"), 2 * f, f, &arch, &mut rng),
                ConvBlock::new(&format!("dec{i}.1"), f, f, &arch, &mut rng),
            ]);
        }
        let f0 = arch.filters(0);
        let glorot = Normal::new(0.0, (2.0 / (f0 + 1) as f64).sqrt()).unwrap();
        let head_mu = Conv2d::new("head_mu", f0, 1, 1, true, || T::lit(glorot.sample(&mut rng)));
        let head_sigma = Conv2d::new("head_sigma", f0, 1, 1, true, || T::lit(glorot.sample(&mut rng)));
        Ok(Self {
            arch,
            enc,
            bottleneck,
            up,
            dec,
            head_mu,
            head_sigma,
        })
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = Vec::new();
        for level in self.enc.iter_mut() {
            for b in level.iter_mut() {
                out.extend(b.params_mut());
            }
        }
        for b in self.bottleneck.iter_mut() {
            out.extend(b.params_mut());
        }
        for (u, level) in self.up.iter_mut().zip(self.dec.iter_mut()) {
            out.push(&mut u.weight);
            out.push(&mut u.bias);
            for b in level.iter_mut() {
                out.extend(b.params_mut());
            }
        }
        out.push(&mut self.head_mu.weight);
        out.extend(self.head_mu.bias.as_mut());
        out.push(&mut self.head_sigma.weight);
        out.extend(self.head_sigma.bias.as_mut());
        out
    }

    fn blocks(&self) -> impl Iterator<Item = &ConvBlock<T>> {
        self.enc
            .iter()
            .flatten()
            .chain(self.bottleneck.iter())
            .chain(self.dec.iter().flatten())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock<T>> {
        self.enc
            .iter_mut()
            .flatten()
            .chain(self.bottleneck.iter_mut())
            .chain(self.dec.iter_mut().flatten())
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.arch.input_size;
        if x.c != 1 || x.h != s || x.w != s {
            return Err(Error::Shape(format!(
                "expected N×1×{s}×{s} input, got {}×{}×{}×{}",
                x.n, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    fn heads(&self, dec_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let mu = self.head_mu.forward(dec_out);
        let pre = self.head_sigma.forward(dec_out);
        let floor = T::lit(self.arch.sigma_floor);
        let mut sigma = pre.clone();
        sigma.data.iter_mut().for_each(|v| *v = softplus(*v) + floor);
        (mu, sigma, pre)
    }

    /// Inference pass with running batch-norm statistics.
    ///
    /// With `dropout = Some(streams)` (one stream per sample) every block samples a
    /// dropout mask; with `None` the pass is deterministic.
    pub fn forward(&self, x: &Tensor<T>, dropout: Option<&mut [ChaCha8Rng]>) -> Result<ModelOutput<T>> {
        self.check_input(x)?;
        if let Some(r) = dropout.as_deref() {
            if r.len() != x.n {
                return Err(Error::Shape(format!("{} dropout streams for {} samples", r.len(), x.n)));
            }
        }
        // Samples run one at a time so each one's activations stay cache-resident.
        let plane = x.plane();
        let outs: Vec<ModelOutput<T>> = match dropout {
            Some(streams) => x
                .data
                .par_chunks(plane)
                .zip(streams.par_iter_mut())
                .map(|(xs, r)| self.forward_one(xs, Some(std::slice::from_mut(r))))
                .collect(),
            None => x.data.par_chunks(plane).map(|xs| self.forward_one(xs, None)).collect(),
        };
        let mut mu = Tensor::zeros(x.n, 1, x.h, x.w);
        let mut sigma = Tensor::zeros(x.n, 1, x.h, x.w);
        for (i, o) in outs.into_iter().enumerate() {
            mu.data[i * plane..(i + 1) * plane].copy_from_slice(&o.mu.data);
            sigma.data[i * plane..(i + 1) * plane].copy_from_slice(&o.sigma.data);
        }
        Ok(ModelOutput { mu, sigma })
    }

    fn forward_one(&self, xs: &[T], mut dropout: Option<&mut [ChaCha8Rng]>) -> ModelOutput<T> {
        let s = self.arch.input_size;
        let p = self.arch.p_drop;
        let mut h = Tensor::from_vec(1, 1, s, s, xs.to_vec());
        let mut skips = Vec::with_capacity(self.arch.levels);
        for level in &self.enc {
            for b in level {
                h = b.eval(&h, p, dropout.as_deref_mut());
            }
            let (pooled, _) = layers::maxpool2(&h);
            skips.push(h);
            h = pooled;
        }
        for b in &self.bottleneck {
            h = b.eval(&h, p, dropout.as_deref_mut());
        }
        for i in (0..self.arch.levels).rev() {
            let u = self.up[i].forward(&h);
            h = Tensor::concat_channels(&u, &skips[i]);
            for b in &self.dec[i] {
                h = b.eval(&h, p, dropout.as_deref_mut());
            }
        }
        let (mu, sigma, _) = self.heads(&h);
        ModelOutput { mu, sigma }
    }

    /// Training pass: batch statistics, dropout always sampled, cache kept for
    /// [`Bunet::backward`]. Running statistics are updated by [`Bunet::commit_batch_stats`].
    pub fn forward_train(&self, x: &Tensor<T>, rngs: &mut [ChaCha8Rng]) -> Result<(ModelOutput<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        if rngs.len() != x.n {
            return Err(Error::Shape(format!("{} dropout streams for {} samples", rngs.len(), x.n)));
        }
        let p = self.arch.p_drop;
        let mut h = x.clone();
        let mut enc = Vec::with_capacity(self.arch.levels);
        let mut skips = Vec::with_capacity(self.arch.levels);
        let mut pool_idx = Vec::with_capacity(self.arch.levels);
        for level in &self.enc {
            let (a, c0) = level[0].train(h, p, rngs);
            let (a, c1) = level[1].train(a, p, rngs);
            let (pooled, idx) = layers::maxpool2(&a);
            enc.push([c0, c1]);
            skips.push(a);
            pool_idx.push(idx);
            h = pooled;
        }
        let (a, b0) = self.bottleneck[0].train(h, p, rngs);
        let (mut h, b1) = self.bottleneck[1].train(a, p, rngs);
        let mut up_in = vec![Tensor::zeros(0, 0, 0, 0); self.arch.levels];
        let mut dec: Vec<Option<[BlockCache<T>; 2]>> = vec![None; self.arch.levels];
        for i in (0..self.arch.levels).rev() {
            let u = self.up[i].forward(&h);
            up_in[i] = h;
            let cat = Tensor::concat_channels(&u, &skips[i]);
            let (a, c0) = self.dec[i][0].train(cat, p, rngs);
            let (a, c1) = self.dec[i][1].train(a, p, rngs);
            dec[i] = Some([c0, c1]);
            h = a;
        }
        let (mu, sigma, sigma_pre) = self.heads(&h);
        let cache = ForwardCache {
            enc,
            skips,
            pool_idx,
            bottleneck: [b0, b1],
            up_in,
            dec: dec.into_iter().map(|d| d.expect("every level visited")).collect(),
            dec_out: h,
            sigma_pre,
        };
        Ok((ModelOutput { mu, sigma }, cache))
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn commit_batch_stats(&mut self, cache: &ForwardCache<T>) {
        let caches: Vec<&BlockCache<T>> = cache
            .enc
            .iter()
            .flatten()
            .chain(cache.bottleneck.iter())
            .chain(cache.dec.iter().flatten())
            .collect();
        for (b, c) in self.blocks_mut().zip(caches) {
            let count = c.bn.xhat.n * c.bn.xhat.plane();
            b.bn.update_running(&c.bn, count);
        }
    }

    /// Accumulates parameter gradients given gradients w.r.t. `mu` and `sigma`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, d_mu: &Tensor<T>, d_sigma: &Tensor<T>) {
        let mut d_pre = d_sigma.clone();
        for (d, &s) in d_pre.data.iter_mut().zip(&cache.sigma_pre.data) {
            *d = *d * sigmoid(s);
        }
        let mut dh = self.head_mu.backward(&cache.dec_out, d_mu, true).unwrap();
        dh.add_assign(&self.head_sigma.backward(&cache.dec_out, &d_pre, true).unwrap());

        let mut d_skips: Vec<Option<Tensor<T>>> = vec![None; self.arch.levels];
        for i in 0..self.arch.levels {
            let g = self.dec[i][1].backward(&cache.dec[i][1], dh, true).unwrap();
            let g = self.dec[i][0].backward(&cache.dec[i][0], g, true).unwrap();
            let f = self.arch.filters(i);
            let (du, dskip) = g.split_channels(f);
            d_skips[i] = Some(dskip);
            dh = self.up[i].backward(&cache.up_in[i], &du);
        }
        let g = self.bottleneck[1].backward(&cache.bottleneck[1], dh, true).unwrap();
        let mut dh = self.bottleneck[0].backward(&cache.bottleneck[0], g, true).unwrap();
        for i in (0..self.arch.levels).rev() {
            let mut g = layers::maxpool2_backward(&cache.skips[i], &cache.pool_idx[i], &dh);
            g.add_assign(d_skips[i].as_ref().unwrap());
            let g = self.enc[i][1].backward(&cache.enc[i][1], g, true).unwrap();
            let need_dx = i > 0;
            match self.enc[i][0].backward(&cache.enc[i][0], g, need_dx) {
                Some(g) => dh = g,
                None => break,
            }
        }
    }

    /// All persisted tensors (trainable parameters plus batch-norm running statistics).
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        let push_block = |b: &ConvBlock<T>, out: &mut Vec<(String, Vec<usize>, Vec<T>)>| {
            for p in [&b.conv.weight, &b.bn.gamma, &b.bn.beta] {
                out.push((p.name.clone(), p.shape.clone(), p.value.clone()));
            }
            let base = b.bn.gamma.name.trim_end_matches(".gamma").to_string();
            out.push((format!("{base}.running_mean"), vec![b.bn.c], b.bn.running_mean.clone()));
            out.push((format!("{base}.running_var"), vec![b.bn.c], b.bn.running_var.clone()));
        };
        for level in &self.enc {
            for b in level {
                push_block(b, &mut out);
            }
        }
        for b in &self.bottleneck {
            push_block(b, &mut out);
        }
        for (u, level) in self.up.iter().zip(&self.dec) {
            for p in [&u.weight, &u.bias] {
                out.push((p.name.clone(), p.shape.clone(), p.value.clone()));
            }
            for b in level {
                push_block(b, &mut out);
            }
        }
        for head in [&self.head_mu, &self.head_sigma] {
            out.push((head.weight.name.clone(), head.weight.shape.clone(), head.weight.value.clone()));
            if let Some(b) = &head.bias {
                out.push((b.name.clone(), b.shape.clone(), b.value.clone()));
            }
        }
        out
    }

    fn tensor_slots(&mut self) -> Vec<(String, &mut Vec<T>)> {
        fn block_slots<'a, T>(b: &'a mut ConvBlock<T>, out: &mut Vec<(String, &'a mut Vec<T>)>) {
            let base = b.bn.gamma.name.trim_end_matches(".gamma").to_string();
            out.push((b.conv.weight.name.clone(), &mut b.conv.weight.value));
            out.push((b.bn.gamma.name.clone(), &mut b.bn.gamma.value));
            out.push((b.bn.beta.name.clone(), &mut b.bn.beta.value));
            out.push((format!("{base}.running_mean"), &mut b.bn.running_mean));
            out.push((format!("{base}.running_var"), &mut b.bn.running_var));
        }
        let mut out: Vec<(String, &mut Vec<T>)> = Vec::new();
        for level in self.enc.iter_mut() {
            level.iter_mut().for_each(|b| block_slots(b, &mut out));
        }
        self.bottleneck.iter_mut().for_each(|b| block_slots(b, &mut out));
        for (u, level) in self.up.iter_mut().zip(self.dec.iter_mut()) {
            out.push((u.weight.name.clone(), &mut u.weight.value));
            out.push((u.bias.name.clone(), &mut u.bias.value));
            level.iter_mut().for_each(|b| block_slots(b, &mut out));
        }
        for head in [&mut self.head_mu, &mut self.head_sigma] {
            out.push((head.weight.name.clone(), &mut head.weight.value));
            if let Some(b) = head.bias.as_mut() {
                out.push((b.name.clone(), &mut b.value));
            }
        }
        out
    }

    /// Serializes all tensors in the `ULWT1` layout.
    pub fn weights_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, values) in &tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        buf
    }

    /// Hex SHA-256 of [`Bunet::weights_bytes`].
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.weights_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.weights_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Loads weights into a network built from `arch`; names and shapes must match exactly.
    pub fn load(arch: ArchConfig, path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_weights_bytes(arch, &bytes, &path.display().to_string())
    }

    pub fn from_weights_bytes(arch: ArchConfig, bytes: &[u8], origin: &str) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        let mut cur = ByteCursor { bytes, pos: 0, origin };
        if cur.take(5)? != WEIGHTS_MAGIC {
            return Err(Error::format(origin, "bad magic, expected ULWT1"));
        }
        let count = cur.u32()? as usize;
        let mut slots = model.tensor_slots();
        if count != slots.len() {
            return Err(Error::format(
                origin,
                format!("tensor count {count} does not match architecture ({})", slots.len()),
            ));
        }
        for (name, dst) in slots.iter_mut() {
            let len = cur.u32()? as usize;
            let got = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?;
            if got != name {
                return Err(Error::format(origin, format!("expected tensor {name}, found {got}")));
            }
            let rank = cur.u32()? as usize;
            let mut numel = 1usize;
            for _ in 0..rank {
                numel *= cur.u32()? as usize;
            }
            if numel != dst.len() {
                return Err(Error::format(origin, format!("tensor {name} has {numel} values, expected {}", dst.len())));
            }
            for v in dst.iter_mut() {
                let raw = cur.take(4)?;
                *v = T::from_f32(f32::from_le_bytes(raw.try_into().unwrap())).unwrap();
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last tensor"));
        }
        drop(slots);
        Ok(model)
    }

    /// True once any batch-norm layer has absorbed batch statistics.
    pub fn running_stats_initialized(&self) -> bool {
        self.blocks().any(|b| b.bn.running_mean.iter().any(|&m| m != T::zero()))
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
