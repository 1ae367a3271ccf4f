//! Layer primitives with explicit forward caches and hand-written backward passes.
//!
//! Batched operations run per sample in parallel; parameter gradients are
//! reduced in sample order so results never depend on the thread count.

use super::real::{gemm, Op, Real};
use super::tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;

/// Named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, value.len());
        Self {
            name: name.into(),
            shape,
            grad: vec![T::zero(); len],
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

fn accumulate<T: Real>(dst: &mut [T], parts: Vec<Vec<T>>) {
    for part in parts {
        for (d, p) in dst.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let yy = y + ky;
                    if yy < pad || yy - pad >= h || x_lo >= x_hi {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[(yy - pad) * w..(yy - pad + 1) * w];
                    dst[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    dst[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    let off = x_lo + kx - pad;
                    dst[x_lo..x_hi].copy_from_slice(&src[off..off + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    dx.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let yy = y + ky;
                    if yy < pad || yy - pad >= h {
                        continue;
                    }
                    let off = x_lo + kx - pad;
                    let dst = &mut plane[(yy - pad) * w + off..][..x_hi - x_lo];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution with an odd square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `cout × (cin·k·k)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, bias: bool, init: impl FnMut() -> T) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let weight = Param::new(
            format!("{name}.weight"),
            vec![cout, cin, k, k],
            std::iter::repeat_with(init).take(cout * cin * k * k).collect(),
        );
        let bias = bias.then(|| Param::new(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]));
        Self { cin, cout, k, weight, bias }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let mut y = Tensor::zeros(x.n, self.cout, h, w);
        let sl = x.sample_len();
        y.data
            .par_chunks_mut(self.cout * hw)
            .zip(x.data.par_chunks(sl))
            .for_each_init(
                || vec![T::zero(); if self.k == 1 { 0 } else { kk * hw }],
                |col, (ys, xs)| {
                    let src: &[T] = if self.k == 1 {
                        xs
                    } else {
                        im2col(xs, self.cin, h, w, self.k, col);
                        col
                    };
                    gemm(Op::N, Op::N, self.cout, hw, kk, T::one(), &self.weight.value, src, T::zero(), ys);
                    if let Some(b) = &self.bias {
                        for (co, plane) in ys.chunks_mut(hw).enumerate() {
                            let bv = b.value[co];
                            plane.iter_mut().for_each(|v| *v = *v + bv);
                        }
                    }
                },
            );
        y
    }

    /// Accumulates parameter gradients and returns the input gradient when requested.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let k = self.k;
        let cin = self.cin;
        let cout = self.cout;
        let weight = &self.weight.value;
        let sl = x.sample_len();
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, cin, h, w));

        let per_sample: Vec<Vec<T>> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let xs = &x.data[i * sl..(i + 1) * sl];
                let dys = &dy.data[i * cout * hw..(i + 1) * cout * hw];
                let mut dw = vec![T::zero(); cout * kk];
                if k == 1 {
                    gemm(Op::N, Op::T, cout, kk, hw, T::one(), dys, xs, T::zero(), &mut dw);
                } else {
                    let mut col = vec![T::zero(); kk * hw];
                    im2col(xs, cin, h, w, k, &mut col);
                    gemm(Op::N, Op::T, cout, kk, hw, T::one(), dys, &col, T::zero(), &mut dw);
                }
                dw
            })
            .collect();
        accumulate(&mut self.weight.grad, per_sample);

        if let Some(b) = &mut self.bias {
            for i in 0..x.n {
                let dys = &dy.data[i * cout * hw..(i + 1) * cout * hw];
                for (co, plane) in dys.chunks(hw).enumerate() {
                    b.grad[co] = b.grad[co] + plane.iter().copied().sum::<T>();
                }
            }
        }

        if let Some(dx) = dx.as_mut() {
            dx.data
                .par_chunks_mut(sl)
                .zip(dy.data.par_chunks(cout * hw))
                .for_each(|(dxs, dys)| {
                    if k == 1 {
                        gemm(Op::T, Op::N, kk, hw, cout, T::one(), weight, dys, T::zero(), dxs);
                    } else {
                        let mut dcol = vec![T::zero(); kk * hw];
                        gemm(Op::T, Op::N, kk, hw, cout, T::one(), weight, dys, T::zero(), &mut dcol);
                        col2im(&dcol, cin, h, w, k, dxs);
                    }
                });
        }
        dx
    }
}

/// 2×2 stride-2 transposed convolution (exact 2× upsampling).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2x2<T> {
    pub cin: usize,
    pub cout: usize,
    /// `cin × (cout·2·2)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> ConvTranspose2x2<T> {
    pub fn new(name: &str, cin: usize, cout: usize, init: impl FnMut() -> T) -> Self {
        Self {
            cin,
            cout,
            weight: Param::new(
                format!("{name}.weight"),
                vec![cin, cout, 2, 2],
                std::iter::repeat_with(init).take(cin * cout * 4).collect(),
            ),
            bias: Param::new(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "transposed conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let m = self.cout * 4;
        let mut y = Tensor::zeros(x.n, self.cout, oh, ow);
        y.data
            .par_chunks_mut(self.cout * oh * ow)
            .zip(x.data.par_chunks(self.cin * hw))
            .for_each(|(ys, xs)| {
                let mut tmp = vec![T::zero(); m * hw];
                gemm(Op::T, Op::N, m, hw, self.cin, T::one(), &self.weight.value, xs, T::zero(), &mut tmp);
                for co in 0..self.cout {
                    let bv = self.bias.value[co];
                    let out = &mut ys[co * oh * ow..(co + 1) * oh * ow];
                    for a in 0..2 {
                        for b in 0..2 {
                            let src = &tmp[(co * 4 + a * 2 + b) * hw..][..hw];
                            for i in 0..h {
                                let row = &mut out[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                                for j in 0..w {
                                    row[2 * j + b] = src[i * w + j] + bv;
                                }
                            }
                        }
                    }
                }
            });
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let (cin, cout) = (self.cin, self.cout);
        let m = cout * 4;
        let gathered: Vec<Vec<T>> = dy
            .data
            .par_chunks(cout * oh * ow)
            .map(|dys| {
                let mut tmp = vec![T::zero(); m * hw];
                for co in 0..cout {
                    let g = &dys[co * oh * ow..(co + 1) * oh * ow];
                    for a in 0..2 {
                        for b in 0..2 {
                            let dst = &mut tmp[(co * 4 + a * 2 + b) * hw..][..hw];
                            for i in 0..h {
                                for j in 0..w {
                                    dst[i * w + j] = g[(2 * i + a) * ow + 2 * j + b];
                                }
                            }
                        }
                    }
                }
                tmp
            })
            .collect();

        let per_sample: Vec<Vec<T>> = gathered
            .par_iter()
            .zip(x.data.par_chunks(cin * hw))
            .map(|(dt, xs)| {
                let mut dw = vec![T::zero(); cin * m];
                gemm(Op::N, Op::T, cin, m, hw, T::one(), xs, dt, T::zero(), &mut dw);
                dw
            })
            .collect();
        accumulate(&mut self.weight.grad, per_sample);
        for dys in dy.data.chunks(cout * oh * ow) {
            for (co, plane) in dys.chunks(oh * ow).enumerate() {
                self.bias.grad[co] = self.bias.grad[co] + plane.iter().copied().sum::<T>();
            }
        }

        let mut dx = Tensor::zeros(x.n, cin, h, w);
        let weight = &self.weight.value;
        dx.data
            .par_chunks_mut(cin * hw)
            .zip(gathered.par_iter())
            .for_each(|(dxs, dt)| {
                gemm(Op::N, Op::N, cin, hw, m, T::one(), weight, dt, T::zero(), dxs);
            });
        dx
    }
}

/// Per-channel batch normalization over (N, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub c: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Weight of the previous running value in the moving-average update.
    pub momentum: T,
    pub eps: T,
}

/// Values saved by a training-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, c: usize, momentum: f64) -> Self {
        Self {
            c,
            gamma: Param::new(format!("{name}.gamma"), vec![c], vec![T::one(); c]),
            beta: Param::new(format!("{name}.beta"), vec![c], vec![T::zero(); c]),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            momentum: T::lit(momentum),
            eps: T::lit(1e-3),
        }
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let hw = x.plane();
        let mut y = x.clone();
        for s in y.data.chunks_mut(self.c * hw) {
            for (ch, plane) in s.chunks_mut(hw).enumerate() {
                let inv = T::one() / (self.running_var[ch] + self.eps).sqrt();
                let scale = self.gamma.value[ch] * inv;
                let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
                plane.iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    /// Normalizes with batch statistics; running statistics are untouched.
    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let hw = x.plane();
        let count = T::from_usize(x.n * hw).unwrap();
        let mut mean = vec![T::zero(); self.c];
        let mut var = vec![T::zero(); self.c];
        for s in x.data.chunks(self.c * hw) {
            for (ch, plane) in s.chunks(hw).enumerate() {
                mean[ch] = mean[ch] + plane.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / count);
        for s in x.data.chunks(self.c * hw) {
            for (ch, plane) in s.chunks(hw).enumerate() {
                let m = mean[ch];
                var[ch] = var[ch] + plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (xs, ys) in xhat.data.chunks_mut(self.c * hw).zip(y.data.chunks_mut(self.c * hw)) {
            for (ch, (xp, yp)) in xs.chunks_mut(hw).zip(ys.chunks_mut(hw)).enumerate() {
                let (m, inv, g, b) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                for (xv, yv) in xp.iter_mut().zip(yp.iter_mut()) {
                    *xv = (*xv - m) * inv;
                    *yv = *xv * g + b;
                }
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&mut self, cache: &BnCache<T>, count: usize) {
        let unbias = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            T::one()
        };
        let m = self.momentum;
        for ch in 0..self.c {
            self.running_mean[ch] = m * self.running_mean[ch] + (T::one() - m) * cache.batch_mean[ch];
            self.running_var[ch] = m * self.running_var[ch] + (T::one() - m) * cache.batch_var[ch] * unbias;
        }
    }

    pub fn backward_train(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let hw = dy.plane();
        let count = T::from_usize(dy.n * hw).unwrap();
        let mut sum_dy = vec![T::zero(); self.c];
        let mut sum_dy_xhat = vec![T::zero(); self.c];
        for (ds, xs) in dy.data.chunks(self.c * hw).zip(cache.xhat.data.chunks(self.c * hw)) {
            for (ch, (dp, xp)) in ds.chunks(hw).zip(xs.chunks(hw)).enumerate() {
                sum_dy[ch] = sum_dy[ch] + dp.iter().copied().sum::<T>();
                sum_dy_xhat[ch] = sum_dy_xhat[ch] + dp.iter().zip(xp).map(|(&d, &x)| d * x).sum::<T>();
            }
        }
        for ch in 0..self.c {
            self.beta.grad[ch] = self.beta.grad[ch] + sum_dy[ch];
            self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xhat[ch];
        }
        let mut dx = dy.clone();
        for (ds, xs) in dx.data.chunks_mut(self.c * hw).zip(cache.xhat.data.chunks(self.c * hw)) {
            for (ch, (dp, xp)) in ds.chunks_mut(hw).zip(xs.chunks(hw)).enumerate() {
                let k = self.gamma.value[ch] * cache.inv_std[ch] / count;
                let (sd, sdx) = (sum_dy[ch], sum_dy_xhat[ch]);
                for (d, &xh) in dp.iter_mut().zip(xp) {
                    *d = k * (count * *d - sd - xh * sdx);
                }
            }
        }
        dx
    }
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(out: &Tensor<T>, dy: &mut Tensor<T>) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Inverted dropout with one random stream per sample; returns the scale mask.
pub fn dropout_inplace<T: Real, R: Rng + Send>(x: &mut Tensor<T>, p: f64, rngs: &mut [R]) -> Vec<T> {
    let mut mask = vec![T::zero(); x.data.len()];
    dropout_impl(x, p, rngs, Some(&mut mask));
    mask
}

/// Same draws as [`dropout_inplace`] without materializing the mask.
pub fn dropout_apply<T: Real, R: Rng + Send>(x: &mut Tensor<T>, p: f64, rngs: &mut [R]) {
    dropout_impl(x, p, rngs, None);
}

fn dropout_impl<T: Real, R: Rng + Send>(x: &mut Tensor<T>, p: f64, rngs: &mut [R], mask: Option<&mut [T]>) {
    assert_eq!(rngs.len(), x.n, "one random stream per sample");
    let keep = T::lit(1.0 / (1.0 - p));
    // Element dropped iff its uniform u32 draw falls below p·2³².
    let cut = (p * 4_294_967_296.0).round().min(u32::MAX as f64) as u32;
    let sl = x.sample_len();
    let run = |xs: &mut [T], mut ms: Option<&mut [T]>, rng: &mut R| {
        let mut draws = [0u32; 512];
        for (ci, chunk) in xs.chunks_mut(draws.len()).enumerate() {
            let d = &mut draws[..chunk.len()];
            rng.fill(d);
            let base = ci * 512;
            for (j, (v, &u)) in chunk.iter_mut().zip(d.iter()).enumerate() {
                let m = if u < cut { T::zero() } else { keep };
                *v = *v * m;
                if let Some(ms) = ms.as_deref_mut() {
                    ms[base + j] = m;
                }
            }
        }
    };
    match mask {
        Some(mask) => mask
            .par_chunks_mut(sl)
            .zip(x.data.par_chunks_mut(sl))
            .zip(rngs.par_iter_mut())
            .for_each(|((ms, xs), rng)| run(xs, Some(ms), rng)),
        None => x
            .data
            .par_chunks_mut(sl)
            .zip(rngs.par_iter_mut())
            .for_each(|(xs, rng)| run(xs, None, rng)),
    }
}

pub fn apply_mask<T: Real>(dy: &mut Tensor<T>, mask: &[T]) {
    for (d, &m) in dy.data.iter_mut().zip(mask) {
        *d = *d * m;
    }
}

/// 2×2 max pooling; returns the output and the flat argmax index per output cell.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    let mut idx = vec![0u32; y.data.len()];
    let hw = x.plane();
    for p in 0..x.n * x.c {
        let src = &x.data[p * hw..(p + 1) * hw];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (2 * i) * x.w + 2 * j;
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (2 * i + a) * x.w + 2 * j + b;
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                y.data[o] = src[best];
                idx[o] = best as u32;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward<T: Real>(x: &Tensor<T>, idx: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    let (hw, ohw) = (x.plane(), dy.plane());
    for p in 0..x.n * x.c {
        for o in 0..ohw {
            let at = p * hw + idx[p * ohw + o] as usize;
            dx.data[at] = dx.data[at] + dy.data[p * ohw + o];
        }
    }
    dx
}
