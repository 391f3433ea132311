//! Differentiable layers over flat `f64` buffers.
//!
//! Activations are channel-major (`C x H x W`) for images and row-major
//! (`tokens x dim`) for sequences. Every layer reads its parameters from a
//! slice of the network's flat parameter vector, and `backward` accumulates
//! into the matching slice of the gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub trait Layer: Send + Sync + std::fmt::Debug {
    fn in_len(&self) -> usize;
    fn out_len(&self) -> usize;
    fn n_params(&self) -> usize {
        0
    }
    /// Number of weight layers this contributes to the reported depth.
    fn depth(&self) -> u64 {
        0
    }
    fn init(&self, _p: &mut [f64], _rng: &mut ChaCha8Rng) {}
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]);
    /// Writes `dx` and adds parameter gradients into `dp`.
    fn backward(&self, p: &[f64], x: &[f64], y: &[f64], dy: &[f64], dx: &mut [f64], dp: &mut [f64]);
}

fn he_init(w: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sigma");
    for v in w {
        *v = n.sample(rng);
    }
}

fn xavier_init(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w {
        *v = rng.random_range(-a..a);
    }
}

/// `y = W x + b` with `W` row-major `out x in`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
}

impl Layer for Dense {
    fn in_len(&self) -> usize {
        self.n_in
    }
    fn out_len(&self) -> usize {
        self.n_out
    }
    fn n_params(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
    fn depth(&self) -> u64 {
        1
    }
    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let (w, b) = p.split_at_mut(self.n_in * self.n_out);
        xavier_init(w, self.n_in, self.n_out, rng);
        b.fill(0.0);
    }
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let (w, b) = p.split_at(self.n_in * self.n_out);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    fn backward(&self, p: &[f64], x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], dp: &mut [f64]) {
        let (w, _) = p.split_at(self.n_in * self.n_out);
        let (dw, db) = dp.split_at_mut(self.n_in * self.n_out);
        dx.fill(0.0);
        for (o, &g) in dy.iter().enumerate() {
            db[o] += g;
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let drow = &mut dw[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                drow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Relu {
    pub len: usize,
}

impl Layer for Relu {
    fn in_len(&self) -> usize {
        self.len
    }
    fn out_len(&self) -> usize {
        self.len
    }
    fn forward(&self, _p: &[f64], x: &[f64], y: &mut [f64]) {
        for (o, i) in y.iter_mut().zip(x) {
            *o = i.max(0.0);
        }
    }
    fn backward(&self, _p: &[f64], x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], _dp: &mut [f64]) {
        for ((d, g), v) in dx.iter_mut().zip(dy).zip(x) {
            *d = if *v > 0.0 { *g } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tanh {
    pub len: usize,
}

impl Layer for Tanh {
    fn in_len(&self) -> usize {
        self.len
    }
    fn out_len(&self) -> usize {
        self.len
    }
    fn forward(&self, _p: &[f64], x: &[f64], y: &mut [f64]) {
        for (o, i) in y.iter_mut().zip(x) {
            *o = i.tanh();
        }
    }
    fn backward(&self, _p: &[f64], _x: &[f64], y: &[f64], dy: &[f64], dx: &mut [f64], _dp: &mut [f64]) {
        for ((d, g), v) in dx.iter_mut().zip(dy).zip(y) {
            *d = g * (1.0 - v * v);
        }
    }
}

/// 3x3 (or any odd `k`) convolution, stride 1, zero padding `k / 2`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Conv2d {
    fn n_weights(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    /// Valid output column range for kernel column `kx`.
    fn cols(&self, kx: usize) -> (usize, usize) {
        let pad = self.k / 2;
        let lo = pad.saturating_sub(kx);
        let hi = (self.w + pad).saturating_sub(kx).min(self.w);
        (lo, hi)
    }
}

impl Layer for Conv2d {
    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.c_out * self.h * self.w
    }
    fn n_params(&self) -> usize {
        self.n_weights() + self.c_out
    }
    fn depth(&self) -> u64 {
        1
    }
    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let (w, b) = p.split_at_mut(self.n_weights());
        he_init(w, self.c_in * self.k * self.k, rng);
        b.fill(0.0);
    }
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let (wts, b) = p.split_at(self.n_weights());
        let (h, w, k, pad) = (self.h, self.w, self.k, self.k / 2);
        let plane = h * w;
        for o in 0..self.c_out {
            let yo = &mut y[o * plane..(o + 1) * plane];
            yo.fill(b[o]);
            for c in 0..self.c_in {
                let xc = &x[c * plane..(c + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wts[((o * self.c_in + c) * k + ky) * k + kx];
                        let (j0, j1) = self.cols(kx);
                        for i in 0..h {
                            let ii = i + ky;
                            if ii < pad || ii - pad >= h {
                                continue;
                            }
                            let src = &xc[(ii - pad) * w + j0 + kx - pad..(ii - pad) * w + j1 + kx - pad];
                            let dst = &mut yo[i * w + j0..i * w + j1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    fn backward(&self, p: &[f64], x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], dp: &mut [f64]) {
        let (wts, _) = p.split_at(self.n_weights());
        let (dw, db) = dp.split_at_mut(self.n_weights());
        let (h, w, k, pad) = (self.h, self.w, self.k, self.k / 2);
        let plane = h * w;
        dx.fill(0.0);
        for o in 0..self.c_out {
            let go = &dy[o * plane..(o + 1) * plane];
            db[o] += go.iter().sum::<f64>();
            for c in 0..self.c_in {
                let xc = &x[c * plane..(c + 1) * plane];
                let dxc = &mut dx[c * plane..(c + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = ((o * self.c_in + c) * k + ky) * k + kx;
                        let wv = wts[idx];
                        let (j0, j1) = self.cols(kx);
                        let mut acc = 0.0;
                        for i in 0..h {
                            let ii = i + ky;
                            if ii < pad || ii - pad >= h {
                                continue;
                            }
                            let s0 = (ii - pad) * w + j0 + kx - pad;
                            let n = j1 - j0;
                            let g = &go[i * w + j0..i * w + j1];
                            let xs = &xc[s0..s0 + n];
                            let dxs = &mut dxc[s0..s0 + n];
                            for ((gv, xv), d) in g.iter().zip(xs).zip(dxs.iter_mut()) {
                                acc += gv * xv;
                                *d += wv * gv;
                            }
                        }
                        dw[idx] += acc;
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling, stride 2.
#[derive(Debug, Clone)]
pub struct MaxPool2 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl MaxPool2 {
    fn argmax(&self, x: &[f64], c: usize, i: usize, j: usize) -> usize {
        let base = c * self.h * self.w;
        let mut best = base + 2 * i * self.w + 2 * j;
        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
            let idx = base + (2 * i + di) * self.w + 2 * j + dj;
            if x[idx] > x[best] {
                best = idx;
            }
        }
        best
    }
}

impl Layer for MaxPool2 {
    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.c * (self.h / 2) * (self.w / 2)
    }
    fn forward(&self, _p: &[f64], x: &[f64], y: &mut [f64]) {
        let (oh, ow) = (self.h / 2, self.w / 2);
        for c in 0..self.c {
            for i in 0..oh {
                for j in 0..ow {
                    y[(c * oh + i) * ow + j] = x[self.argmax(x, c, i, j)];
                }
            }
        }
    }
    fn backward(&self, _p: &[f64], x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], _dp: &mut [f64]) {
        let (oh, ow) = (self.h / 2, self.w / 2);
        dx.fill(0.0);
        for c in 0..self.c {
            for i in 0..oh {
                for j in 0..ow {
                    dx[self.argmax(x, c, i, j)] += dy[(c * oh + i) * ow + j];
                }
            }
        }
    }
}

/// Mean over each channel plane.
#[derive(Debug, Clone)]
pub struct GlobalAvgPool {
    pub c: usize,
    pub plane: usize,
}

impl Layer for GlobalAvgPool {
    fn in_len(&self) -> usize {
        self.c * self.plane
    }
    fn out_len(&self) -> usize {
        self.c
    }
    fn forward(&self, _p: &[f64], x: &[f64], y: &mut [f64]) {
        for (c, yc) in y.iter_mut().enumerate() {
            *yc = x[c * self.plane..(c + 1) * self.plane].iter().sum::<f64>() / self.plane as f64;
        }
    }
    fn backward(&self, _p: &[f64], _x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], _dp: &mut [f64]) {
        let inv = 1.0 / self.plane as f64;
        for c in 0..self.c {
            dx[c * self.plane..(c + 1) * self.plane].fill(dy[c] * inv);
        }
    }
}

/// Mean over tokens of a `tokens x dim` sequence.
#[derive(Debug, Clone)]
pub struct MeanTokens {
    pub tokens: usize,
    pub dim: usize,
}

impl Layer for MeanTokens {
    fn in_len(&self) -> usize {
        self.tokens * self.dim
    }
    fn out_len(&self) -> usize {
        self.dim
    }
    fn forward(&self, _p: &[f64], x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for t in 0..self.tokens {
            for d in 0..self.dim {
                y[d] += x[t * self.dim + d];
            }
        }
        let inv = 1.0 / self.tokens as f64;
        y.iter_mut().for_each(|v| *v *= inv);
    }
    fn backward(&self, _p: &[f64], _x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], _dp: &mut [f64]) {
        let inv = 1.0 / self.tokens as f64;
        for t in 0..self.tokens {
            for d in 0..self.dim {
                dx[t * self.dim + d] = dy[d] * inv;
            }
        }
    }
}

/// Splits a `C x H x W` image into non-overlapping `patch x patch` tiles,
/// projects each to `dim` and adds a learned position embedding.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub patch: usize,
    pub dim: usize,
}

impl PatchEmbed {
    pub fn tokens(&self) -> usize {
        (self.h / self.patch) * (self.w / self.patch)
    }

    fn patch_len(&self) -> usize {
        self.c * self.patch * self.patch
    }

    fn gather(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let per_row = self.w / self.patch;
        let (ti, tj) = (t / per_row, t % per_row);
        let mut k = 0;
        for c in 0..self.c {
            for py in 0..self.patch {
                let row = (c * self.h + ti * self.patch + py) * self.w + tj * self.patch;
                out[k..k + self.patch].copy_from_slice(&x[row..row + self.patch]);
                k += self.patch;
            }
        }
    }

    fn scatter(&self, g: &[f64], t: usize, dx: &mut [f64]) {
        let per_row = self.w / self.patch;
        let (ti, tj) = (t / per_row, t % per_row);
        let mut k = 0;
        for c in 0..self.c {
            for py in 0..self.patch {
                let row = (c * self.h + ti * self.patch + py) * self.w + tj * self.patch;
                for (d, v) in dx[row..row + self.patch].iter_mut().zip(&g[k..k + self.patch]) {
                    *d += v;
                }
                k += self.patch;
            }
        }
    }
}

impl Layer for PatchEmbed {
    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.tokens() * self.dim
    }
    fn n_params(&self) -> usize {
        self.dim * self.patch_len() + self.dim + self.tokens() * self.dim
    }
    fn depth(&self) -> u64 {
        1
    }
    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let nw = self.dim * self.patch_len();
        let (w, rest) = p.split_at_mut(nw);
        xavier_init(w, self.patch_len(), self.dim, rng);
        let (b, pos) = rest.split_at_mut(self.dim);
        b.fill(0.0);
        let n = Normal::new(0.0, 0.02).expect("positive sigma");
        for v in pos {
            *v = n.sample(rng);
        }
    }
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let pl = self.patch_len();
        let nw = self.dim * pl;
        let (w, rest) = p.split_at(nw);
        let (b, pos) = rest.split_at(self.dim);
        let mut buf = vec![0.0; pl];
        for t in 0..self.tokens() {
            self.gather(x, t, &mut buf);
            for d in 0..self.dim {
                let row = &w[d * pl..(d + 1) * pl];
                y[t * self.dim + d] = b[d]
                    + pos[t * self.dim + d]
                    + row.iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    fn backward(&self, p: &[f64], x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], dp: &mut [f64]) {
        let pl = self.patch_len();
        let nw = self.dim * pl;
        let (w, _) = p.split_at(nw);
        let (dw, rest) = dp.split_at_mut(nw);
        let (db, dpos) = rest.split_at_mut(self.dim);
        dx.fill(0.0);
        let mut buf = vec![0.0; pl];
        let mut gbuf = vec![0.0; pl];
        for t in 0..self.tokens() {
            self.gather(x, t, &mut buf);
            gbuf.fill(0.0);
            for d in 0..self.dim {
                let g = dy[t * self.dim + d];
                db[d] += g;
                dpos[t * self.dim + d] += g;
                let row = &w[d * pl..(d + 1) * pl];
                let drow = &mut dw[d * pl..(d + 1) * pl];
                for k in 0..pl {
                    drow[k] += g * buf[k];
                    gbuf[k] += g * row[k];
                }
            }
            self.scatter(&gbuf, t, dx);
        }
    }
}

/// Pre-activation-free transformer block on `tokens x dim`:
/// `x1 = x + Wo(softmax(Q K^T / sqrt(dim)) V)`, `y = x1 + W2 relu(W1 x1)`.
/// Single head. Intermediate values are recomputed in `backward`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub tokens: usize,
    pub dim: usize,
    pub hidden: usize,
}

struct AttnOffsets {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
    w1: usize,
    w2: usize,
}

struct AttnState {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
    x1: Vec<f64>,
    u: Vec<f64>,
}

/// `out[t][o] = b[o] + sum_i w[o][i] * x[t][i]`.
fn linear_rows(w: &[f64], b: &[f64], x: &[f64], rows: usize, n_in: usize, n_out: usize, out: &mut [f64]) {
    for t in 0..rows {
        let xr = &x[t * n_in..(t + 1) * n_in];
        for o in 0..n_out {
            let wr = &w[o * n_in..(o + 1) * n_in];
            out[t * n_out + o] = b[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Backward of [`linear_rows`]: accumulates into `dw`, `db`, `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_rows_back(
    w: &[f64],
    x: &[f64],
    g: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    dx: &mut [f64],
) {
    let (dwm, db) = dw.split_at_mut(n_in * n_out);
    for t in 0..rows {
        let xr = &x[t * n_in..(t + 1) * n_in];
        let dxr = &mut dx[t * n_in..(t + 1) * n_in];
        for o in 0..n_out {
            let gv = g[t * n_out + o];
            if gv == 0.0 {
                continue;
            }
            db[o] += gv;
            let wr = &w[o * n_in..(o + 1) * n_in];
            let dwr = &mut dwm[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                dwr[i] += gv * xr[i];
                dxr[i] += gv * wr[i];
            }
        }
    }
}

impl AttentionBlock {
    fn offsets(&self) -> AttnOffsets {
        let sq = self.dim * self.dim + self.dim;
        AttnOffsets {
            q: 0,
            k: sq,
            v: 2 * sq,
            o: 3 * sq,
            w1: 4 * sq,
            w2: 4 * sq + self.hidden * self.dim + self.hidden,
        }
    }

    fn lin<'a>(&self, p: &'a [f64], off: usize, n_in: usize, n_out: usize) -> (&'a [f64], &'a [f64]) {
        let w = &p[off..off + n_in * n_out];
        let b = &p[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    fn run(&self, p: &[f64], x: &[f64], y: &mut [f64]) -> AttnState {
        let (t, d, hd) = (self.tokens, self.dim, self.hidden);
        let off = self.offsets();
        let mut q = vec![0.0; t * d];
        let mut k = vec![0.0; t * d];
        let mut v = vec![0.0; t * d];
        let (w, b) = self.lin(p, off.q, d, d);
        linear_rows(w, b, x, t, d, d, &mut q);
        let (w, b) = self.lin(p, off.k, d, d);
        linear_rows(w, b, x, t, d, d, &mut k);
        let (w, b) = self.lin(p, off.v, d, d);
        linear_rows(w, b, x, t, d, d, &mut v);
        let scale = 1.0 / (d as f64).sqrt();
        let mut a = vec![0.0; t * t];
        for i in 0..t {
            let qi = &q[i * d..(i + 1) * d];
            let row = &mut a[i * t..(i + 1) * t];
            for j in 0..t {
                row[j] = scale * qi.iter().zip(&k[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
            }
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let mut s = 0.0;
            for r in row.iter_mut() {
                *r = (*r - m).exp();
                s += *r;
            }
            row.iter_mut().for_each(|r| *r /= s);
        }
        let mut h = vec![0.0; t * d];
        for i in 0..t {
            for j in 0..t {
                let aij = a[i * t + j];
                for c in 0..d {
                    h[i * d + c] += aij * v[j * d + c];
                }
            }
        }
        let mut x1 = vec![0.0; t * d];
        let (w, b) = self.lin(p, off.o, d, d);
        linear_rows(w, b, &h, t, d, d, &mut x1);
        for (o, xi) in x1.iter_mut().zip(x) {
            *o += xi;
        }
        let mut u = vec![0.0; t * hd];
        let (w, b) = self.lin(p, off.w1, d, hd);
        linear_rows(w, b, &x1, t, d, hd, &mut u);
        let r: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
        let (w, b) = self.lin(p, off.w2, hd, d);
        linear_rows(w, b, &r, t, hd, d, y);
        for (o, xi) in y.iter_mut().zip(&x1) {
            *o += xi;
        }
        AttnState { q, k, v, a, h, x1, u }
    }
}

impl Layer for AttentionBlock {
    fn in_len(&self) -> usize {
        self.tokens * self.dim
    }
    fn out_len(&self) -> usize {
        self.tokens * self.dim
    }
    fn n_params(&self) -> usize {
        let d = self.dim;
        4 * (d * d + d) + 2 * self.hidden * d + self.hidden + d
    }
    fn depth(&self) -> u64 {
        6
    }
    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let (d, hd) = (self.dim, self.hidden);
        let off = self.offsets();
        for base in [off.q, off.k, off.v, off.o] {
            xavier_init(&mut p[base..base + d * d], d, d, rng);
            p[base + d * d..base + d * d + d].fill(0.0);
        }
        he_init(&mut p[off.w1..off.w1 + hd * d], d, rng);
        p[off.w1 + hd * d..off.w1 + hd * d + hd].fill(0.0);
        xavier_init(&mut p[off.w2..off.w2 + d * hd], hd, d, rng);
        p[off.w2 + d * hd..off.w2 + d * hd + d].fill(0.0);
    }
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        self.run(p, x, y);
    }
    fn backward(&self, p: &[f64], x: &[f64], _y: &[f64], dy: &[f64], dx: &mut [f64], dp: &mut [f64]) {
        let (t, d, hd) = (self.tokens, self.dim, self.hidden);
        let off = self.offsets();
        let mut scratch = vec![0.0; t * d];
        let st = self.run(p, x, &mut scratch);

        // MLP branch.
        let r: Vec<f64> = st.u.iter().map(|v| v.max(0.0)).collect();
        let mut dx1 = dy.to_vec();
        let mut dr = vec![0.0; t * hd];
        let (w2, _) = self.lin(p, off.w2, hd, d);
        linear_rows_back(w2, &r, dy, t, hd, d, &mut dp[off.w2..off.w2 + hd * d + d], &mut dr);
        for (g, u) in dr.iter_mut().zip(&st.u) {
            if *u <= 0.0 {
                *g = 0.0;
            }
        }
        let (w1, _) = self.lin(p, off.w1, d, hd);
        linear_rows_back(w1, &st.x1, &dr, t, d, hd, &mut dp[off.w1..off.w1 + d * hd + hd], &mut dx1);

        // Attention branch.
        dx.copy_from_slice(&dx1);
        let mut dh = vec![0.0; t * d];
        let (wo, _) = self.lin(p, off.o, d, d);
        linear_rows_back(wo, &st.h, &dx1, t, d, d, &mut dp[off.o..off.o + d * d + d], &mut dh);
        let mut da = vec![0.0; t * t];
        let mut dv = vec![0.0; t * d];
        for i in 0..t {
            for j in 0..t {
                let mut s = 0.0;
                for c in 0..d {
                    s += dh[i * d + c] * st.v[j * d + c];
                    dv[j * d + c] += st.a[i * t + j] * dh[i * d + c];
                }
                da[i * t + j] = s;
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        for i in 0..t {
            let row = &st.a[i * t..(i + 1) * t];
            let drow = &da[i * t..(i + 1) * t];
            let dot: f64 = row.iter().zip(drow).map(|(a, b)| a * b).sum();
            for j in 0..t {
                let ds = row[j] * (drow[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..d {
                    dq[i * d + c] += ds * st.k[j * d + c];
                    dk[j * d + c] += ds * st.q[i * d + c];
                }
            }
        }
        for (base, g) in [(off.q, &dq), (off.k, &dk), (off.v, &dv)] {
            let w = &p[base..base + d * d];
            linear_rows_back(w, x, g, t, d, d, &mut dp[base..base + d * d + d], dx);
        }
    }
}
