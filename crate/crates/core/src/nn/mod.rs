//! Small CPU networks for mark scoring and pose regression.
//!
//! Everything runs in `f64` with hand-written backward passes. Networks see
//! the canonical crop through a fixed [`stem`] that box-averages it down to
//! `3 x 32 x 32`.

pub mod layers;
mod registry;
mod regressor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use layers::{
    AttentionBlock, Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2, MeanTokens, PatchEmbed, Relu,
    Tanh,
};
pub use registry::{build, lookup, registry, ArchInfo, SMALL_ATTN, SMALL_CONV};
pub use regressor::PoseRegressor;

use crate::raster::AlignedMark;

/// Side of the stem output.
pub const STEM_SIDE: usize = 32;
/// Canonical pixels averaged per stem pixel along each axis.
pub const STEM_POOL: usize = AlignedMark::SIDE / STEM_SIDE;
pub const INPUT_LEN: usize = 3 * STEM_SIDE * STEM_SIDE;

/// Box-averages the canonical crop to `3 x 32 x 32` (channel-major),
/// centred around zero.
pub fn stem(mark: &AlignedMark) -> Vec<f64> {
    let px = mark.pixels();
    let side = AlignedMark::SIDE;
    let mut out = vec![0.0; INPUT_LEN];
    let plane = STEM_SIDE * STEM_SIDE;
    for row in 0..side {
        let oy = row / STEM_POOL;
        for col in 0..side {
            let ox = col / STEM_POOL;
            let src = (row * side + col) * 3;
            for c in 0..3 {
                out[c * plane + oy * STEM_SIDE + ox] += px[src + c] as f64;
            }
        }
    }
    let inv = 1.0 / (STEM_POOL * STEM_POOL) as f64;
    out.iter_mut().for_each(|v| *v = *v * inv - 0.5);
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `target` in `{0, 1}`,
/// computed stably from the logit.
pub fn bce_with_logits(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Layers applied in order, with parameters packed into one flat vector.
#[derive(Debug)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
    offsets: Vec<usize>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        offsets.push(0);
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_len(), pair[1].in_len(), "layer sizes must chain");
        }
        for l in &layers {
            offsets.push(offsets.last().unwrap() + l.n_params());
        }
        Self { layers, offsets }
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn depth(&self) -> u64 {
        self.layers.iter().map(|l| l.depth()).sum()
    }

    pub fn in_len(&self) -> usize {
        self.layers[0].in_len()
    }

    pub fn out_len(&self) -> usize {
        self.layers.last().unwrap().out_len()
    }

    pub fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        for (i, l) in self.layers.iter().enumerate() {
            l.init(&mut p[self.offsets[i]..self.offsets[i + 1]], rng);
        }
    }

    /// All activations, input first.
    pub fn forward_all(&self, p: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.out_len()];
            l.forward(&p[self.offsets[i]..self.offsets[i + 1]], &acts[i], &mut y);
            acts.push(y);
        }
        acts
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward_all(p, x).pop().unwrap()
    }

    /// Backpropagates `dout` through stored activations, adding parameter
    /// gradients to `dp`; returns the input gradient.
    pub fn backward(&self, p: &[f64], acts: &[Vec<f64>], dout: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let mut g = dout.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let mut dx = vec![0.0; l.in_len()];
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            l.backward(&p[a..b], &acts[i], &acts[i + 1], &g, &mut dx, &mut dp[a..b]);
            g = dx;
        }
        g
    }
}

/// A binary classifier producing one logit (`> 0` leans genuine).
#[derive(Debug)]
pub struct Network {
    pub architecture: String,
    body: Sequential,
    pub params: Vec<f64>,
}

impl Network {
    pub fn new(architecture: impl Into<String>, body: Sequential, seed: u64) -> Self {
        assert_eq!(body.out_len(), 1, "classifier emits one logit");
        let mut params = vec![0.0; body.n_params()];
        body.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            architecture: architecture.into(),
            body,
            params,
        }
    }

    pub fn weight_count(&self) -> u64 {
        self.params.len() as u64
    }

    pub fn layer_count(&self) -> u64 {
        self.body.depth()
    }

    pub fn body(&self) -> &Sequential {
        &self.body
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.body.forward(&self.params, x)[0]
    }

    /// BCE loss on one example; adds its parameter gradient to `grad`.
    pub fn accumulate(&self, x: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        let acts = self.body.forward_all(&self.params, x);
        let z = acts.last().unwrap()[0];
        self.body
            .backward(&self.params, &acts, &[sigmoid(z) - target], grad);
        bce_with_logits(z, target)
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), String> {
        if params.len() != self.params.len() {
            return Err(format!(
                "expected {} weights for {}, got {}",
                self.params.len(),
                self.architecture,
                params.len()
            ));
        }
        self.params = params;
        Ok(())
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

pub fn params_to_bytes(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<Vec<f64>, String> {
    if bytes.len() % 8 != 0 {
        return Err(format!("weight blob length {} is not a multiple of 8", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
