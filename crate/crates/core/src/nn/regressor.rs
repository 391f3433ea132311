use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Dense, Layer, Tanh};
use super::Sequential;

/// One-hidden-layer tanh regressor with a linear skip connection:
/// `y = W2 tanh(W1 x + b1) + b2 + S x + s`.
#[derive(Debug)]
pub struct PoseRegressor {
    body: Sequential,
    skip: Dense,
    hidden: usize,
    pub params: Vec<f64>,
}

impl PoseRegressor {
    pub fn new(n_in: usize, hidden: usize, n_out: usize, seed: u64) -> Self {
        let body = Sequential::new(vec![
            Box::new(Dense { n_in, n_out: hidden }),
            Box::new(Tanh { len: hidden }),
            Box::new(Dense { n_in: hidden, n_out }),
        ]);
        let skip = Dense { n_in, n_out };
        let nb = body.n_params();
        let mut params = vec![0.0; nb + skip.n_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        body.init(&mut params[..nb], &mut rng);
        skip.init(&mut params[nb..], &mut rng);
        Self {
            body,
            skip,
            hidden,
            params,
        }
    }

    pub fn n_in(&self) -> usize {
        self.body.in_len()
    }

    pub fn n_out(&self) -> usize {
        self.body.out_len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.body.n_params();
        let mut y = self.body.forward(&self.params[..nb], x);
        let mut s = vec![0.0; self.n_out()];
        self.skip.forward(&self.params[nb..], x, &mut s);
        for (a, b) in y.iter_mut().zip(&s) {
            *a += b;
        }
        y
    }

    /// Mean squared error over outputs for one example; adds its gradient
    /// to `grad`.
    pub fn accumulate(&self, x: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let nb = self.body.n_params();
        let (pb, ps) = self.params.split_at(nb);
        let acts = self.body.forward_all(pb, x);
        let mut s = vec![0.0; self.n_out()];
        self.skip.forward(ps, x, &mut s);
        let m = self.n_out() as f64;
        let mut loss = 0.0;
        let mut dy = vec![0.0; self.n_out()];
        for k in 0..self.n_out() {
            let e = acts.last().unwrap()[k] + s[k] - target[k];
            loss += e * e / m;
            dy[k] = 2.0 * e / m;
        }
        let (gb, gs) = grad.split_at_mut(nb);
        self.body.backward(pb, &acts, &dy, gb);
        let mut dx = vec![0.0; self.n_in()];
        self.skip.backward(ps, x, &s, &dy, &mut dx, gs);
        loss
    }
}
