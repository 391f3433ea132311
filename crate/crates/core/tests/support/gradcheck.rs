//! Central finite-difference checks for every differentiable component.
//! Each check returns the relative error between analytic and numeric
//! gradients.

use markguard_core::nn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// `backward` of one layer against central differences of the scalar
/// `sum(r * forward(p, x))`, over inputs and parameters.
pub fn layer(layer: &dyn Layer, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; layer.n_params()];
    layer.init(&mut p, &mut rng);
    for v in p.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let x = random_vec(layer.in_len(), &mut rng, 1.0);
    let r = random_vec(layer.out_len(), &mut rng, 1.0);
    let objective = |p: &[f64], x: &[f64]| {
        let mut y = vec![0.0; layer.out_len()];
        layer.forward(p, x, &mut y);
        y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut y = vec![0.0; layer.out_len()];
    layer.forward(&p, &x, &mut y);
    let mut dx = vec![0.0; layer.in_len()];
    let mut dp = vec![0.0; layer.n_params()];
    layer.backward(&p, &x, &y, &r, &mut dx, &mut dp);

    let central = |f: &dyn Fn(&[f64]) -> f64, v: &[f64]| -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let mut vp = v.to_vec();
                let mut vm = v.to_vec();
                vp[i] += STEP;
                vm[i] -= STEP;
                (f(&vp) - f(&vm)) / (2.0 * STEP)
            })
            .collect()
    };
    let mut worst = rel_err(&dx, &central(&|x| objective(&p, x), &x));
    if !p.is_empty() {
        worst = worst.max(rel_err(&dp, &central(&|p| objective(p, &x), &p)));
    }
    worst
}

/// Every layer type at small random shapes.
pub fn layers() -> Vec<(&'static str, f64)> {
    vec![
        ("dense", layer(&Dense { n_in: 7, n_out: 5 }, 1)),
        ("relu", layer(&Relu { len: 40 }, 2)),
        ("tanh", layer(&Tanh { len: 40 }, 3)),
        ("conv2d", layer(&Conv2d { c_in: 3, c_out: 4, h: 6, w: 5, k: 3 }, 4)),
        ("maxpool2", layer(&MaxPool2 { c: 3, h: 6, w: 8 }, 5)),
        ("global_avg_pool", layer(&GlobalAvgPool { c: 4, plane: 9 }, 6)),
        ("mean_tokens", layer(&MeanTokens { tokens: 5, dim: 3 }, 7)),
        ("patch_embed", layer(&PatchEmbed { c: 2, h: 8, w: 8, patch: 4, dim: 5 }, 8)),
        ("attention_block", layer(&AttentionBlock { tokens: 5, dim: 6, hidden: 7 }, 9)),
    ]
}

/// d BCE / d logit at 50 random logits and both targets.
pub fn bce() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let z = rng.random_range(-8.0..8.0);
        for y in [0.0, 1.0] {
            let num = (bce_with_logits(z + STEP, y) - bce_with_logits(z - STEP, y)) / (2.0 * STEP);
            worst = worst.max(rel_err(&[sigmoid(z) - y], &[num]));
        }
    }
    worst
}

/// Whole-network loss gradient on `coords` random parameters.
pub fn network(arch: &str, coords: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = build(arch, 3).unwrap();
    let x = random_vec(INPUT_LEN, &mut rng, 0.5);
    let mut worst: f64 = 0.0;
    for target in [0.0, 1.0] {
        let mut grad = vec![0.0; net.params.len()];
        net.accumulate(&x, target, &mut grad);
        let mut ana = Vec::new();
        let mut num = Vec::new();
        let mut probe = build(arch, 3).unwrap();
        for _ in 0..coords {
            let i = rng.random_range(0..net.params.len());
            let base = net.params[i];
            probe.params[i] = base + STEP;
            let lp = bce_with_logits(probe.logit(&x), target);
            probe.params[i] = base - STEP;
            let lm = bce_with_logits(probe.logit(&x), target);
            probe.params[i] = base;
            ana.push(grad[i]);
            num.push((lp - lm) / (2.0 * STEP));
        }
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

/// Pose-regressor MSE gradient at ten random parameter points.
pub fn pose_regressor() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for point in 0..10 {
        let mut reg = PoseRegressor::new(6, 16, 4, point);
        for v in reg.params.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let x = random_vec(6, &mut rng, 1.0);
        let t = random_vec(4, &mut rng, 1.0);
        let mut grad = vec![0.0; reg.params.len()];
        reg.accumulate(&x, &t, &mut grad);
        let loss = |r: &PoseRegressor| {
            r.forward(&x).iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 4.0
        };
        let mut num = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let base = reg.params[i];
            reg.params[i] = base + STEP;
            let lp = loss(&reg);
            reg.params[i] = base - STEP;
            let lm = loss(&reg);
            reg.params[i] = base;
            num[i] = (lp - lm) / (2.0 * STEP);
        }
        worst = worst.max(rel_err(&grad, &num));
    }
    worst
}

/// Every check above, by name.
pub fn all() -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = layers().into_iter().map(|(n, e)| (n.to_string(), e)).collect();
    out.push(("bce".into(), bce()));
    out.push((format!("{SMALL_CONV} network"), network(SMALL_CONV, 400)));
    out.push((format!("{SMALL_ATTN} network"), network(SMALL_ATTN, 400)));
    out.push(("pose regressor".into(), pose_regressor()));
    out
}
