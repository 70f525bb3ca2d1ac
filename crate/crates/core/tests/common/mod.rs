//! Independent reference computations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use drlir_core::data::RatingEvent;
use drlir_core::nn::{Activation, Dense, Mlp};
use rand::Rng;
use std::collections::HashMap;

pub fn ml100k_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data")
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Exact k nearest rows by `1 - cos`, ties by index.
pub fn brute_knn(items: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<usize> {
    let n = items.len() / dim;
    let mut all: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let v = &items[i * dim..(i + 1) * dim];
            let qn = q.iter().map(|x| x * x).sum::<f64>();
            let d = if qn == 0.0 || v.iter().all(|&x| x == 0.0) {
                1.0
            } else {
                (1.0 - cos(q, v)).clamp(0.0, 2.0)
            };
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.truncate(k);
    all.into_iter().map(|(_, i)| i).collect()
}

/// Mean pairwise `(1 - cos) / 2` by a plain double loop over ordered pairs.
pub fn ild_oracle(vs: &[Vec<f64>]) -> f64 {
    let n = vs.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += (1.0 - cos(&vs[i], &vs[j])) / 2.0;
            }
        }
    }
    s / (n * (n - 1)) as f64
}

/// Largest achievable sum of TDE over all `n`-subsets, TDE taken over the
/// full candidate set.
pub fn best_tde_sum(vs: &[Vec<f64>], n: usize) -> f64 {
    let c = vs.len();
    let tde: Vec<f64> = (0..c)
        .map(|i| (0..c).filter(|&j| j != i).map(|j| 1.0 - cos(&vs[i], &vs[j])).sum())
        .collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << c) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let s: f64 = (0..c).filter(|i| mask >> i & 1 == 1).map(|i| tde[i]).sum();
        best = best.max(s);
    }
    best
}

/// RMSE on `test` of predicting each item's mean training rating (global
/// mean for unseen items), over pairs whose user and item appear in `train`.
pub fn item_mean_rmse(train: &[RatingEvent], test: &[RatingEvent]) -> f64 {
    let mut sums: HashMap<u32, (f64, f64)> = HashMap::new();
    let mut users = std::collections::HashSet::new();
    for e in train {
        let s = sums.entry(e.item).or_default();
        s.0 += e.rating as f64;
        s.1 += 1.0;
        users.insert(e.user);
    }
    let (mut se, mut n) = (0.0, 0usize);
    for e in test {
        if !users.contains(&e.user) {
            continue;
        }
        if let Some(&(s, c)) = sums.get(&e.item) {
            se += (s / c - e.rating as f64).powi(2);
            n += 1;
        }
    }
    (se / n as f64).sqrt()
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Identity => z,
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Tanh => z.tanh(),
    }
}

/// Layer-by-layer forward pass written out from the weights.
pub fn forward_oracle(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in net.layers() {
        let mut next = vec![0.0; l.outputs];
        for o in 0..l.outputs {
            let mut z = l.bias[o];
            for i in 0..l.inputs {
                z += l.weights[o * l.inputs + i] * h[i];
            }
            next[o] = act(l.activation, z);
        }
        h = next;
    }
    h
}

/// Smallest `|pre-activation|` over the ReLU units for input `x`.
pub fn relu_margin(net: &Mlp<f64>, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut margin = f64::INFINITY;
    for l in net.layers() {
        let mut next = vec![0.0; l.outputs];
        for o in 0..l.outputs {
            let mut z = l.bias[o];
            for i in 0..l.inputs {
                z += l.weights[o * l.inputs + i] * h[i];
            }
            if l.activation == Activation::Relu {
                margin = margin.min(z.abs());
            }
            next[o] = act(l.activation, z);
        }
        h = next;
    }
    margin
}

pub fn random_net<R: Rng>(sizes: &[usize], acts: &[Activation], rng: &mut R) -> Mlp<f64> {
    let layers = sizes
        .windows(2)
        .zip(acts)
        .map(|(w, &a)| Dense {
            inputs: w[0],
            outputs: w[1],
            weights: (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
            activation: a,
        })
        .collect();
    Mlp::new(layers).unwrap()
}

pub fn random_vec<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Chi-square goodness of fit against a uniform distribution; returns the
/// p-value.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

pub struct GradCase {
    pub critic_params: f64,
    pub critic_action: f64,
    pub actor_composition: f64,
}

const MARGIN: f64 = 0.05;
const EPS: f64 = 1e-3;

fn transitions<R: Rng>(n: usize, s: usize, a: usize, rng: &mut R) -> Vec<drlir_core::agent::Transition<f64>> {
    (0..n)
        .map(|_| drlir_core::agent::Transition {
            state: random_vec(s, -1.0, 1.0, rng),
            action: random_vec(a, -1.0, 1.0, rng),
            reward: rng.random_range(-1.8..3.2),
            next_state: random_vec(s, -1.0, 1.0, rng),
        })
        .collect()
}

fn joined(s: &[f64], a: &[f64]) -> Vec<f64> {
    s.iter().chain(a).copied().collect()
}

/// Relative errors of the three analytic gradients against central
/// differences on one random small actor/critic pair. Draws again whenever
/// a ReLU sits within reach of its kink.
pub fn gradient_case<R: Rng>(rng: &mut R) -> GradCase {
    use drlir_core::agent::*;
    let (sd, ad) = (4, 2);
    loop {
        let critic = random_net(
            &[sd + ad, 5, 4, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            rng,
        );
        let actor = random_net(&[sd, 5, 4, ad], &[Activation::Relu, Activation::Relu, Activation::Tanh], rng);
        let batch = transitions(3, sd, ad, rng);
        let clear = batch.iter().all(|t| {
            let mu = forward_oracle(&actor, &t.state);
            relu_margin(&critic, &joined(&t.state, &t.action)) > MARGIN
                && relu_margin(&actor, &t.state) > MARGIN
                && relu_margin(&critic, &joined(&t.state, &mu)) > MARGIN
        });
        if !clear {
            continue;
        }
        let y: Vec<f64> = batch.iter().map(|t| t.reward + 0.5).collect();

        let (_, g) = critic_loss_gradient(&batch, &critic, &y).unwrap();
        let p0 = critic.params();
        let fd = central_diff(&p0, EPS, |p| {
            let mut c = critic.clone();
            c.set_params(p).unwrap();
            batch
                .iter()
                .zip(&y)
                .map(|(t, yi)| (yi - forward_oracle(&c, &joined(&t.state, &t.action))[0]).powi(2))
                .sum::<f64>()
                / batch.len() as f64
        });
        let critic_params = rel_err(&g.flat(), &fd);

        let t = &batch[0];
        let ga = critic_grad_wrt_action(&critic, &t.state, &t.action).unwrap();
        let fda = central_diff(&t.action, EPS, |a| forward_oracle(&critic, &joined(&t.state, a))[0]);
        let critic_action = rel_err(&ga, &fda);

        let gj = actor_objective_gradient(&batch, &actor, &critic).unwrap();
        let q0 = actor.params();
        let fdj = central_diff(&q0, EPS, |p| {
            let mut a = actor.clone();
            a.set_params(p).unwrap();
            batch
                .iter()
                .map(|t| forward_oracle(&critic, &joined(&t.state, &forward_oracle(&a, &t.state)))[0])
                .sum::<f64>()
                / batch.len() as f64
        });
        let actor_composition = rel_err(&gj.flat(), &fdj);
        let tiny = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-6;
        if tiny(&fd) || tiny(&fda) || tiny(&fdj) {
            continue;
        }
        return GradCase {
            critic_params,
            critic_action,
            actor_composition,
        };
    }
}
