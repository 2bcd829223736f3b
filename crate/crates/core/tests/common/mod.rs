#![allow(dead_code)]

use outfit_dpo::denoiser::{DenoiserParams, DenoiserShape};
use outfit_dpo::diffusion::NoiseSchedule;
use outfit_dpo::dpo::PolicyPair;
use outfit_dpo::rng;
use outfit_dpo::sampler::{sample_candidates, Condition, Trajectory};

pub fn toy_shape() -> DenoiserShape {
    DenoiserShape {
        latent_dim: 2,
        time_dim: 2,
        prompt_dim: 2,
        hidden: 5,
    }
}

pub fn toy_condition() -> Condition {
    Condition {
        mutual: vec![0.3, -0.2],
        history: vec![0.4, 0.1],
        prompt: vec![1.0, -0.5],
        eta: 0.25,
        category: 1,
        outfit_id: "o1".into(),
        user_id: "u1".into(),
    }
}

/// Three-step schedule: two stochastic transitions and the terminal one.
pub fn toy_schedule() -> NoiseSchedule {
    NoiseSchedule::new(1000, 1e-4, 0.02, 3).unwrap()
}

/// A policy whose adapter has been moved off zero so that theta != ref.
pub fn perturbed_policy(seed: u64) -> PolicyPair {
    let base = DenoiserParams::new(toy_shape(), seed);
    let mut pol = PolicyPair::new(&base, 2, 1.0, seed + 1).unwrap();
    let mut r = rng::rng(seed, &[rng::tag("perturb")]);
    let p: Vec<f64> = pol
        .theta
        .trainable_params()
        .iter()
        .map(|v| v + 0.2 * rng::normal(&mut r))
        .collect();
    pol.theta.set_trainable_params(&p).unwrap();
    pol
}

pub fn toy_pair(pol: &PolicyPair, sched: &NoiseSchedule, seed: u64) -> (Trajectory, Trajectory) {
    let ts = sample_candidates(pol.reference(), &toy_condition(), 2, sched, seed).unwrap();
    let mut it = ts.into_iter();
    (it.next().unwrap(), it.next().unwrap())
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
