//! Noise schedules and the forward/reverse Gaussian algebra of the sampler.
//!
//! `alpha_bar[t]` is the cumulative signal coefficient: the forward process
//! is `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`. The reverse
//! transition from `t` to `t_prev` is an isotropic Gaussian whose mean moves
//! the model's clean estimate back to noise level `t_prev` along the
//! predicted noise direction, with variance
//!
//! ```text
//! sigma2 = (1 - ab_prev) / (1 - ab_t) * (1 - ab_t / ab_prev)
//! ```
//!
//! The mean is `sqrt(ab_prev) x0_hat + k eps_pred`. Under
//! [`MeanRule::Literal`], `k = sqrt(1 - ab_prev)`. That puts the full noise
//! level of `t_prev` into the mean and then adds `sigma2` on top, so
//! sampled states drift above the marginal variance the network was
//! trained on. [`MeanRule::Consistent`] (the default) uses
//! `k = sqrt(1 - ab_prev - sigma2)`, which keeps every state at variance
//! `1 - ab_prev` around the signal.
//!
//! The terminal transition into `t = 0` has `ab_prev = 1` and is
//! deterministic under either rule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const MODULE: &str = "diffusion";

/// One fashion item in generator space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub values: Vec<f64>,
    pub category: usize,
}

impl Latent {
    pub fn new(values: Vec<f64>, category: usize) -> Self {
        Self { values, category }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Noise coefficient of the reverse-transition mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanRule {
    /// `sqrt(1 - ab_prev)`.
    Literal,
    /// `sqrt(1 - ab_prev - sigma2)`.
    #[default]
    Consistent,
}

impl MeanRule {
    pub fn as_u8(self) -> u8 {
        match self {
            MeanRule::Literal => 0,
            MeanRule::Consistent => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(MeanRule::Literal),
            1 => Some(MeanRule::Consistent),
            _ => None,
        }
    }
}

/// Linear-beta DDPM schedule with an evenly spaced sampling sub-schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Length `t_train + 1`; `alpha_bar[0] == 1`.
    pub alpha_bar: Vec<f64>,
    /// Strictly decreasing, all in `1..=t_train`.
    pub sample_steps: Vec<usize>,
    pub mean_rule: MeanRule,
}

impl NoiseSchedule {
    pub fn new(t_train: usize, beta_min: f64, beta_max: f64, n_sample: usize) -> Result<Self> {
        if t_train == 0 {
            return Err(Error::param(MODULE, "t_train must be positive"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::param(
                MODULE,
                format!("need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"),
            ));
        }
        if n_sample == 0 || n_sample > t_train {
            return Err(Error::param(
                MODULE,
                format!("n_sample must be in 1..={t_train}, got {n_sample}"),
            ));
        }
        let mut alpha_bar = Vec::with_capacity(t_train + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=t_train {
            let beta = if t_train == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * (s - 1) as f64 / (t_train - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let sample_steps = (1..=n_sample).rev().map(|i| i * t_train / n_sample).collect();
        Ok(Self {
            t_train,
            beta_min,
            beta_max,
            alpha_bar,
            sample_steps,
            mean_rule: MeanRule::default(),
        })
    }

    pub fn with_mean_rule(mut self, rule: MeanRule) -> Self {
        self.mean_rule = rule;
        self
    }

    /// The default 1000-step schedule sampled at 50 steps.
    pub fn standard() -> Self {
        Self::new(1000, 1e-4, 0.02, 50).expect("valid default schedule")
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::param(MODULE, format!("timestep {t} beyond t_train")))
    }

    pub fn n_sample(&self) -> usize {
        self.sample_steps.len()
    }

    /// Sampling timesteps followed by the terminal 0.
    pub fn states(&self) -> Vec<usize> {
        let mut s = self.sample_steps.clone();
        s.push(0);
        s
    }

    /// Consecutive `(t, t_prev)` pairs, ending with the terminal `(t_1, 0)`.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let states = self.states();
        states.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Transitions with a non-degenerate Gaussian density.
    pub fn stochastic_transitions(&self) -> Vec<(usize, usize)> {
        self.transitions()
            .into_iter()
            .filter(|&(_, tp)| self.alpha_bar[tp] < 1.0)
            .collect()
    }

    /// Short identifier stored alongside trajectories.
    pub fn id(&self) -> String {
        format!(
            "linear-{}-{:e}-{:e}-{}-{:?}",
            self.t_train,
            self.beta_min,
            self.beta_max,
            self.n_sample(),
            self.mean_rule
        )
    }
}

/// Mean and shared variance of one reverse transition.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStep {
    pub mu: Vec<f64>,
    pub sigma2: f64,
}

pub fn forward_noise(x0: &Latent, t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Latent> {
    check_dim(MODULE, x0.dim(), eps.len())?;
    if t == 0 || t > sched.t_train {
        return Err(Error::param(MODULE, format!("forward timestep {t} out of range")));
    }
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0.values.iter().zip(eps).map(|(x, e)| a * x + b * e).collect();
    Ok(Latent::new(values, x0.category))
}

pub fn estimate_x0(xt: &[f64], eps_pred: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_dim(MODULE, xt.len(), eps_pred.len())?;
    let ab = sched.alpha_bar(t)?;
    if ab <= 0.0 {
        return Err(Error::Singularity { t });
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(xt.iter().zip(eps_pred).map(|(x, e)| (x - b * e) / a).collect())
}

fn check_pair(t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<(f64, f64)> {
    if t_prev >= t {
        return Err(Error::param(MODULE, format!("t_prev={t_prev} must be below t={t}")));
    }
    let ab_t = sched.alpha_bar(t)?;
    let ab_prev = sched.alpha_bar(t_prev)?;
    if ab_t >= 1.0 {
        return Err(Error::DivisionDomain { t });
    }
    if ab_prev <= 0.0 {
        return Err(Error::Singularity { t: t_prev });
    }
    Ok((ab_t, ab_prev))
}

pub fn posterior_variance(t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<f64> {
    let (ab_t, ab_prev) = check_pair(t, t_prev, sched)?;
    Ok(variance_of(ab_t, ab_prev))
}

fn variance_of(ab_t: f64, ab_prev: f64) -> f64 {
    (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
}

pub fn posterior_params(
    x0_hat: &[f64],
    eps_pred: &[f64],
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<GaussianStep> {
    check_dim(MODULE, x0_hat.len(), eps_pred.len())?;
    let (ab_t, ab_prev) = check_pair(t, t_prev, sched)?;
    let sigma2 = variance_of(ab_t, ab_prev);
    let (a, b) = (ab_prev.sqrt(), noise_weight(ab_prev, sigma2, sched.mean_rule));
    let mu = x0_hat.iter().zip(eps_pred).map(|(x, e)| a * x + b * e).collect();
    Ok(GaussianStep { mu, sigma2 })
}

fn noise_weight(ab_prev: f64, sigma2: f64, rule: MeanRule) -> f64 {
    match rule {
        MeanRule::Literal => (1.0 - ab_prev).sqrt(),
        MeanRule::Consistent => (1.0 - ab_prev - sigma2).max(0.0).sqrt(),
    }
}

/// Derivative of the posterior mean with respect to the predicted noise,
/// holding `x_t` fixed: `mu = c_x x_t + c_eps eps_pred`.
pub fn mean_noise_coefficient(t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<f64> {
    let (ab_t, ab_prev) = check_pair(t, t_prev, sched)?;
    let b = noise_weight(ab_prev, variance_of(ab_t, ab_prev), sched.mean_rule);
    Ok(b - ab_prev.sqrt() * (1.0 - ab_t).sqrt() / ab_t.sqrt())
}

pub fn gaussian_log_prob(x: &[f64], step: &GaussianStep) -> Result<f64> {
    check_dim(MODULE, step.mu.len(), x.len())?;
    if step.sigma2 <= 0.0 {
        return Err(Error::DegenerateDensity);
    }
    let norm = -0.5 * (2.0 * PI * step.sigma2).ln();
    Ok(x.iter()
        .zip(&step.mu)
        .map(|(xi, mi)| norm - (xi - mi) * (xi - mi) / (2.0 * step.sigma2))
        .sum())
}

pub fn sample_step(
    xt: &[f64],
    eps_pred: &[f64],
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_dim(MODULE, xt.len(), noise.len())?;
    let x0_hat = estimate_x0(xt, eps_pred, t, sched)?;
    let step = posterior_params(&x0_hat, eps_pred, t, t_prev, sched)?;
    if step.sigma2 == 0.0 {
        return Ok(step.mu);
    }
    let sd = step.sigma2.sqrt();
    Ok(step.mu.iter().zip(noise).map(|(m, z)| m + sd * z).collect())
}
