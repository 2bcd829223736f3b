//! Per-timestep DPO over recorded trajectories.

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::diffusion::{estimate_x0, gaussian_log_prob, mean_noise_coefficient, posterior_params, NoiseSchedule};
use crate::error::{Error, Result};
use crate::experts::vbpr::{neg_log_sigmoid, sigmoid};
use crate::sampler::Trajectory;

const MODULE: &str = "dpo_trainer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta_w: f64,
    pub beta_l: f64,
    pub learning_rate: f64,
    pub candidates: usize,
    pub outfits_per_epoch: usize,
    pub epochs: usize,
    pub adapter_rank: usize,
    pub adapter_scale: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta_w: 0.5,
            beta_l: 0.5,
            learning_rate: 5e-4,
            candidates: 7,
            outfits_per_epoch: 100,
            epochs: 5,
            adapter_rank: 4,
            adapter_scale: 1.0,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_w > 0.0 && self.beta_l > 0.0) {
            return Err(Error::param(MODULE, "beta_w and beta_l must be positive"));
        }
        if self.candidates < 2 {
            return Err(Error::param(MODULE, "need at least two candidates per outfit"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(MODULE, "learning_rate must be finite and non-negative"));
        }
        if self.outfits_per_epoch == 0 {
            return Err(Error::param(MODULE, "outfits_per_epoch must be positive"));
        }
        if self.adapter_rank == 0 {
            return Err(Error::param(MODULE, "adapter_rank must be positive"));
        }
        Ok(())
    }
}

/// The trainable policy and the frozen reference it is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub theta: DenoiserParams,
    reference: DenoiserParams,
}

impl PolicyPair {
    /// Attaches a fresh adapter to `base`; the reference is `base` itself.
    pub fn new(base: &DenoiserParams, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        if base.has_adapter() {
            return Err(Error::AdapterState("base network already carries an adapter".into()));
        }
        let theta = base.attach_adapter(rank, scale, seed)?;
        let reference = theta.base_only();
        Ok(Self { theta, reference })
    }

    /// Rebuilds the pair from a fine-tuned network; the reference is its
    /// frozen base, which no update ever touches.
    pub fn resume(theta: DenoiserParams) -> Result<Self> {
        if !theta.has_adapter() {
            return Err(Error::AdapterState("policy network has no adapter".into()));
        }
        let reference = theta.base_only();
        Ok(Self { theta, reference })
    }

    pub fn reference(&self) -> &DenoiserParams {
        &self.reference
    }
}

fn transition_index(traj: &Trajectory, t: usize, t_prev: usize) -> Result<usize> {
    traj.timesteps
        .windows(2)
        .position(|w| w[0] == t && w[1] == t_prev)
        .ok_or_else(|| Error::param(MODULE, format!("({t} -> {t_prev}) is not a transition of this trajectory")))
}

struct StepEval {
    log_prob: f64,
    /// `d log_prob / d eps_pred`.
    grad_eps: Vec<f64>,
}

fn step_from_eps(traj: &Trajectory, i: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<StepEval> {
    let (t, t_prev) = (traj.timesteps[i], traj.timesteps[i + 1]);
    let xt = &traj.latents[i];
    let x_prev = &traj.latents[i + 1];
    let step = posterior_params(&estimate_x0(xt, eps, t, sched)?, eps, t, t_prev, sched)?;
    if step.sigma2 <= 0.0 {
        return Err(Error::DegenerateDensity);
    }
    let log_prob = gaussian_log_prob(x_prev, &step)?;
    let c = mean_noise_coefficient(t, t_prev, sched)?;
    let grad_eps = x_prev
        .iter()
        .zip(&step.mu)
        .map(|(x, m)| c * (x - m) / step.sigma2)
        .collect();
    Ok(StepEval { log_prob, grad_eps })
}

fn eval_step(params: &DenoiserParams, traj: &Trajectory, i: usize, sched: &NoiseSchedule) -> Result<StepEval> {
    let eps = params.predict_noise(&traj.latents[i], traj.timesteps[i], &traj.condition)?;
    step_from_eps(traj, i, &eps, sched)
}

/// Log-density of the stored transition `t -> t_prev` under `params`.
pub fn step_log_prob(
    params: &DenoiserParams,
    traj: &Trajectory,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let i = transition_index(traj, t, t_prev)?;
    Ok(eval_step(params, traj, i, sched)?.log_prob)
}

/// Loss at one transition of one pair, with its gradient over the adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    /// `beta_w * ratio_w - beta_l * ratio_l`.
    pub margin: f64,
    pub grad: Vec<f64>,
}

fn check_pair(winner: &Trajectory, loser: &Trajectory) -> Result<()> {
    if winner.schedule_id != loser.schedule_id || winner.timesteps != loser.timesteps {
        return Err(Error::param(MODULE, "pair trajectories use different schedules"));
    }
    Ok(())
}

fn pair_loss_at(
    pol: &PolicyPair,
    winner: &Trajectory,
    loser: &Trajectory,
    i: usize,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<PairLoss> {
    let theta = &pol.theta;
    let t = winner.timesteps[i];
    let fw = theta.predict_with_grad(&winner.latents[i], t, &winner.condition)?;
    let fl = theta.predict_with_grad(&loser.latents[i], t, &loser.condition)?;
    let w_theta = step_from_eps(winner, i, &fw.output, sched)?;
    let l_theta = step_from_eps(loser, i, &fl.output, sched)?;
    let w_ref = eval_step(&pol.reference, winner, i, sched)?;
    let l_ref = eval_step(&pol.reference, loser, i, sched)?;
    let margin = cfg.beta_w * (w_theta.log_prob - w_ref.log_prob) - cfg.beta_l * (l_theta.log_prob - l_ref.log_prob);
    let loss = neg_log_sigmoid(margin);
    let dz = sigmoid(margin) - 1.0;
    let mut grad = vec![0.0; theta.trainable_len()];
    fw.backward_into(&w_theta.grad_eps, dz * cfg.beta_w, &mut grad);
    fl.backward_into(&l_theta.grad_eps, -dz * cfg.beta_l, &mut grad);
    Ok(PairLoss { loss, margin, grad })
}

/// DPO loss of (winner, loser) at the transition `t -> t_prev`.
pub fn dpo_pair_loss(
    pol: &PolicyPair,
    winner: &Trajectory,
    loser: &Trajectory,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<PairLoss> {
    check_pair(winner, loser)?;
    let i = transition_index(winner, t, t_prev)?;
    pair_loss_at(pol, winner, loser, i, sched, cfg)
}

/// One SGD step per stochastic transition, from `t = T` downwards.
/// Returns the per-transition losses before each update.
pub fn finetune_pair(
    pol: &mut PolicyPair,
    winner: &Trajectory,
    loser: &Trajectory,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
) -> Result<Vec<f64>> {
    check_pair(winner, loser)?;
    let n = winner.timesteps.len();
    let mut losses = Vec::with_capacity(n.saturating_sub(2));
    for i in 0..n.saturating_sub(1) {
        let (t, t_prev) = (winner.timesteps[i], winner.timesteps[i + 1]);
        if crate::diffusion::posterior_variance(t, t_prev, sched)? <= 0.0 {
            continue;
        }
        let pl = pair_loss_at(pol, winner, loser, i, sched, cfg)?;
        if !pl.loss.is_finite() || pl.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { module: MODULE, step: i });
        }
        if cfg.learning_rate > 0.0 {
            pol.theta.sgd_step(&pl.grad, cfg.learning_rate)?;
        }
        losses.push(pl.loss);
    }
    Ok(losses)
}
