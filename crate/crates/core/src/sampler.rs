//! Generation conditions and trajectory-recording reverse sampling.

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserParams, Dense};
use crate::diffusion::{sample_step, NoiseSchedule};
use crate::error::{check_dim, Error, Result};
use crate::{par, rng};

const MODULE: &str = "sampler";

/// Everything the denoiser is conditioned on for one outfit slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub mutual: Vec<f64>,
    pub history: Vec<f64>,
    pub prompt: Vec<f64>,
    pub eta: f64,
    pub category: usize,
    pub outfit_id: String,
    pub user_id: String,
}

/// Frozen maps between item-embedding space and latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBank {
    /// Latent-dim x embedding-dim linear map (bias unused).
    pub item_encoder: Dense,
    /// One prompt vector per category.
    pub prompt_table: Vec<Vec<f64>>,
    /// Dense layers applied to the mean encoded partial outfit, `tanh`
    /// between consecutive layers.
    pub mutual_mlp: Vec<Dense>,
}

impl EncoderBank {
    /// Identity item encoder, a near-identity single-layer mutual map and
    /// Gaussian prompt vectors, all derived from `seed`.
    pub fn generate(latent_dim: usize, prompt_dim: usize, categories: usize, seed: u64) -> Self {
        let mut r = rng::rng(seed, &[rng::tag("encoders")]);
        let prompt_table = (0..categories)
            .map(|_| rng::normal_vec(&mut r, prompt_dim))
            .collect();
        let mut mlp = Dense::identity(latent_dim);
        for w in mlp.weight.iter_mut() {
            *w += 0.1 * rng::normal(&mut r);
        }
        Self {
            item_encoder: Dense::identity(latent_dim),
            prompt_table,
            mutual_mlp: vec![mlp],
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.item_encoder.rows
    }

    pub fn encode(&self, item: &[f64]) -> Result<Vec<f64>> {
        check_dim(MODULE, self.item_encoder.cols, item.len())?;
        let mut y = vec![0.0; self.item_encoder.rows];
        for (row, yi) in self.item_encoder.weight.chunks_exact(item.len()).zip(y.iter_mut()) {
            *yi = row.iter().zip(item).map(|(a, b)| a * b).sum();
        }
        Ok(y)
    }

    pub fn apply_mutual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        let n = self.mutual_mlp.len();
        for (i, layer) in self.mutual_mlp.iter().enumerate() {
            check_dim(MODULE, layer.cols, h.len())?;
            h = layer.apply(&h);
            if i + 1 < n {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(h)
    }

    pub fn prompt(&self, category: usize) -> Result<&[f64]> {
        self.prompt_table
            .get(category)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::param(MODULE, format!("no prompt for category {category}")))
    }
}

fn mean_encoded(items: &[Vec<f64>], enc: &EncoderBank) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; enc.latent_dim()];
    for item in items {
        for (a, v) in acc.iter_mut().zip(enc.encode(item)?) {
            *a += v;
        }
    }
    let inv = 1.0 / items.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Mean encoding of the user's past items in the target category.
pub fn history_condition(history: &[Vec<f64>], enc: &EncoderBank) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::MissingHistory);
    }
    mean_encoded(history, enc)
}

/// Mutual-influence vector of a partial outfit.
pub fn mutual_condition(partial: &[Vec<f64>], enc: &EncoderBank) -> Result<Vec<f64>> {
    if partial.is_empty() {
        return Err(Error::param(MODULE, "partial outfit is empty"));
    }
    enc.apply_mutual(&mean_encoded(partial, enc)?)
}

/// `(1 - eta) latent + eta m`.
pub fn fuse_mutual(latent: &[f64], m: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_dim(MODULE, latent.len(), m.len())?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param(MODULE, format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(latent
        .iter()
        .zip(m)
        .map(|(x, mi)| (1.0 - eta) * x + eta * mi)
        .collect())
}

impl Condition {
    /// Condition for filling slot `category` of an outfit whose other
    /// items are `partial` (empty partial means a zero mutual vector).
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        enc: &EncoderBank,
        partial: &[Vec<f64>],
        history: &[Vec<f64>],
        category: usize,
        eta: f64,
        outfit_id: &str,
        user_id: &str,
    ) -> Result<Self> {
        let mutual = if partial.is_empty() {
            vec![0.0; enc.latent_dim()]
        } else {
            mutual_condition(partial, enc)?
        };
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::param(MODULE, format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Self {
            mutual,
            history: history_condition(history, enc)?,
            prompt: enc.prompt(category)?.to_vec(),
            eta,
            category,
            outfit_id: outfit_id.to_string(),
            user_id: user_id.to_string(),
        })
    }
}

/// The recorded reverse process of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub candidate: usize,
    pub condition: Condition,
    pub schedule_id: String,
    /// Sampling timesteps followed by 0.
    pub timesteps: Vec<usize>,
    /// `latents[i]` is the state at `timesteps[i]`; the first is the initial noise.
    pub latents: Vec<Vec<f64>>,
    /// `noises[i]` was injected on the transition `i -> i + 1`.
    pub noises: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_latent(&self) -> &[f64] {
        self.latents.last().expect("trajectory has states")
    }

    pub fn state_at(&self, t: usize) -> Option<&[f64]> {
        self.timesteps
            .iter()
            .position(|&s| s == t)
            .map(|i| self.latents[i].as_slice())
    }
}

/// Seed of candidate `j` given the outfit-level seed.
pub fn candidate_seed(outfit_seed: u64, j: usize) -> u64 {
    rng::derive(outfit_seed, &[rng::tag("candidate"), j as u64])
}

/// Samples one candidate from its own derived seed.
pub fn sample_one(
    params: &DenoiserParams,
    cond: &Condition,
    j: usize,
    sched: &NoiseSchedule,
    outfit_seed: u64,
) -> Result<Trajectory> {
    let d = params.shape.latent_dim;
    let mut r = rng::rng(candidate_seed(outfit_seed, j), &[]);
    let timesteps = sched.states();
    let mut latents = Vec::with_capacity(timesteps.len());
    let mut noises = Vec::with_capacity(timesteps.len() - 1);
    latents.push(rng::normal_vec(&mut r, d));
    for (step, w) in timesteps.windows(2).enumerate() {
        let (t, t_prev) = (w[0], w[1]);
        let xt = latents.last().expect("nonempty");
        let eps = params.predict_noise(xt, t, cond)?;
        let z = rng::normal_vec(&mut r, d);
        let next = sample_step(xt, &eps, t, t_prev, sched, &z)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericBlowup { step, candidate: j });
        }
        latents.push(next);
        noises.push(z);
    }
    Ok(Trajectory {
        candidate: j,
        condition: cond.clone(),
        schedule_id: sched.id(),
        timesteps,
        latents,
        noises,
    })
}

/// `m_count` independent candidates for one outfit slot.
pub fn sample_candidates(
    params: &DenoiserParams,
    cond: &Condition,
    m_count: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if m_count < 2 {
        return Err(Error::param(MODULE, "need at least two candidates per outfit"));
    }
    par::try_map_range(m_count, |j| sample_one(params, cond, j, sched, seed))
}

/// Recomputes every state from the stored initial latent and noises.
pub fn replay(params: &DenoiserParams, traj: &Trajectory, sched: &NoiseSchedule) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![traj.latents[0].clone()];
    for (i, w) in traj.timesteps.windows(2).enumerate() {
        let xt = out.last().expect("nonempty");
        let eps = params.predict_noise(xt, w[0], &traj.condition)?;
        out.push(sample_step(xt, &eps, w[0], w[1], sched, &traj.noises[i])?);
    }
    Ok(out)
}

/// Generates a full outfit one category at a time; each item's mutual
/// condition summarizes the items generated before it.
#[allow(clippy::too_many_arguments)]
pub fn sample_outfit_gor(
    params: &DenoiserParams,
    categories: &[usize],
    histories: &[Vec<Vec<f64>>],
    enc: &EncoderBank,
    sched: &NoiseSchedule,
    eta: f64,
    user_id: &str,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if categories.is_empty() {
        return Err(Error::param(MODULE, "outfit spec is empty"));
    }
    check_dim(MODULE, categories.len(), histories.len())?;
    let outfit_id = format!("gor-{user_id}-{seed}");
    let mut generated: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::with_capacity(categories.len());
    for (k, (&cat, hist)) in categories.iter().zip(histories).enumerate() {
        let cond = Condition::build(enc, &generated, hist, cat, eta, &outfit_id, user_id)?;
        let traj = sample_one(params, &cond, k, sched, rng::derive(seed, &[k as u64]))?;
        generated.push(traj.final_latent().to_vec());
        out.push(traj);
    }
    Ok(out)
}
