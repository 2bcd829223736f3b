//! Visual compatibility scorer trained with the BPR pairwise objective.
//!
//! `s(i, o) = alpha + <beta_head, v_i> + beta_o + <v_i, v_o>` with
//! `v_i = W1 x_i` and `v_o = W1 mean(outfit)`. The per-item bias of the
//! classic model is replaced by a linear head on `v_i` so that novel
//! (generated) items get a bias too.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

const MODULE: &str = "experts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbprModel {
    pub feature_dim: usize,
    pub dim: usize,
    /// `dim x feature_dim`, row-major.
    pub w1: Vec<f64>,
    pub alpha: f64,
    pub beta_head: Vec<f64>,
    pub beta_o: f64,
}

/// One training comparison: the true item should outscore the random one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BprTriple {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    /// Mean feature vector of the incomplete outfit.
    pub outfit: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            l2: 1e-4,
            seed: 0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(x)`, stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn mean_vec(vs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or(Error::EmptyInput { module: MODULE })?;
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        check_dim(MODULE, acc.len(), v.len())?;
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / vs.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

impl VbprModel {
    pub fn zeros(feature_dim: usize, dim: usize) -> Self {
        Self {
            feature_dim,
            dim,
            w1: vec![0.0; dim * feature_dim],
            alpha: 0.0,
            beta_head: vec![0.0; dim],
            beta_o: 0.0,
        }
    }

    /// Small Gaussian `W1`, zero biases. A zero `W1` is a saddle point of the
    /// bilinear term, so training needs a random start.
    pub fn new(feature_dim: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::rng(seed, &[rng::tag("vbpr-init")]);
        let sd = 0.1 / (feature_dim as f64).sqrt();
        let mut m = Self::zeros(feature_dim, dim);
        m.w1.iter_mut().for_each(|w| *w = sd * rng::normal(&mut r));
        m
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(MODULE, self.feature_dim, x.len())?;
        Ok(self
            .w1
            .chunks_exact(self.feature_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Score against an already averaged outfit feature.
    pub fn score_mean(&self, item: &[f64], outfit_mean: &[f64]) -> Result<f64> {
        let vi = self.project(item)?;
        let vo = self.project(outfit_mean)?;
        let bias: f64 = self.beta_head.iter().zip(&vi).map(|(a, b)| a * b).sum();
        let inter: f64 = vi.iter().zip(&vo).map(|(a, b)| a * b).sum();
        Ok(self.alpha + bias + self.beta_o + inter)
    }

    pub fn score(&self, item: &[f64], outfit: &[Vec<f64>]) -> Result<f64> {
        self.score_mean(item, &mean_vec(outfit)?)
    }

    pub fn param_len(&self) -> usize {
        self.w1.len() + self.dim + 2
    }

    /// Flat parameters: `w1`, `alpha`, `beta_head`, `beta_o`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.push(self.alpha);
        p.extend_from_slice(&self.beta_head);
        p.push(self.beta_o);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(MODULE, self.param_len(), p.len())?;
        let nw = self.w1.len();
        self.w1.copy_from_slice(&p[..nw]);
        self.alpha = p[nw];
        self.beta_head.copy_from_slice(&p[nw + 1..nw + 1 + self.dim]);
        self.beta_o = p[nw + 1 + self.dim];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// `-ln sigmoid(s(i, o) - s(r, o))` and its gradient in [`VbprModel::params`] order.
pub fn bpr_loss_and_grad(model: &VbprModel, triple: &BprTriple) -> Result<(f64, Vec<f64>)> {
    let diff = model.score_mean(&triple.positive, &triple.outfit)?
        - model.score_mean(&triple.negative, &triple.outfit)?;
    let loss = neg_log_sigmoid(diff);
    let g = sigmoid(diff) - 1.0;
    let delta: Vec<f64> = triple
        .positive
        .iter()
        .zip(&triple.negative)
        .map(|(a, b)| a - b)
        .collect();
    let u = model.project(&delta)?;
    let vo = model.project(&triple.outfit)?;
    let f = model.feature_dim;
    let mut grad = vec![0.0; model.param_len()];
    for r in 0..model.dim {
        let coef = model.beta_head[r] + vo[r];
        let row = &mut grad[r * f..(r + 1) * f];
        for c in 0..f {
            row[c] = g * (coef * delta[c] + u[r] * triple.outfit[c]);
        }
    }
    let nw = model.w1.len();
    for r in 0..model.dim {
        grad[nw + 1 + r] = g * u[r];
    }
    Ok((loss, grad))
}

pub fn bpr_loss(model: &VbprModel, triples: &[BprTriple]) -> Result<f64> {
    triples.iter().try_fold(0.0, |acc, t| {
        let d = model.score_mean(&t.positive, &t.outfit)? - model.score_mean(&t.negative, &t.outfit)?;
        Ok(acc + neg_log_sigmoid(d))
    })
}

/// Per-triple SGD in a seeded shuffled order; the trace holds the mean
/// loss of each epoch.
pub fn bpr_train(model: &VbprModel, triples: &[BprTriple], cfg: &BprConfig) -> Result<(VbprModel, Vec<f64>)> {
    if triples.is_empty() {
        return Err(Error::EmptyInput { module: MODULE });
    }
    let mut m = model.clone();
    let mut params = m.params();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let nw = m.w1.len();
    for epoch in 0..cfg.epochs {
        let mut r = rng::rng(cfg.seed, &[rng::tag("bpr-epoch"), epoch as u64]);
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (k, &i) in order.iter().enumerate() {
            let (loss, grad) = bpr_loss_and_grad(&m, &triples[i])?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    module: MODULE,
                    step: epoch * triples.len() + k,
                });
            }
            total += loss;
            for (j, (p, g)) in params.iter_mut().zip(&grad).enumerate() {
                let decay = if j < nw || (j > nw && j <= nw + m.dim) { cfg.l2 * *p } else { 0.0 };
                *p -= cfg.learning_rate * (g + decay);
            }
            m.set_params(&params)?;
        }
        trace.push(total / triples.len() as f64);
    }
    Ok((m, trace))
}

/// Fraction of triples whose positive outscores the negative.
pub fn ranking_accuracy(model: &VbprModel, triples: &[BprTriple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::EmptyInput { module: MODULE });
    }
    let mut hits = 0usize;
    for t in triples {
        if model.score_mean(&t.positive, &t.outfit)? > model.score_mean(&t.negative, &t.outfit)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / triples.len() as f64)
}
