//! Run configuration: a flat TOML file, overridden by `key=value` pairs.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{DenoiserShape, PretrainConfig};
use crate::diffusion::{MeanRule, NoiseSchedule};
use crate::dpo::DpoConfig;
use crate::error::{Error, Result};
use crate::experts::{BprConfig, ExpertWeights, ScorerFailure};
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub categories: usize,
    pub styles: usize,
    pub items: usize,
    pub outfits: usize,
    pub users: usize,
    pub dim: usize,
    pub prompt_dim: usize,
    pub noise: f64,
    pub category_spread: f64,
    pub style_spread: f64,
    pub history_outfits: usize,
    pub heldout_fraction: f64,

    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sample_steps: usize,
    pub posterior_mean: MeanRule,

    pub hidden: usize,
    pub time_dim: usize,
    pub eta: f64,
    pub pretrain_lr: f64,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,

    pub vbpr_dim: usize,
    pub bpr_lr: f64,
    pub bpr_epochs: usize,
    pub bpr_l2: f64,
    pub bpr_negatives: usize,
    pub alpha_q: f64,
    pub alpha_c: f64,
    pub alpha_p: f64,
    pub scorer_endpoint: Option<String>,
    pub scorer_timeout_ms: u64,
    pub scorer_failure: ScorerFailure,

    pub candidates: usize,
    pub outfits_per_epoch: usize,
    pub epochs: usize,
    pub beta_w: f64,
    pub beta_l: f64,
    pub dpo_lr: f64,
    pub adapter_rank: usize,
    pub adapter_scale: f64,

    pub eval_candidates: usize,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WorldConfig::default();
        let p = PretrainConfig::default();
        let b = BprConfig::default();
        let d = DpoConfig::default();
        Self {
            seed: 0,
            categories: w.categories,
            styles: w.styles,
            items: w.items,
            outfits: w.outfits,
            users: w.users,
            dim: w.dim,
            prompt_dim: w.prompt_dim,
            noise: w.noise,
            category_spread: w.category_spread,
            style_spread: w.style_spread,
            history_outfits: w.history_outfits,
            heldout_fraction: 0.2,
            t_train: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            sample_steps: 50,
            posterior_mean: MeanRule::default(),
            hidden: 64,
            time_dim: 8,
            eta: 0.3,
            pretrain_lr: p.learning_rate,
            pretrain_steps: p.steps,
            pretrain_batch: p.batch_size,
            vbpr_dim: 16,
            bpr_lr: b.learning_rate,
            bpr_epochs: b.epochs,
            bpr_l2: b.l2,
            bpr_negatives: 4,
            alpha_q: 1.0,
            alpha_c: 1.0,
            alpha_p: 1.0,
            scorer_endpoint: None,
            scorer_timeout_ms: 5000,
            scorer_failure: ScorerFailure::Fallback,
            candidates: d.candidates,
            outfits_per_epoch: d.outfits_per_epoch,
            epochs: d.epochs,
            beta_w: d.beta_w,
            beta_l: d.beta_l,
            dpo_lr: d.learning_rate,
            adapter_rank: d.adapter_rank,
            adapter_scale: d.adapter_scale,
            eval_candidates: 32,
            histogram_bins: 20,
        }
    }
}

fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    // Bare words that are not TOML literals are taken as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k, value))
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` (`key=value`); validated.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.styles < 2 {
            return bad("styles must be at least 2");
        }
        if self.categories == 0 || self.items == 0 || self.outfits == 0 || self.users == 0 || self.dim == 0 {
            return bad("world counts and dim must be positive");
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must be in [0, 1]");
        }
        if self.eval_candidates < 2 {
            return bad("eval_candidates must be at least 2");
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive");
        }
        for (name, v) in [("alpha_q", self.alpha_q), ("alpha_c", self.alpha_c), ("alpha_p", self.alpha_p)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return bad("time_dim must be a positive even number");
        }
        self.schedule()?;
        self.dpo().validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            categories: self.categories,
            styles: self.styles,
            items: self.items,
            outfits: self.outfits,
            users: self.users,
            dim: self.dim,
            prompt_dim: self.prompt_dim,
            noise: self.noise,
            category_spread: self.category_spread,
            style_spread: self.style_spread,
            history_outfits: self.history_outfits,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.t_train, self.beta_min, self.beta_max, self.sample_steps)?.with_mean_rule(self.posterior_mean))
    }

    pub fn shape(&self) -> DenoiserShape {
        DenoiserShape {
            latent_dim: self.dim,
            time_dim: self.time_dim,
            prompt_dim: self.prompt_dim,
            hidden: self.hidden,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            learning_rate: self.pretrain_lr,
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch,
            seed: crate::rng::derive(self.seed, &[crate::rng::tag("pretrain-cfg")]),
        }
    }

    pub fn bpr(&self, role: &str) -> BprConfig {
        BprConfig {
            learning_rate: self.bpr_lr,
            epochs: self.bpr_epochs,
            l2: self.bpr_l2,
            seed: crate::rng::derive(self.seed, &[crate::rng::tag(role)]),
        }
    }

    pub fn dpo(&self) -> DpoConfig {
        DpoConfig {
            beta_w: self.beta_w,
            beta_l: self.beta_l,
            learning_rate: self.dpo_lr,
            candidates: self.candidates,
            outfits_per_epoch: self.outfits_per_epoch,
            epochs: self.epochs,
            adapter_rank: self.adapter_rank,
            adapter_scale: self.adapter_scale,
            seed: crate::rng::derive(self.seed, &[crate::rng::tag("dpo")]),
        }
    }

    pub fn weights(&self) -> ExpertWeights {
        ExpertWeights {
            quality: self.alpha_q,
            compatibility: self.alpha_c,
            personalization: self.alpha_p,
        }
    }

    pub fn scorer_timeout(&self) -> Duration {
        Duration::from_millis(self.scorer_timeout_ms)
    }
}
