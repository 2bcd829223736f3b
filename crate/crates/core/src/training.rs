//! The sample, score, fine-tune loop.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dpo::{finetune_pair, DpoConfig, PolicyPair};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::experts::vbpr::{sigmoid, VbprModel};
use crate::experts::{
    aggregate_and_label, build_preference_pairs, labels_of, personalization_score, ExpertVerdict, ExpertWeights,
    Label, QualityExpert,
};
use crate::sampler::{sample_candidates, Condition, Trajectory};
use crate::trajstore::TrajectoryStore;
use crate::world::World;
use crate::{par, rng};

const MODULE: &str = "dpo_trainer";
pub const REPORT_VERSION: u32 = 1;

/// One fill-in-the-blank task: outfit `outfit` with slot `slot` removed,
/// generated for `user`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub outfit: usize,
    pub slot: usize,
    pub user: usize,
    pub partial: Vec<Vec<f64>>,
    pub condition: Condition,
}

pub fn build_task(world: &World, o: usize, eta: f64, seed: u64) -> Result<Task> {
    if o >= world.outfits.len() {
        return Err(Error::param(MODULE, format!("outfit index {o} out of range")));
    }
    let slot = rng::rng(seed, &[rng::tag("slot"), o as u64]).random_range(0..world.n_categories());
    let user = world.user_for_outfit(o)?;
    let partial = world.partial_outfit(o, slot)?;
    let history = world.user_history(user, slot)?;
    let condition = Condition::build(
        &world.encoders,
        &partial,
        &history,
        slot,
        eta,
        &world.outfits[o].id,
        &world.users[user].id,
    )?;
    Ok(Task {
        outfit: o,
        slot,
        user,
        partial,
        condition,
    })
}

/// The three feedback experts and their aggregation weights.
#[derive(Debug, Clone)]
pub struct ExpertBench {
    pub quality: QualityExpert,
    pub compatibility: VbprModel,
    pub weights: ExpertWeights,
}

impl ExpertBench {
    /// Raw channel scores of each candidate, before aggregation.
    pub fn score(&self, world: &World, task: &Task, trajs: &[Trajectory]) -> Result<Vec<ExpertVerdict>> {
        let name = world.category_name(task.slot);
        trajs
            .iter()
            .map(|tr| {
                let x = tr.final_latent();
                let s_q = self.quality.score(x, task.slot, name)?;
                let s_c = self.compatibility.score(x, &task.partial)?;
                let s_p = personalization_score(&world.encoders.encode(x)?, &task.condition.history)?;
                Ok(ExpertVerdict::new(tr.candidate, s_q, s_c, s_p))
            })
            .collect()
    }

    /// Weighted channels mapped to `[0, 1]` by fixed ranges rather than
    /// per-outfit min-max, so that means are comparable across epochs.
    pub fn fixed_range_score(&self, v: &ExpertVerdict) -> f64 {
        let w = &self.weights;
        w.quality * (v.s_q as f64 - 1.0) / 9.0 + w.compatibility * sigmoid(v.s_c) + w.personalization * (v.s_p + 1.0) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ChannelStat {
    fn of(xs: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut min, mut max) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
        for x in xs {
            n += 1;
            sum += x;
            min = min.min(x);
            max = max.max(x);
        }
        Self {
            mean: sum / n.max(1) as f64,
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Timings {
    pub sampling_secs: f64,
    pub finetune_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub version: u32,
    pub epoch: usize,
    pub config_hash: String,
    pub seed: u64,
    pub outfits: usize,
    pub candidates: usize,
    pub winners: usize,
    pub pairs: usize,
    pub updates: usize,
    pub loss_total: f64,
    pub loss_mean: Option<f64>,
    pub loss_min: Option<f64>,
    pub loss_max: Option<f64>,
    pub quality: ChannelStat,
    pub compatibility: ChannelStat,
    pub personalization: ChannelStat,
    pub timings: Timings,
}

/// Equality ignores wall-clock timings.
impl PartialEq for EpochReport {
    fn eq(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            serde_json::to_value(Self {
                timings: Timings::default(),
                ..r.clone()
            })
            .expect("report serializes")
        };
        strip(self) == strip(other)
    }
}

/// One scored candidate, as written to the feedback log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub epoch: usize,
    pub outfit_id: String,
    pub user_id: String,
    pub category: usize,
    pub candidate: usize,
    pub s_q: u8,
    pub s_c: f64,
    pub s_p: f64,
    pub aggregate: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub report: EpochReport,
    pub feedback: Vec<FeedbackRecord>,
    pub trajectories: TrajectoryStore,
}

/// Inputs shared by every epoch of a run.
pub struct EpochContext<'a> {
    pub world: &'a World,
    pub train: &'a [usize],
    pub bench: &'a ExpertBench,
    pub sched: &'a NoiseSchedule,
    pub cfg: &'a DpoConfig,
    pub eta: f64,
    pub config_hash: &'a str,
}

struct Scored {
    trajs: Vec<Trajectory>,
    verdicts: Vec<ExpertVerdict>,
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// The outfits used in `epoch`, in ascending index order.
pub fn epoch_subset(train: &[usize], k: usize, seed: u64, epoch: usize) -> Result<Vec<usize>> {
    if train.len() < k {
        return Err(Error::param(
            MODULE,
            format!("{k} outfits per epoch requested but the training split has {}", train.len()),
        ));
    }
    let mut r = rng::rng(seed, &[rng::tag("subset"), epoch as u64]);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut r, train.len(), k)
        .into_iter()
        .map(|i| train[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// One epoch. `pol` is replaced only if the whole epoch succeeds.
pub fn run_epoch(pol: &mut PolicyPair, ctx: &EpochContext, epoch: usize) -> Result<EpochOutcome> {
    let cfg = ctx.cfg;
    cfg.validate()?;
    let epoch_seed = rng::derive(cfg.seed, &[rng::tag("epoch"), epoch as u64]);
    let subset = epoch_subset(ctx.train, cfg.outfits_per_epoch, cfg.seed, epoch)?;

    let started = Instant::now();
    let theta = &pol.theta;
    let scored = par::try_map_range(subset.len(), |i| -> Result<Scored> {
        let o = subset[i];
        let task = build_task(ctx.world, o, ctx.eta, epoch_seed)?;
        let seed = rng::derive(epoch_seed, &[rng::tag("outfit"), o as u64]);
        let trajs = sample_candidates(theta, &task.condition, cfg.candidates, ctx.sched, seed)?;
        let raw = ctx.bench.score(ctx.world, &task, &trajs)?;
        let verdicts = aggregate_and_label(&raw, &ctx.bench.weights)?;
        Ok(Scored { trajs, verdicts })
    })?;
    let sampling_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let mut next = pol.clone();
    let (mut pairs, mut updates, mut winners) = (0usize, 0usize, 0usize);
    let mut total = Sum::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &scored {
        let labels = labels_of(&s.verdicts)?;
        winners += labels.iter().filter(|&&l| l == Label::W).count();
        for pair in build_preference_pairs(&labels) {
            let losses = finetune_pair(&mut next, &s.trajs[pair.winner], &s.trajs[pair.loser], ctx.sched, cfg)?;
            pairs += 1;
            updates += losses.len();
            for l in losses {
                total.add(l);
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
    }
    let finetune_secs = started.elapsed().as_secs_f64();
    if !next.theta.all_finite() {
        return Err(Error::Divergence {
            module: MODULE,
            step: updates,
        });
    }

    let verdicts = || scored.iter().flat_map(|s| s.verdicts.iter());
    let loss_total = total.value();
    let report = EpochReport {
        version: REPORT_VERSION,
        epoch,
        config_hash: ctx.config_hash.to_string(),
        seed: cfg.seed,
        outfits: subset.len(),
        candidates: cfg.candidates,
        winners,
        pairs,
        updates,
        loss_total,
        loss_mean: (updates > 0).then(|| loss_total / updates as f64),
        loss_min: (updates > 0).then_some(lo),
        loss_max: (updates > 0).then_some(hi),
        quality: ChannelStat::of(verdicts().map(|v| v.s_q as f64)),
        compatibility: ChannelStat::of(verdicts().map(|v| v.s_c)),
        personalization: ChannelStat::of(verdicts().map(|v| v.s_p)),
        timings: Timings {
            sampling_secs,
            finetune_secs,
        },
    };
    let mut feedback = Vec::new();
    let mut records = Vec::new();
    for s in scored {
        for (tr, v) in s.trajs.iter().zip(&s.verdicts) {
            let c = &tr.condition;
            feedback.push(FeedbackRecord {
                epoch,
                outfit_id: c.outfit_id.clone(),
                user_id: c.user_id.clone(),
                category: c.category,
                candidate: v.candidate,
                s_q: v.s_q,
                s_c: v.s_c,
                s_p: v.s_p,
                aggregate: v.aggregate,
                label: v.label.expect("labeled"),
            });
        }
        records.extend(s.trajs);
    }
    *pol = next;
    Ok(EpochOutcome {
        report,
        feedback,
        trajectories: TrajectoryStore {
            config_hash: ctx.config_hash.to_string(),
            seed: cfg.seed,
            epoch,
            records,
        },
    })
}

/// Runs epochs `done + 1 ..= cfg.epochs`, handing each finished epoch to
/// `on_epoch` before starting the next.
pub fn run_training(
    mut pol: PolicyPair,
    ctx: &EpochContext,
    done: usize,
    mut on_epoch: impl FnMut(&PolicyPair, &EpochOutcome) -> Result<()>,
) -> Result<(PolicyPair, Vec<EpochReport>)> {
    let mut reports = Vec::new();
    for epoch in done + 1..=ctx.cfg.epochs {
        let outcome = run_epoch(&mut pol, ctx, epoch)?;
        log::info!(
            "epoch {epoch}: {} pairs, mean loss {:?}, {:.1}s sampling, {:.1}s fine-tuning",
            outcome.report.pairs,
            outcome.report.loss_mean,
            outcome.report.timings.sampling_secs,
            outcome.report.timings.finetune_secs
        );
        on_epoch(&pol, &outcome)?;
        reports.push(outcome.report);
    }
    Ok((pol, reports))
}
