//! Held-out evaluation metrics, score histograms and panel weights.
//!
//! Category accuracy and diversity are proxies for an image-classifier
//! score, which needs pixels this crate does not have.

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::diffusion::NoiseSchedule;
use crate::error::{check_dim, Error, Result};
use crate::experts::vbpr::{sigmoid, VbprModel};
use crate::experts::{minmax_norm, personalization_score};
use crate::sampler::{sample_candidates, EncoderBank};
use crate::training::{build_task, ExpertBench};
use crate::world::World;
use crate::{par, rng};

const MODULE: &str = "evalkit";
pub const REPORT_VERSION: u32 = 1;

fn nonempty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyInput { module: MODULE });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean sigmoid-squashed score of each candidate against its partial outfit.
pub fn eval_compatibility(vbpr: &VbprModel, cases: &[(&[f64], &[Vec<f64>])]) -> Result<f64> {
    nonempty(cases)?;
    let s = cases
        .iter()
        .map(|(c, partial)| vbpr.score(c, partial).map(sigmoid))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&s))
}

/// Mean cosine between each encoded candidate and its history condition.
pub fn eval_personalization(cases: &[(&[f64], &[f64])], enc: &EncoderBank) -> Result<f64> {
    nonempty(cases)?;
    let s = cases
        .iter()
        .map(|(c, h)| personalization_score(&enc.encode(c)?, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&s))
}

/// Nearest-prototype category classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestPrototype {
    pub prototypes: Vec<Vec<f64>>,
}

impl NearestPrototype {
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        nonempty(&self.prototypes)?;
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.prototypes.iter().enumerate() {
            check_dim(MODULE, p.len(), x.len())?;
            let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        Ok(best.1)
    }
}

/// Fraction of candidates classified as their requested category.
pub fn eval_category_accuracy(clf: &NearestPrototype, cases: &[(&[f64], usize)]) -> Result<f64> {
    nonempty(cases)?;
    let mut hits = 0usize;
    for (x, k) in cases {
        hits += (clf.classify(x)? == *k) as usize;
    }
    Ok(hits as f64 / cases.len() as f64)
}

fn pairwise_mean_distance(set: &[Vec<f64>]) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::param(MODULE, "diversity needs at least two candidates"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for a in 0..set.len() {
        for b in a + 1..set.len() {
            check_dim(MODULE, set[a].len(), set[b].len())?;
            total += set[a]
                .iter()
                .zip(&set[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Mean pairwise Euclidean distance within each candidate set, averaged
/// over sets.
pub fn eval_diversity(sets: &[Vec<Vec<f64>>]) -> Result<f64> {
    nonempty(sets)?;
    let per = sets.iter().map(|s| pairwise_mean_distance(s)).collect::<Result<Vec<_>>>()?;
    Ok(mean(&per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Fraction of samples in the lowest and highest tenth of the bins.
    pub outer_mass: f64,
}

/// Min-max normalizes `scores` and bins them over `[0, 1]`.
pub fn score_distribution(scores: &[f64], bins: usize) -> Result<Histogram> {
    nonempty(scores)?;
    if bins == 0 {
        return Err(Error::param(MODULE, "histogram needs at least one bin"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::param(MODULE, "non-finite score"));
    }
    let mut counts = vec![0usize; bins];
    for v in minmax_norm(scores) {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let tail = ((bins as f64 * 0.1).round() as usize).max(1);
    let outer: usize = if 2 * tail >= bins {
        counts.iter().sum()
    } else {
        counts[..tail].iter().chain(&counts[bins - tail..]).sum()
    };
    Ok(Histogram {
        edges,
        counts,
        outer_mass: outer as f64 / scores.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelWeights {
    pub totals: Vec<u64>,
    pub exact: Vec<f64>,
    pub percent: Vec<u32>,
}

/// Criterion weights from an experts x criteria score matrix.
pub fn panel_weights(matrix: &[Vec<u64>]) -> Result<PanelWeights> {
    nonempty(matrix)?;
    let n = matrix[0].len();
    if n == 0 {
        return Err(Error::EmptyInput { module: MODULE });
    }
    let mut totals = vec![0u64; n];
    for row in matrix {
        check_dim(MODULE, n, row.len())?;
        if row.contains(&0) {
            return Err(Error::param(MODULE, "panel scores must be positive integers"));
        }
        totals.iter_mut().zip(row).for_each(|(t, v)| *t += v);
    }
    let grand: u64 = totals.iter().sum();
    if grand == 0 {
        return Err(Error::param(MODULE, "panel grand total is zero"));
    }
    let exact = totals.iter().map(|&t| t as f64 / grand as f64).collect();
    let percent = totals
        .iter()
        .map(|&t| ((200 * t + grand) / (2 * grand)) as u32)
        .collect();
    Ok(PanelWeights { totals, exact, percent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    pub fn of(xs: &[f64]) -> Self {
        let m = mean(xs);
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        Self { mean: m, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub epoch: usize,
    pub config_hash: String,
    pub seed: u64,
    pub outfits: usize,
    pub candidates: usize,
    pub compatibility: MetricStat,
    pub personalization: MetricStat,
    pub category_accuracy: MetricStat,
    pub diversity: MetricStat,
    /// Fixed-range aggregate of the three expert channels.
    pub expert_score: MetricStat,
    pub quality: MetricStat,
    pub compatibility_histogram: Histogram,
}

impl EvalReport {
    /// `(metric, value)` rows for the flat CSV.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (name, m) in [
            ("compatibility", self.compatibility),
            ("personalization", self.personalization),
            ("category_accuracy", self.category_accuracy),
            ("diversity", self.diversity),
            ("expert_score", self.expert_score),
            ("quality", self.quality),
        ] {
            out.push((format!("{name}_mean"), m.mean));
            out.push((format!("{name}_std"), m.std));
        }
        out.push(("compatibility_outer_mass".into(), self.compatibility_histogram.outer_mass));
        out
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,metric,value\n");
        for (k, v) in self.rows() {
            s.push_str(&format!("{},{k},{v:?}\n", self.epoch));
        }
        s
    }
}

/// Everything held fixed across evaluations of different checkpoints.
pub struct EvalContext<'a> {
    pub world: &'a World,
    pub heldout: &'a [usize],
    pub heldout_vbpr: &'a VbprModel,
    pub bench: &'a ExpertBench,
    pub sched: &'a NoiseSchedule,
    pub eta: f64,
    pub candidates: usize,
    pub seed: u64,
    pub config_hash: &'a str,
    pub bins: usize,
}

struct OutfitEval {
    compat: Vec<f64>,
    personal: Vec<f64>,
    correct: Vec<f64>,
    expert: Vec<f64>,
    quality: Vec<f64>,
    diversity: f64,
}

/// Samples candidates for every held-out outfit with seeds that do not
/// depend on the checkpoint, so epochs are compared on identical noise.
pub fn evaluate(params: &DenoiserParams, ctx: &EvalContext, epoch: usize) -> Result<EvalReport> {
    nonempty(ctx.heldout)?;
    let clf = NearestPrototype {
        prototypes: ctx.world.prototypes.clone(),
    };
    let enc = &ctx.world.encoders;
    let per = par::try_map_range(ctx.heldout.len(), |i| -> Result<OutfitEval> {
        let o = ctx.heldout[i];
        let task = build_task(ctx.world, o, ctx.eta, ctx.seed)?;
        let seed = rng::derive(ctx.seed, &[rng::tag("eval"), o as u64]);
        let trajs = sample_candidates(params, &task.condition, ctx.candidates, ctx.sched, seed)?;
        let verdicts = ctx.bench.score(ctx.world, &task, &trajs)?;
        let finals: Vec<Vec<f64>> = trajs.iter().map(|t| t.final_latent().to_vec()).collect();
        let mut ev = OutfitEval {
            compat: Vec::new(),
            personal: Vec::new(),
            correct: Vec::new(),
            expert: Vec::new(),
            quality: Vec::new(),
            diversity: pairwise_mean_distance(&finals)?,
        };
        for (x, v) in finals.iter().zip(&verdicts) {
            ev.compat.push(sigmoid(ctx.heldout_vbpr.score(x, &task.partial)?));
            ev.personal.push(personalization_score(&enc.encode(x)?, &task.condition.history)?);
            ev.correct.push((clf.classify(x)? == task.slot) as u8 as f64);
            ev.expert.push(ctx.bench.fixed_range_score(v));
            ev.quality.push(v.s_q as f64);
        }
        Ok(ev)
    })?;
    let gather = |f: fn(&OutfitEval) -> &Vec<f64>| -> Vec<f64> { per.iter().flat_map(|e| f(e).iter().copied()).collect() };
    let compat = gather(|e| &e.compat);
    let report = EvalReport {
        version: REPORT_VERSION,
        epoch,
        config_hash: ctx.config_hash.to_string(),
        seed: ctx.seed,
        outfits: ctx.heldout.len(),
        candidates: ctx.candidates,
        compatibility: MetricStat::of(&compat),
        personalization: MetricStat::of(&gather(|e| &e.personal)),
        category_accuracy: MetricStat::of(&gather(|e| &e.correct)),
        diversity: MetricStat::of(&per.iter().map(|e| e.diversity).collect::<Vec<_>>()),
        expert_score: MetricStat::of(&gather(|e| &e.expert)),
        quality: MetricStat::of(&gather(|e| &e.quality)),
        compatibility_histogram: score_distribution(&compat, ctx.bins)?,
    };
    for (name, v) in report.rows() {
        if !v.is_finite() {
            return Err(Error::param(MODULE, format!("metric {name} is not finite")));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_weight_examples() {
        let m = vec![vec![17, 18, 15, 21]];
        let w = panel_weights(&m).unwrap();
        assert_eq!(w.percent, vec![24, 25, 21, 30]);
        assert!((w.exact.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(panel_weights(&[vec![3]]).unwrap().percent, vec![100]);
        assert_eq!(panel_weights(&[vec![2, 2, 2, 2], vec![1, 1, 1, 1]]).unwrap().percent, vec![25; 4]);
        assert!(panel_weights(&[vec![1, 0]]).is_err());
        assert!(panel_weights(&[]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let grid: Vec<f64> = (0..100).map(|i| i as f64 + 0.5).collect();
        let h = score_distribution(&grid, 10).unwrap();
        assert_eq!(h.counts, vec![10; 10]);
        assert!((h.outer_mass - 0.2).abs() < 1e-15);

        let h = score_distribution(&[3.0; 7], 20).unwrap();
        assert_eq!(h.counts[10], 7);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
        assert_eq!(h.outer_mass, 0.0);
        assert!(score_distribution(&[], 20).is_err());
    }

    #[test]
    fn diversity_examples() {
        let same = vec![vec![1.0, 2.0]; 3];
        assert_eq!(eval_diversity(&[same]).unwrap(), 0.0);
        assert_eq!(eval_diversity(&[vec![vec![0.0, 0.0], vec![2.0, 0.0]]]).unwrap(), 2.0);
        assert!(eval_diversity(&[vec![vec![0.0]]]).is_err());
    }

    #[test]
    fn category_accuracy_examples() {
        let clf = NearestPrototype {
            prototypes: vec![vec![0.0, 0.0], vec![5.0, 5.0]],
        };
        let p0 = clf.prototypes[0].clone();
        let p1 = clf.prototypes[1].clone();
        assert_eq!(eval_category_accuracy(&clf, &[(&p0, 0), (&p1, 1)]).unwrap(), 1.0);
        assert_eq!(eval_category_accuracy(&clf, &[(&p1, 0), (&p0, 1)]).unwrap(), 0.0);
    }

    #[test]
    fn personalization_examples() {
        let enc = EncoderBank {
            item_encoder: crate::denoiser::Dense::identity(2),
            prompt_table: vec![vec![0.0; 2]],
            mutual_mlp: vec![],
        };
        let h = [0.6, 0.8];
        assert!((eval_personalization(&[(&h, &h)], &enc).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(eval_personalization(&[(&[0.8, -0.6], &h)], &enc).unwrap(), 0.0);
    }
}
