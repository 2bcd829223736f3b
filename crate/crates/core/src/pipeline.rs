//! End-to-end stages over a run directory.
//!
//! ```text
//! <run>/config.toml           effective configuration
//! <run>/world/world.json      world (header line + body line)
//! <run>/checkpoints/base.ckpt pretrained denoiser
//! <run>/checkpoints/experts.json
//! <run>/checkpoints/epoch-NNN.ckpt, final.ckpt
//! <run>/trajectories/epoch-NNN.traj
//! <run>/feedback/epoch-NNN.jsonl
//! <run>/reports/epoch-NNN.json, eval-NNN.json, eval-NNN.csv, summary.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio::write_file;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::denoiser::{pretrain, DenoiserParams, TrainingExample};
use crate::dpo::PolicyPair;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalContext, EvalReport};
use crate::experts::{bpr_train, ranking_accuracy, ExternalScorer, QualityExpert, VbprModel};
use crate::sampler::Condition;
use crate::training::{run_training, EpochContext, EpochReport, ExpertBench};
use crate::world::{generate_world, ingest_external, load_world, save_world, World};
use crate::rng;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["world", "checkpoints", "trajectories", "feedback", "reports"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn world(&self) -> PathBuf {
        self.root.join("world/world.json")
    }
    pub fn base_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/base.ckpt")
    }
    pub fn experts(&self) -> PathBuf {
        self.root.join("checkpoints/experts.json")
    }
    pub fn epoch_checkpoint(&self, e: usize) -> PathBuf {
        self.root.join(format!("checkpoints/epoch-{e:03}.ckpt"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/final.ckpt")
    }
    pub fn trajectories(&self, e: usize) -> PathBuf {
        self.root.join(format!("trajectories/epoch-{e:03}.traj"))
    }
    pub fn feedback(&self, e: usize) -> PathBuf {
        self.root.join(format!("feedback/epoch-{e:03}.jsonl"))
    }
    pub fn epoch_report(&self, e: usize) -> PathBuf {
        self.root.join(format!("reports/epoch-{e:03}.json"))
    }
    pub fn eval_report(&self, e: usize) -> PathBuf {
        self.root.join(format!("reports/eval-{e:03}.json"))
    }
    pub fn eval_csv(&self, e: usize) -> PathBuf {
        self.root.join(format!("reports/eval-{e:03}.csv"))
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("reports/summary.csv")
    }

    /// Highest epoch with a checkpoint, if any.
    pub fn latest_epoch(&self) -> Result<Option<usize>> {
        let dir = self.root.join("checkpoints");
        let mut best = None;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let name = entry.map_err(|e| Error::io(&dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix("epoch-").and_then(|s| s.strip_suffix(".ckpt")) {
                if let Ok(n) = n.parse::<usize>() {
                    best = best.max(Some(n));
                }
            }
        }
        Ok(best)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn warn_on_hash(what: &str, found: &str, expected: &str) {
    if found != expected {
        log::warn!("{what} was produced under config {found}, current config is {expected}");
    }
}

pub fn build_world(cfg: &RunConfig) -> Result<World> {
    generate_world(&cfg.world(), cfg.seed)
}

pub fn ingest_world(cfg: &RunConfig, dir: &Path) -> Result<World> {
    ingest_external(&dir.join("items.jsonl"), &dir.join("outfits.jsonl"), &dir.join("users.jsonl"), cfg.seed)
}

pub fn gen_world(cfg: &RunConfig, run: &RunDir, external: Option<&Path>) -> Result<World> {
    let world = match external {
        Some(dir) => ingest_world(cfg, dir)?,
        None => build_world(cfg)?,
    };
    save_world(&world, &run.world(), &cfg.hash())?;
    Ok(world)
}

pub fn split(cfg: &RunConfig, world: &World) -> Result<(Vec<usize>, Vec<usize>)> {
    world.split(cfg.heldout_fraction, rng::derive(cfg.seed, &[rng::tag("split")]))
}

/// One example per (outfit, slot): the true item given the rest of the
/// outfit and the matched user's history.
pub fn pretraining_set(world: &World, outfits: &[usize], eta: f64) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(outfits.len() * world.n_categories());
    for &o in outfits {
        let u = world.user_for_outfit(o)?;
        for k in 0..world.n_categories() {
            let item = world.outfit_item(o, k)?;
            let cond = Condition::build(
                &world.encoders,
                &world.partial_outfit(o, k)?,
                &world.user_history(u, k)?,
                k,
                eta,
                &world.outfits[o].id,
                &world.users[u].id,
            )?;
            out.push(TrainingExample {
                x0: world.encoders.encode(&item.embedding)?,
                cond,
            });
        }
    }
    Ok(out)
}

pub fn pretrain_base(cfg: &RunConfig, world: &World) -> Result<(Checkpoint, Vec<f64>)> {
    let sched = cfg.schedule()?;
    let (train, _) = split(cfg, world)?;
    let data = pretraining_set(world, &train, cfg.eta)?;
    let init = DenoiserParams::new(cfg.shape(), rng::derive(cfg.seed, &[rng::tag("denoiser-init")]));
    let (params, trace) = pretrain(&init, &data, &sched, &cfg.pretrain())?;
    Ok((Checkpoint::new(params, &sched, cfg.seed, &cfg.hash()), trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModels {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Feedback expert, trained on the training split.
    pub expert: VbprModel,
    /// Evaluation model, trained on the held-out split.
    pub heldout: VbprModel,
    /// Ranking accuracy of each model on fresh negatives for its own split.
    pub expert_accuracy: f64,
    pub heldout_accuracy: f64,
    pub expert_trace: Vec<f64>,
    pub heldout_trace: Vec<f64>,
}

pub fn train_experts(cfg: &RunConfig, world: &World) -> Result<ExpertModels> {
    let (train, held) = split(cfg, world)?;
    let fit = |outfits: &[usize], role: &str| -> Result<(VbprModel, Vec<f64>, f64)> {
        let triples = world.bpr_triples(outfits, cfg.bpr_negatives, rng::derive(cfg.seed, &[rng::tag(role)]))?;
        let init = VbprModel::new(world.dim(), cfg.vbpr_dim, rng::derive(cfg.seed, &[rng::tag(role), 1]));
        let (model, trace) = bpr_train(&init, &triples, &cfg.bpr(role))?;
        let probe = world.bpr_triples(outfits, cfg.bpr_negatives, rng::derive(cfg.seed, &[rng::tag(role), 2]))?;
        let acc = ranking_accuracy(&model, &probe)?;
        Ok((model, trace, acc))
    };
    let (expert, expert_trace, expert_accuracy) = fit(&train, "expert-vbpr")?;
    let (heldout, heldout_trace, heldout_accuracy) = fit(&held, "heldout-vbpr")?;
    Ok(ExpertModels {
        version: ARTIFACT_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        expert,
        heldout,
        expert_accuracy,
        heldout_accuracy,
        expert_trace,
        heldout_trace,
    })
}

pub fn save_experts(models: &ExpertModels, path: &Path) -> Result<()> {
    write_json(path, models)
}

pub fn load_experts(path: &Path) -> Result<ExpertModels> {
    let m: ExpertModels = read_json(path)?;
    if m.version != ARTIFACT_VERSION {
        return Err(Error::Version {
            what: path.display().to_string(),
            found: m.version,
            expected: ARTIFACT_VERSION,
        });
    }
    Ok(m)
}

pub fn expert_bench(cfg: &RunConfig, world: &World, models: &ExpertModels) -> Result<ExpertBench> {
    let quality = QualityExpert {
        rubric: world.quality_rubric()?,
        external: ExternalScorer::resolve(cfg.scorer_endpoint.as_deref(), cfg.scorer_timeout()),
        on_failure: cfg.scorer_failure,
    };
    Ok(ExpertBench {
        quality,
        compatibility: models.expert.clone(),
        weights: cfg.weights(),
    })
}

fn eval_seed(cfg: &RunConfig) -> u64 {
    rng::derive(cfg.seed, &[rng::tag("eval")])
}

pub fn evaluate_params(
    cfg: &RunConfig,
    world: &World,
    models: &ExpertModels,
    params: &DenoiserParams,
    epoch: usize,
) -> Result<EvalReport> {
    let (_, held) = split(cfg, world)?;
    let bench = expert_bench(cfg, world, models)?;
    let sched = cfg.schedule()?;
    let hash = cfg.hash();
    let ctx = EvalContext {
        world,
        heldout: &held,
        heldout_vbpr: &models.heldout,
        bench: &bench,
        sched: &sched,
        eta: cfg.eta,
        candidates: cfg.eval_candidates,
        seed: eval_seed(cfg),
        config_hash: &hash,
        bins: cfg.histogram_bins,
    };
    evaluate(params, &ctx, epoch)
}

fn write_eval(run: &RunDir, report: &EvalReport) -> Result<()> {
    write_json(&run.eval_report(report.epoch), report)?;
    write_file(&run.eval_csv(report.epoch), report.csv().as_bytes())
}

#[derive(Serialize)]
struct FeedbackHeader<'a> {
    format: &'a str,
    version: u32,
    config_hash: &'a str,
    seed: u64,
    epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutput {
    pub reports: Vec<EpochReport>,
    pub evals: Vec<EvalReport>,
}

/// Fine-tunes from `base_path`. With `resume`, continues after the latest
/// epoch checkpoint in the run directory. With zero epochs the base file
/// is copied unchanged to `final.ckpt`.
pub fn finetune(
    cfg: &RunConfig,
    run: &RunDir,
    world: &World,
    base_path: &Path,
    models: &ExpertModels,
    resume: bool,
) -> Result<FinetuneOutput> {
    let hash = cfg.hash();
    if cfg.epochs == 0 {
        let bytes = fs::read(base_path).map_err(|e| Error::io(base_path, e))?;
        Checkpoint::from_bytes(&bytes, &base_path.display().to_string())?;
        write_file(&run.final_checkpoint(), &bytes)?;
        return Ok(FinetuneOutput {
            reports: Vec::new(),
            evals: Vec::new(),
        });
    }
    let base = Checkpoint::load(base_path)?;
    warn_on_hash("base checkpoint", &base.config_hash, &hash);
    warn_on_hash("expert models", &models.config_hash, &hash);
    let sched = cfg.schedule()?;
    if base.schedule()? != sched {
        return Err(Error::ConfigMismatch(
            "base checkpoint schedule".into(),
            "configured schedule".into(),
        ));
    }
    let dpo = cfg.dpo();
    let (pol, done) = match (resume, run.latest_epoch()?) {
        (true, Some(e)) => {
            let ck = Checkpoint::load(&run.epoch_checkpoint(e))?;
            let pol = PolicyPair::resume(ck.params)?;
            if *pol.reference() != base.params.base_only() {
                return Err(Error::AdapterState("resumed checkpoint does not extend the base network".into()));
            }
            (pol, ck.epochs_done)
        }
        _ => (
            PolicyPair::new(&base.params, dpo.adapter_rank, dpo.adapter_scale, rng::derive(dpo.seed, &[rng::tag("adapter")]))?,
            0,
        ),
    };

    let mut evals = Vec::new();
    if done == 0 {
        let e0 = evaluate_params(cfg, world, models, pol.reference(), 0)?;
        write_eval(run, &e0)?;
        evals.push(e0);
    }
    let (train, _) = split(cfg, world)?;
    let bench = expert_bench(cfg, world, models)?;
    let ctx = EpochContext {
        world,
        train: &train,
        bench: &bench,
        sched: &sched,
        cfg: &dpo,
        eta: cfg.eta,
        config_hash: &hash,
    };
    let (pol, reports) = run_training(pol, &ctx, done, |pol, out| {
        let e = out.report.epoch;
        out.trajectories.save(&run.trajectories(e))?;
        let mut fb = serde_json::to_string(&FeedbackHeader {
            format: "outfit-dpo-feedback",
            version: ARTIFACT_VERSION,
            config_hash: &hash,
            seed: cfg.seed,
            epoch: e,
        })?;
        fb.push('\n');
        for r in &out.feedback {
            fb.push_str(&serde_json::to_string(r)?);
            fb.push('\n');
        }
        write_file(&run.feedback(e), fb.as_bytes())?;
        write_json(&run.epoch_report(e), &out.report)?;
        let ev = evaluate_params(cfg, world, models, &pol.theta, e)?;
        write_eval(run, &ev)?;
        evals.push(ev);
        let ck = Checkpoint {
            epochs_done: e,
            ..Checkpoint::new(pol.theta.clone(), &sched, cfg.seed, &hash)
        };
        ck.save(&run.epoch_checkpoint(e))
    })?;
    let ck = Checkpoint {
        epochs_done: cfg.epochs,
        ..Checkpoint::new(pol.theta, &sched, cfg.seed, &hash)
    };
    ck.save(&run.final_checkpoint())?;
    Ok(FinetuneOutput { reports, evals })
}

/// Builds `reports/summary.csv` from every per-epoch report in the run.
/// Fails if the reports were written under different configurations.
pub fn report(run: &RunDir) -> Result<String> {
    let dir = run.root.join("reports");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".json") && (n.starts_with("eval-") || n.starts_with("epoch-")))
        .collect();
    names.sort();
    let mut evals: Vec<EvalReport> = Vec::new();
    let mut epochs: Vec<EpochReport> = Vec::new();
    let mut hash: Option<(String, String)> = None;
    for n in &names {
        let path = dir.join(n);
        let h = if n.starts_with("eval-") {
            let r: EvalReport = read_json(&path)?;
            let h = r.config_hash.clone();
            evals.push(r);
            h
        } else {
            let r: EpochReport = read_json(&path)?;
            let h = r.config_hash.clone();
            epochs.push(r);
            h
        };
        match &hash {
            None => hash = Some((h, n.clone())),
            Some((first, from)) if *first != h => {
                return Err(Error::ConfigMismatch(format!("{from} ({first})"), format!("{n} ({h})")));
            }
            _ => {}
        }
    }
    if evals.is_empty() {
        return Err(Error::EmptyInput { module: "cli" });
    }
    let metric_names: Vec<String> = evals[0].rows().into_iter().map(|(k, _)| k).collect();
    let mut out = String::from("epoch,config_hash");
    for m in &metric_names {
        out.push(',');
        out.push_str(m);
    }
    out.push_str(",pairs,updates,loss_mean\n");
    evals.sort_by_key(|r| r.epoch);
    for ev in &evals {
        out.push_str(&format!("{},{}", ev.epoch, ev.config_hash));
        for (_, v) in ev.rows() {
            out.push_str(&format!(",{v:?}"));
        }
        match epochs.iter().find(|r| r.epoch == ev.epoch) {
            Some(r) => out.push_str(&format!(
                ",{},{},{}\n",
                r.pairs,
                r.updates,
                r.loss_mean.map_or(String::new(), |v| format!("{v:?}"))
            )),
            None => out.push_str(",,,\n"),
        }
    }
    write_file(&run.summary(), out.as_bytes())?;
    Ok(out)
}

/// Every stage in order, as the CLI would run them.
pub fn run_all(cfg: &RunConfig, root: &Path) -> Result<FinetuneOutput> {
    let run = RunDir::create(root)?;
    write_file(&run.config(), cfg.to_toml().as_bytes())?;
    gen_world(cfg, &run, None)?;
    let world = load_world(&run.world())?;
    let (base, _) = pretrain_base(cfg, &world)?;
    base.save(&run.base_checkpoint())?;
    let models = train_experts(cfg, &world)?;
    save_experts(&models, &run.experts())?;
    let out = finetune(cfg, &run, &world, &run.base_checkpoint(), &models, false)?;
    report(&run)?;
    Ok(out)
}
