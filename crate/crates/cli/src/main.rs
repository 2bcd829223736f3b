//! Command-line front end.
//!
//! Failures print one line to stderr, `error[<code>]: <message>`, and exit
//! with a status chosen by the kind of failure:
//!
//! | status | meaning                                        |
//! |--------|------------------------------------------------|
//! | 0      | success                                        |
//! | 2      | bad command line (reported by the parser)      |
//! | 3      | invalid configuration or mismatched artifacts  |
//! | 4      | missing, corrupt or wrong-version file         |
//! | 5      | malformed or inconsistent input data           |
//! | 6      | numerical failure during training or sampling  |
//! | 7      | external quality scorer failure                |
//! | 1      | anything else                                  |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use outfit_dpo::checkpoint::Checkpoint;
use outfit_dpo::config::RunConfig;
use outfit_dpo::eval::panel_weights;
use outfit_dpo::experts::external::ENDPOINT_ENV;
use outfit_dpo::pipeline::{self, RunDir};
use outfit_dpo::world::{export_external, load_world, World};
use outfit_dpo::{par, Error, Result};

#[derive(Parser)]
#[command(name = "outfit-dpo", version, about = "Preference fine-tuning of a toy outfit diffusion generator")]
struct Cli {
    /// Worker threads for sampling, scoring and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run directory; every output goes under it.
    #[arg(long)]
    run: PathBuf,
    /// TOML config file (default: <run>/config.toml when present).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set eta=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// External quality scorer `host:port` (the environment variable
    /// OUTFIT_DPO_SCORER takes precedence).
    #[arg(long)]
    scorer: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate (or ingest) a world and write the effective config.
    GenWorld {
        #[command(flatten)]
        common: Common,
        /// Directory with items.jsonl, outfits.jsonl and users.jsonl.
        #[arg(long)]
        ingest: Option<PathBuf>,
    },
    /// Pretrain the base denoiser.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Train the compatibility expert and the held-out evaluation model.
    TrainExperts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Preference fine-tuning with per-epoch checkpoints and reports.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        experts: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue after the latest epoch checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the held-out split and print the report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        experts: Option<PathBuf>,
    },
    /// Aggregate per-epoch reports into reports/summary.csv.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Every stage from world generation to the summary.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Write the world as items/outfits/users line files.
    ExportWorld {
        #[arg(long)]
        run: PathBuf,
        /// Subdirectory of the run directory to write into.
        #[arg(long, default_value = "export")]
        into: String,
    },
    /// Criterion weights from an experts x criteria score matrix; one
    /// comma-separated row per expert.
    PanelWeights {
        #[arg(required = true)]
        rows: Vec<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigMismatch(..) => 3,
        Error::Io { .. } | Error::Corrupt(_) | Error::Version { .. } | Error::Json(_) => 4,
        Error::Integrity { .. } | Error::Schema { .. } | Error::EmptyInput { .. } | Error::MissingHistory => 5,
        Error::Divergence { .. } | Error::NumericBlowup { .. } | Error::Singularity { .. } => 6,
        Error::Scorer(_) => 7,
        _ => 1,
    }
}

impl Common {
    fn load(&self, extra: &[String]) -> Result<(RunConfig, RunDir)> {
        let run = RunDir::create(&self.run)?;
        let default_file = run.config();
        let file = self
            .config
            .clone()
            .or_else(|| default_file.exists().then_some(default_file));
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(s) = &self.scorer {
            overrides.push(format!("scorer_endpoint=\"{s}\""));
        }
        overrides.extend_from_slice(extra);
        let cfg = RunConfig::load(file.as_deref(), &overrides)?;
        Ok((cfg, run))
    }
}

fn world_at(run: &RunDir, explicit: &Option<PathBuf>) -> Result<World> {
    load_world(explicit.as_deref().unwrap_or(&run.world()))
}

fn experts_at(run: &RunDir, explicit: &Option<PathBuf>) -> Result<pipeline::ExpertModels> {
    pipeline::load_experts(explicit.as_deref().unwrap_or(&run.experts()))
}

fn write_config(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    outfit_dpo::binio::write_file(&run.config(), cfg.to_toml().as_bytes())
}

fn parse_rows(rows: &[String]) -> Result<Vec<Vec<u64>>> {
    rows.iter()
        .map(|r| {
            r.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("'{v}' is not a non-negative integer")))
                })
                .collect()
        })
        .collect()
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenWorld { common, ingest } => {
            let (cfg, run) = common.load(&[])?;
            write_config(&cfg, &run)?;
            let w = pipeline::gen_world(&cfg, &run, ingest.as_deref())?;
            println!(
                "world: {} items, {} outfits, {} users -> {}",
                w.items.len(),
                w.outfits.len(),
                w.users.len(),
                run.world().display()
            );
        }
        Cmd::Pretrain { common, world } => {
            let (cfg, run) = common.load(&[])?;
            let w = world_at(&run, &world)?;
            let (ck, trace) = pipeline::pretrain_base(&cfg, &w)?;
            ck.save(&run.base_checkpoint())?;
            let tail = &trace[trace.len().saturating_sub(100)..];
            let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            println!("pretrained {} steps, final loss {mean:.4} -> {}", trace.len(), run.base_checkpoint().display());
        }
        Cmd::TrainExperts { common, world } => {
            let (cfg, run) = common.load(&[])?;
            let w = world_at(&run, &world)?;
            let m = pipeline::train_experts(&cfg, &w)?;
            pipeline::save_experts(&m, &run.experts())?;
            println!(
                "experts: ranking accuracy {:.4} (train split), {:.4} (held-out model) -> {}",
                m.expert_accuracy,
                m.heldout_accuracy,
                run.experts().display()
            );
        }
        Cmd::Finetune {
            common,
            world,
            base,
            experts,
            epochs,
            resume,
        } => {
            let extra: Vec<String> = epochs.map(|e| format!("epochs={e}")).into_iter().collect();
            let (cfg, run) = common.load(&extra)?;
            let w = world_at(&run, &world)?;
            let m = experts_at(&run, &experts)?;
            let base = base.unwrap_or_else(|| run.base_checkpoint());
            let out = pipeline::finetune(&cfg, &run, &w, &base, &m, resume)?;
            for r in &out.reports {
                println!(
                    "epoch {}: {} pairs, {} updates, mean loss {}",
                    r.epoch,
                    r.pairs,
                    r.updates,
                    r.loss_mean.map_or("-".into(), |v| format!("{v:.6}"))
                );
            }
            println!("final checkpoint -> {}", run.final_checkpoint().display());
        }
        Cmd::Eval {
            common,
            checkpoint,
            world,
            experts,
        } => {
            let (cfg, run) = common.load(&[])?;
            let w = world_at(&run, &world)?;
            let m = experts_at(&run, &experts)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let rep = pipeline::evaluate_params(&cfg, &w, &m, &ck.params, ck.epochs_done)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Cmd::Report { run } => {
            let run = RunDir { root: run };
            print!("{}", pipeline::report(&run)?);
        }
        Cmd::Run { common } => {
            let (cfg, run) = common.load(&[])?;
            let out = pipeline::run_all(&cfg, &run.root)?;
            for ev in &out.evals {
                println!(
                    "epoch {}: compatibility {:.4}, expert score {:.4}, personalization {:.4}",
                    ev.epoch, ev.compatibility.mean, ev.expert_score.mean, ev.personalization.mean
                );
            }
            println!("summary -> {}", run.summary().display());
        }
        Cmd::ExportWorld { run, into } => {
            let run = RunDir { root: run };
            let w = load_world(&run.world())?;
            let dir = run.root.join(Path::new(&into));
            export_external(&w, &dir)?;
            println!("exported -> {}", dir.display());
        }
        Cmd::PanelWeights { rows } => {
            let pw = panel_weights(&parse_rows(&rows)?)?;
            println!("criterion,total,weight,percent");
            for (i, ((t, w), p)) in pw.totals.iter().zip(&pw.exact).zip(&pw.percent).enumerate() {
                println!("{},{t},{w:?},{p}", i + 1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if std::env::var_os(ENDPOINT_ENV).is_some() {
        log::info!("external scorer endpoint taken from {ENDPOINT_ENV}");
    }
    match par::with_threads(cli.threads, || execute(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}
