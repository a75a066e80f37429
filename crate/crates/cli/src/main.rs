use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use drivestyle_core::learn::{self, checkpoint, Model, StyleEmbedding};
use drivestyle_core::metrics::{read_eval_csv, write_eval_csv, Report};
use drivestyle_core::pipeline::{self, Condition, PersonaSpec, Study, DEFAULT_SEED};
use drivestyle_core::sim::{DemonstrationTrace, Scenario};
use drivestyle_core::{stylespace, Config, Error};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "drivestyle", version, about = "Learn, steer and evaluate personalized driving styles")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; defaults are used for missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, as in `--set learn.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.FIELD=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic demonstrations.
    GenData {
        /// Number of personas with ADB scores spread evenly over [11, 55].
        #[arg(long, conflicts_with = "adb")]
        personas: Option<usize>,
        /// Explicit ADB scores, comma separated.
        #[arg(long, value_delimiter = ',')]
        adb: Vec<f64>,
        #[arg(long, default_value_t = pipeline::TRAIN_DRIVES)]
        demos: usize,
        /// Index of the first drive; evaluation drives start at 100.
        #[arg(long, default_value_t = 0)]
        first_demo: u64,
        #[arg(long, default_value = "p")]
        prefix: String,
        /// Duration of each drive in seconds.
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of demonstrations.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log; defaults to the checkpoint path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit an embedding for a new driver with the network frozen.
    FitUser {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Move an embedding along the aggression gradient.
    Shift {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        delta_adb: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the ellipse perpendicular to the aggression gradient.
    Perp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        angle_deg: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive an embedding under one of the study conditions.
    Rollout {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        /// mimic, aggressive, cautious or perp.
        #[arg(long, default_value = "mimic")]
        condition: String,
        #[arg(long, allow_hyphen_values = true)]
        angle_deg: Option<f64>,
        /// Shift for aggressive and cautious; defaults to the configured shift.
        #[arg(long)]
        delta_adb: Option<f64>,
        /// Replay the scenario of this demonstration.
        #[arg(long, conflicts_with = "duration_s")]
        replay: Option<PathBuf>,
        /// Length of a fresh scenario seeded by `--seed`.
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved rollouts, or run the full test protocol on a model.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory of rollouts to score against `--demos`.
        #[arg(long, requires = "demos", conflicts_with = "model")]
        rollouts: Option<PathBuf>,
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Ellipse samples per driver in the full protocol.
        #[arg(long, default_value_t = 12)]
        perp_angles: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize an evaluation CSV as JSON.
    Report {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An embedding file: the embedding, its predicted score and the hash of the
/// config that produced it.
#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    config_hash: String,
    s_hat: f64,
    embedding: StyleEmbedding,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAVERIC_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::TrainingDiverged { .. }) => 4,
        _ => 3,
    }
}

fn config(common: &Common) -> anyhow::Result<Config> {
    let base = match &common.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    let cfg = base.with_overrides(&common.overrides)?;
    cfg.validate()?;
    log::debug!("config hash {}", cfg.hash());
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.common.seed;
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::GenData { personas, adb, demos, first_demo, prefix, duration_s, out } => {
            let scores = match personas {
                Some(n) => pipeline::evenly_spaced_scores(n),
                None if !adb.is_empty() => adb,
                None => bail!(Error::InvalidArgument("pass --personas or --adb".into())),
            };
            let roster = pipeline::roster(&scores, seed, &prefix)?;
            gen_data(&roster, first_demo, demos, duration_s, &cfg, &out)
        }
        Command::Train { data, out, log } => {
            let traces = DemonstrationTrace::read_dir(&data).with_context(|| format!("reading {}", data.display()))?;
            log::info!("training on {} traces", traces.len());
            let outcome = match learn::train(&traces, &cfg, seed) {
                Err(Error::TrainingDiverged { epoch, last }) => {
                    let path = out.with_extension("diverged.json");
                    checkpoint::save(&last, &cfg, &path)?;
                    log::error!("last finite parameters saved to {}", path.display());
                    return Err(Error::TrainingDiverged { epoch, last }.into());
                }
                r => r?,
            };
            checkpoint::save(&outcome.model, &cfg, &out)?;
            let log_path = log.unwrap_or_else(|| out.with_extension("log.csv"));
            learn::write_log_csv(&outcome.log, &cfg.hash(), BufWriter::new(File::create(&log_path)?))?;
            log::info!("kept epoch {} of {}; wrote {}", outcome.best_epoch, outcome.log.len(), out.display());
            Ok(())
        }
        Command::FitUser { model, trace, out } => {
            let model = load_model(&model, &cfg)?;
            let trace = DemonstrationTrace::read(&trace)?;
            let fit = learn::fit_new_user(&model, &trace, &cfg, seed)?;
            save_embedding(&model, fit, &cfg, &out)
        }
        Command::Shift { model, embedding, delta_adb, out } => {
            let model = load_model(&model, &cfg)?;
            let e = load_embedding(&embedding)?;
            let w = stylespace::shift_style(&model, &e.w, delta_adb)?;
            save_embedding(&model, StyleEmbedding { w, mu: w, ..e }, &cfg, &out)
        }
        Command::Perp { model, embedding, angle_deg, out } => {
            let model = load_model(&model, &cfg)?;
            let e = load_embedding(&embedding)?;
            let w = stylespace::perpendicular_sample(&model, &e.w, &model.embeddings, angle_deg.to_radians())?;
            save_embedding(&model, StyleEmbedding { w, mu: w, ..e }, &cfg, &out)
        }
        Command::Rollout { model, embedding, condition, angle_deg, delta_adb, replay, duration_s, out } => {
            let model = load_model(&model, &cfg)?;
            let e = load_embedding(&embedding)?;
            let condition = Condition::parse(&condition, angle_deg)?;
            let mut cfg = cfg;
            if let Some(d) = delta_adb {
                cfg.stylespace.condition_shift_adb = d;
            }
            let w = pipeline::condition_embedding(&model, &e.w, condition, &cfg)?;
            let demo = match replay {
                Some(path) => DemonstrationTrace::read(&path)?,
                None => fresh_scenario(&e, seed, duration_s.unwrap_or(pipeline::EPISODE_S), &cfg)?,
            };
            let episode = pipeline::replay(&model, &w, &demo, &condition.label(), &cfg)?;
            log::info!(
                "{}: {} steps, {} collisions, {} off-road steps",
                condition.label(),
                episode.trace.records.len(),
                episode.collisions,
                episode.off_road_steps
            );
            episode.trace.write(&out)?;
            Ok(())
        }
        Command::Eval { model, rollouts, demos, perp_angles, out } => {
            let rows = match (model, rollouts, demos) {
                (_, Some(rollouts), Some(demos)) => {
                    let rollouts = DemonstrationTrace::read_dir(&rollouts)?;
                    let demos = DemonstrationTrace::read_dir(&demos)?;
                    pipeline::evaluate_rollouts(&rollouts, &demos, &cfg)?
                }
                (Some(model), None, _) => {
                    let model = load_model(&model, &cfg)?;
                    Study::standard(seed)?.evaluate(&model, &cfg, seed, perp_angles)?.rows
                }
                _ => bail!(Error::InvalidArgument("pass --model, or --rollouts with --demos".into())),
            };
            write_eval_csv(&rows, BufWriter::new(File::create(&out)?))?;
            log::info!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Report { eval, out } => {
            let rows = read_eval_csv(File::open(&eval)?)?;
            let report = Report::from_rows(&rows);
            fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            Ok(())
        }
    }
}

fn gen_data(
    roster: &[PersonaSpec],
    first: u64,
    count: usize,
    duration_s: Option<f64>,
    cfg: &Config,
    out: &Path,
) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    for p in roster {
        for drive in first..first + count as u64 {
            let trace = match duration_s {
                None => p.demonstrate(drive, cfg)?,
                Some(d) => {
                    let params = drivestyle_core::personas::make_persona(p.adb_score, p.seed, cfg)?;
                    let scenario = Scenario { duration_s: d, ..p.scenario(drive, cfg) };
                    let mut t = drivestyle_core::personas::generate_demonstrations(&params, &scenario, cfg)?;
                    t.meta.config_hash = cfg.hash();
                    t
                }
            };
            let path = out.join(format!("{}_d{drive:03}.jsonl", p.persona_id));
            trace.write(&path)?;
            log::debug!("wrote {}", path.display());
        }
    }
    let roster_file = serde_json::json!({ "config_hash": cfg.hash(), "personas": roster });
    fs::write(out.join("personas.json"), serde_json::to_string_pretty(&roster_file)? + "\n")?;
    log::info!("wrote {} traces to {}", roster.len() * count, out.display());
    Ok(())
}

/// A scenario no demonstration has driven yet, wrapped as an empty trace.
fn fresh_scenario(e: &StyleEmbedding, seed: u64, duration_s: f64, cfg: &Config) -> anyhow::Result<DemonstrationTrace> {
    if !(duration_s > 0.0) {
        bail!(Error::InvalidArgument(format!("duration must be positive, got {duration_s}")));
    }
    Ok(DemonstrationTrace {
        meta: drivestyle_core::sim::TraceMeta {
            persona_id: e.persona_id.clone(),
            adb_score: e.adb_score,
            seed,
            condition: "demo".into(),
            posted_speed_mps: cfg.sim.posted_speed_mps,
            ego_target_speed_mps: cfg.sim.posted_speed_mps,
            dt: cfg.sim.dt,
            duration_s,
            config_hash: cfg.hash(),
        },
        records: Vec::new(),
    })
}

fn load_model(path: &Path, cfg: &Config) -> anyhow::Result<Model> {
    let (model, trained) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if trained.hash() != cfg.hash() {
        log::warn!("checkpoint was trained under config {}, running under {}", trained.hash(), cfg.hash());
    }
    Ok(model)
}

fn load_embedding(path: &Path) -> anyhow::Result<StyleEmbedding> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: EmbeddingFile = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(file.embedding)
}

fn save_embedding(model: &Model, embedding: StyleEmbedding, cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let s_hat = model.predict_style(&embedding.w);
    log::info!("{}: predicted score {s_hat:.2}", embedding.persona_id);
    let file = EmbeddingFile { config_hash: cfg.hash(), s_hat, embedding };
    fs::write(out, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}
