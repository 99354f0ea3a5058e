//! Command-line front end. Each command writes its outputs and one
//! `manifest.json` into a run directory; the manifest alone is enough to
//! run the command again.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::distill::{distill_train, DistillResult};
use crate::error::{Error, Result};
use crate::eval::{
    adversarial_test, curriculum_probe, neural_tracker, run_benchmark, write_csv, Bench, BenchConfig,
};
use crate::nn::checkpoint::file_hash;
use crate::nn::{Checkpoint, PolicyNet};
use crate::policy::{ActMode, ModelPool, POOL_INDEX};
use crate::rollout::{episode_seed, GameSetup, Model, OpponentSetup, Sensor, TrackerSetup};
use crate::trace::{parse_jsonl, render, write_jsonl};
use crate::train::{finetune_session, selfplay_session, TrainSession, WorkerMode};

/// Environment variable naming the default output root.
pub const DATA_DIR_ENV: &str = "DART_ARENA_DATA_DIR";
pub const MANIFEST: &str = "manifest.json";
const DEFAULT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "dart-arena", version, about = "Active-tracking arena: training, distillation and evaluation")]
pub struct Cli {
    /// JSON config file; missing sections use defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory. Defaults to $DART_ARENA_DATA_DIR/<run id>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel workers; 1 keeps every run bit-reproducible.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Top,
}

#[derive(Debug, Subcommand)]
pub enum Top {
    #[command(flatten)]
    Run(Command),
    /// Print a JSONL episode trace in readable form.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        episode: Option<u64>,
    },
    /// Run a command again from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Student,
    Teacher,
    Pid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    /// Self-play training of tracker, target and distractor.
    TrainMeta,
    /// Train a meta tracker further against a model pool.
    Finetune {
        #[arg(long)]
        tracker: PathBuf,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Distil a teacher into a detection-driven student. Without --pool the
    /// opponents are scripted navigators.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Benchmark a controller on Nav-x or Meta-x.
    Eval {
        #[arg(long, value_enum)]
        controller: ControllerKind,
        /// Checkpoint for student or teacher controllers.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_bench)]
        bench: Bench,
        #[arg(long)]
        episodes: Option<usize>,
        /// Model pool for Meta-x benchmarks.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Also write a per-step JSONL trace.
        #[arg(long, default_value_t = false)]
        trace: bool,
    },
    /// Train fresh adversaries against a frozen tracker.
    AdvTest {
        /// `pid`, `random` or a checkpoint path.
        #[arg(long)]
        tracker: String,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Distractor view frequency for every pool snapshot.
    ProbeCurriculum {
        #[arg(long)]
        pool: PathBuf,
        /// `pid`, `random` or a checkpoint path.
        #[arg(long, default_value = "pid")]
        tracker: String,
    },
}

fn parse_bench(s: &str) -> std::result::Result<Bench, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainMeta => "train-meta",
            Command::Finetune { .. } => "finetune",
            Command::Distill { .. } => "distill",
            Command::Eval { .. } => "eval",
            Command::AdvTest { .. } => "adv-test",
            Command::ProbeCurriculum { .. } => "probe-curriculum",
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let pool_index = |p: &Path| p.join(POOL_INDEX);
        let mut v = Vec::new();
        match self {
            Command::TrainMeta => {}
            Command::Finetune { tracker, pool } => {
                v.push(tracker.clone());
                v.push(pool_index(pool));
            }
            Command::Distill { teacher, pool } => {
                v.push(teacher.clone());
                v.extend(pool.as_deref().map(pool_index));
            }
            Command::Eval { checkpoint, pool, .. } => {
                v.extend(checkpoint.clone());
                v.extend(pool.as_deref().map(pool_index));
            }
            Command::AdvTest { tracker, pool, .. } | Command::ProbeCurriculum { tracker, pool } => {
                if !matches!(tracker.as_str(), "pid" | "random") {
                    v.push(PathBuf::from(tracker));
                }
                v.push(pool_index(pool));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: u32,
    pub run_id: String,
    pub command: Command,
    pub seed: u64,
    pub config: Config,
    pub inputs: Vec<InputHash>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub const FORMAT: u32 = 1;

    pub fn parse(text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("run manifest: {e}")))?;
        if m.format != Self::FORMAT {
            return Err(Error::Format(format!("unsupported run manifest format {}", m.format)));
        }
        if m.run_id.is_empty() || m.run_id.contains(['/', '\\']) {
            return Err(Error::Format("run manifest has an invalid run_id".into()));
        }
        if m.finished_unix < m.started_unix {
            return Err(Error::Format("run manifest finishes before it starts".into()));
        }
        m.config.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Deterministic id from the command, seed and config.
pub fn run_id(command: &Command, seed: u64, cfg: &Config) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(command).expect("command serializes"));
    h.update(seed.to_le_bytes());
    h.update(cfg.to_json().as_bytes());
    let digest = h.finalize();
    let short: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-s{seed}-{short}", command.name())
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn default_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Top::Replay { trace, episode } => {
            if !trace.exists() {
                return Err(Error::MissingArtifact(trace));
            }
            let mut steps = parse_jsonl(&fs::read_to_string(&trace)?)?;
            if let Some(e) = episode {
                steps.retain(|s| s.episode == e);
            }
            print!("{}", render(&steps));
            Ok(())
        }
        Top::Rerun { manifest } => {
            let m = RunManifest::load(&manifest)?;
            for input in &m.inputs {
                if file_hash(&input.path)? != input.sha256 {
                    return Err(Error::InvalidInput(format!(
                        "{} changed since the manifest was written",
                        input.path.display()
                    )));
                }
            }
            let out = cli.out.unwrap_or_else(|| default_root().join(format!("{}-rerun", m.run_id)));
            execute(m.command, m.config, m.seed, &out).map(|_| ())
        }
        Top::Run(command) => {
            let mut cfg = match &cli.config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            if let Some(w) = cli.workers {
                if w == 0 {
                    return Err(Error::Config("--workers must be at least 1".into()));
                }
                cfg.rl.workers = w;
                cfg.distill.samplers = w;
                cfg.distill.mode = if w == 1 { WorkerMode::Sync } else { WorkerMode::Async };
            }
            cfg.validate()?;
            let seed = cli.seed.unwrap_or(1);
            let out = cli.out.unwrap_or_else(|| default_root().join(run_id(&command, seed, &cfg)));
            execute(command, cfg, seed, &out).map(|_| ())
        }
    }
}

/// Runs one command into `out` and writes its manifest.
pub fn execute(command: Command, cfg: Config, seed: u64, out: &Path) -> Result<RunManifest> {
    let started = now_unix();
    let inputs = command
        .inputs()
        .into_iter()
        .map(|path| Ok(InputHash { sha256: file_hash(&path)?, path }))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    info!("{} into {}", command.name(), out.display());
    let mut outputs = Vec::new();
    let result = dispatch(&command, &cfg, seed, out, &mut outputs);
    let manifest = RunManifest {
        format: RunManifest::FORMAT,
        run_id: run_id(&command, seed, &cfg),
        command,
        seed,
        config: cfg,
        inputs,
        started_unix: started,
        finished_unix: now_unix().max(started),
        outputs,
    };
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    result.map(|_| manifest)
}

fn load_model(path: &Path) -> Result<Model> {
    let ck = Checkpoint::load(path)?;
    let net = PolicyNet::new(ck.spec)?;
    net.check_params(&ck.params)?;
    Ok(Model::new(net, ck.params))
}

fn save_model(m: &Model, path: &Path) -> Result<()> {
    Checkpoint::new(m.net.spec().clone(), m.params.clone()).save(path)
}

fn load_pool(dir: &Path) -> Result<Arc<ModelPool>> {
    Ok(Arc::new(ModelPool::load_dir(dir)?))
}

/// Trackers without extra inputs read grounded state; the rest read
/// detections.
fn tracker_from_spec(spec: &str, cfg: &Config) -> Result<TrackerSetup> {
    Ok(match spec {
        "pid" => TrackerSetup::Pid(cfg.pid.clone()),
        "random" => TrackerSetup::Random,
        path => {
            let m = load_model(Path::new(path))?;
            let sensor = if m.net.spec().extra_dim == 0 { Sensor::Grounded } else { Sensor::Detections };
            neural_tracker(m, sensor, cfg.eval.tracker_mode)
        }
    })
}

fn write_file(out: &Path, name: &str, outputs: &mut Vec<String>, write: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
    write(fs::File::create(out.join(name))?)?;
    outputs.push(name.to_string());
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, name: &str, outputs: &mut Vec<String>, value: &T) -> Result<()> {
    write_file(out, name, outputs, |f| Ok(serde_json::to_writer_pretty(f, value)?))
}

/// Runs a training session; on divergence the last finite models are saved
/// under `last_good_<name>` before the error is returned.
fn run_guarded(s: &mut TrainSession, names: &[&str], out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    match s.run() {
        Err(Error::Divergence(m)) => {
            for (model, name) in s.models.iter().zip(names) {
                let file = format!("last_good_{name}.ckpt");
                save_model(model, &out.join(&file))?;
                outputs.push(file);
            }
            Err(Error::Divergence(m))
        }
        r => r,
    }
}

#[derive(Debug, Serialize)]
struct EpisodeRow {
    episode: usize,
    ar: f64,
    el: usize,
    success: bool,
}

fn dispatch(command: &Command, cfg: &Config, seed: u64, out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    match command {
        Command::TrainMeta => {
            let mut s = selfplay_session(&cfg.rl, &cfg.net, &cfg.arena, &cfg.reward, seed)?;
            let r = run_guarded(&mut s, &["tracker", "target", "distractor"], out, outputs);
            write_file(out, "train_log.csv", outputs, |f| crate::train::write_log_csv(&s.log, f))?;
            r?;
            for (m, name) in s.models.iter().zip(["tracker", "target", "distractor"]) {
                let file = format!("{name}.ckpt");
                save_model(m, &out.join(&file))?;
                outputs.push(file);
            }
            s.pool.as_ref().expect("self-play keeps a pool").save_dir(&out.join("pool"))?;
            outputs.push("pool".into());
        }
        Command::Finetune { tracker, pool } => {
            let mut s = finetune_session(load_model(tracker)?, load_pool(pool)?, &cfg.rl, &cfg.arena, &cfg.reward, seed)?;
            let r = run_guarded(&mut s, &["tracker"], out, outputs);
            write_file(out, "finetune_log.csv", outputs, |f| crate::train::write_log_csv(&s.log, f))?;
            r?;
            save_model(&s.models[0], &out.join("tracker.ckpt"))?;
            outputs.push("tracker.ckpt".into());
        }
        Command::Distill { teacher, pool } => {
            let teacher = load_model(teacher)?;
            let opponents = match pool {
                Some(p) => OpponentSetup::Pool {
                    pool: load_pool(p)?,
                    mode: ActMode::Sample,
                },
                None => OpponentSetup::Navigator,
            };
            let template = GameSetup {
                arena: cfg.arena.clone(),
                reward: cfg.reward.clone(),
                detection: cfg.detection.clone(),
                tracker: TrackerSetup::Random,
                opponents,
            };
            let net = PolicyNet::new(cfg.net.student_spec(&cfg.detection))?;
            let student = Model::new(net.clone(), net.init_params(episode_seed(seed, u64::MAX, 3)));
            let r: DistillResult = distill_train(&teacher, student, &template, &cfg.distill, seed)?;
            write_file(out, "distill_log.csv", outputs, |f| crate::distill::write_log_csv(&r.log, f))?;
            let name = if r.diverged.is_some() { "last_good_student.ckpt" } else { "student.ckpt" };
            save_model(&r.student, &out.join(name))?;
            outputs.push(name.into());
            r.into_result()?;
        }
        Command::Eval {
            controller,
            checkpoint,
            bench,
            episodes,
            pool,
            trace,
        } => {
            let tracker = match controller {
                ControllerKind::Pid => TrackerSetup::Pid(cfg.pid.clone()),
                ControllerKind::Random => TrackerSetup::Random,
                ControllerKind::Student | ControllerKind::Teacher => {
                    let path = checkpoint
                        .as_ref()
                        .ok_or_else(|| Error::InvalidInput("student and teacher controllers need --checkpoint".into()))?;
                    let sensor = if *controller == ControllerKind::Teacher { Sensor::Grounded } else { Sensor::Detections };
                    neural_tracker(load_model(path)?, sensor, cfg.eval.tracker_mode)
                }
            };
            let pool = pool.as_deref().map(load_pool).transpose()?;
            let bc = BenchConfig {
                bench: *bench,
                episodes: episodes.unwrap_or(cfg.eval.episodes),
                seed,
            };
            let mut steps = Vec::new();
            let (summary, metrics) =
                run_benchmark(&tracker, &bc, &cfg.eval_env(), pool.as_ref(), trace.then_some(&mut steps))?;
            let rows: Vec<EpisodeRow> =
                metrics.iter().enumerate().map(|(episode, m)| EpisodeRow {
                    episode,
                    ar: m.ar,
                    el: m.el,
                    success: m.success,
                }).collect();
            write_file(out, "episodes.csv", outputs, |f| write_csv(&rows, f))?;
            write_json(out, "summary.json", outputs, &summary)?;
            if *trace {
                write_file(out, "trace.jsonl", outputs, |f| write_jsonl(&steps, std::io::BufWriter::new(f)))?;
            }
            println!(
                "{bench}: AR {:.2} EL {:.1} SR {:.2} over {} episodes",
                summary.ar_mean, summary.el_mean, summary.sr, summary.episodes
            );
        }
        Command::AdvTest {
            tracker,
            pool,
            budget,
            seeds,
            bins,
        } => {
            let t = tracker_from_spec(tracker, cfg)?;
            let pool = load_pool(pool)?;
            let rl = crate::train::RlConfig {
                total_steps: budget.unwrap_or(cfg.eval.adv_budget),
                ..cfg.rl.clone()
            };
            let seeds = if seeds.is_empty() { vec![seed] } else { seeds.clone() };
            let r = adversarial_test(&t, &pool, &rl, &cfg.eval_env(), &seeds, *bins)?;
            write_file(out, "curve.csv", outputs, |f| write_csv(&r.curve, f))?;
            write_file(out, "runs.csv", outputs, |f| write_csv(&r.long_rows(), f))?;
            for run in &r.runs {
                if let Some((head, tail)) = run.head_tail(0.1) {
                    println!("seed {}: baseline {:.2} first 10% {head:.2} last 10% {tail:.2}", run.seed, run.baseline);
                }
            }
        }
        Command::ProbeCurriculum { pool, tracker } => {
            let t = tracker_from_spec(tracker, cfg)?;
            let pool = load_pool(pool)?;
            let r = curriculum_probe(&pool, &t, &cfg.eval_env(), cfg.eval.probe_episodes, seed)?;
            write_file(out, "probe.csv", outputs, |f| write_csv(&r.rows, f))?;
            write_json(out, "probe_summary.json", outputs, &serde_json::json!({ "spearman": r.spearman }))?;
            match r.spearman {
                Some(rho) => println!("spearman {rho:.3} over {} snapshots", r.rows.len()),
                None => println!("spearman undefined over {} snapshots", r.rows.len()),
            }
        }
    }
    Ok(())
}
