//! Benchmarks, the curriculum probe, adversarial testing and ablations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, DistractorCount, Termination, MAX_DISTRACTORS};
use crate::error::{Error, Result};
use crate::obs::DetectionConfig;
use crate::policy::{ActMode, ModelPool};
use crate::reward::RewardParams;
use crate::rollout::{episode_seed, Controller, Episode, GameSetup, Model, ModelRef, OpponentSetup, TrackerSetup};
use crate::trace::TraceStep;
use crate::distill::distill_train;
use crate::train::{adversary_session, pure_rl_session, tracker_rewards, RlConfig};

pub const BENCH_EPISODES: usize = 100;
pub const PROBE_EPISODES: usize = 30;
pub const PROBE_DISTRACTORS: usize = 2;
pub const ADV_BUDGET: u64 = 20_000;
pub const ADV_BASELINE_EPISODES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Accumulated tracker reward.
    pub ar: f64,
    pub el: usize,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentMode {
    Nav,
    Meta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bench {
    pub mode: OpponentMode,
    pub distractors: usize,
}

impl fmt::Display for Bench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.mode {
            OpponentMode::Nav => "Nav",
            OpponentMode::Meta => "Meta",
        };
        write!(f, "{m}-{}", self.distractors)
    }
}

impl FromStr for Bench {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("benchmark {s:?} is not Nav-x or Meta-x with x in 0..=4"));
        let (m, x) = s.split_once('-').ok_or_else(bad)?;
        let mode = match m.to_ascii_lowercase().as_str() {
            "nav" => OpponentMode::Nav,
            "meta" => OpponentMode::Meta,
            _ => return Err(bad()),
        };
        let distractors: usize = x.parse().map_err(|_| bad())?;
        if distractors > MAX_DISTRACTORS {
            return Err(bad());
        }
        Ok(Bench { mode, distractors })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub bench: Bench,
    pub episodes: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(bench: Bench, seed: u64) -> Self {
        BenchConfig {
            bench,
            episodes: BENCH_EPISODES,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub episodes: usize,
    pub ar_mean: f64,
    pub el_mean: f64,
    pub sr: f64,
}

pub fn summarize(metrics: &[EpisodeMetrics]) -> BenchSummary {
    let n = metrics.len();
    if n == 0 {
        return BenchSummary {
            episodes: 0,
            ar_mean: 0.0,
            el_mean: 0.0,
            sr: 0.0,
        };
    }
    let nf = n as f64;
    BenchSummary {
        episodes: n,
        ar_mean: metrics.iter().map(|m| m.ar).sum::<f64>() / nf,
        el_mean: metrics.iter().map(|m| m.el as f64).sum::<f64>() / nf,
        sr: metrics.iter().filter(|m| m.success).count() as f64 / nf,
    }
}

/// Shared environment settings for evaluation runs.
#[derive(Debug, Clone)]
pub struct EvalEnv {
    pub arena: ArenaConfig,
    pub reward: RewardParams,
    pub detection: DetectionConfig,
    pub opponent_mode: ActMode,
}

impl Default for EvalEnv {
    fn default() -> Self {
        EvalEnv {
            arena: ArenaConfig::default(),
            reward: RewardParams::default(),
            detection: DetectionConfig::default(),
            opponent_mode: ActMode::Sample,
        }
    }
}

impl EvalEnv {
    pub fn setup(&self, tracker: TrackerSetup, opponents: OpponentSetup, distractors: usize) -> GameSetup {
        GameSetup {
            arena: ArenaConfig {
                n_distractors: DistractorCount::Fixed(distractors),
                ..self.arena.clone()
            },
            reward: self.reward.clone(),
            detection: self.detection.clone(),
            tracker,
            opponents,
        }
    }

    fn opponents(&self, bench: Bench, pool: Option<&Arc<ModelPool>>) -> Result<OpponentSetup> {
        match bench.mode {
            OpponentMode::Nav => Ok(OpponentSetup::Navigator),
            OpponentMode::Meta => {
                let pool = pool.ok_or_else(|| Error::InvalidInput(format!("{bench} needs a model pool")))?;
                if pool.is_empty() {
                    return Err(Error::InvalidInput("model pool is empty".into()));
                }
                Ok(OpponentSetup::Pool {
                    pool: Arc::clone(pool),
                    mode: self.opponent_mode,
                })
            }
        }
    }
}

fn frozen_only(tracker: &TrackerSetup) -> Result<()> {
    if let TrackerSetup::Neural {
        model: ModelRef::Shared(_),
        ..
    } = tracker
    {
        return Err(Error::InvalidInput("evaluation trackers must be frozen models".into()));
    }
    Ok(())
}

/// Runs one episode to termination. `on_step` sees every transition.
pub fn run_episode(
    setup: &GameSetup,
    seed: u64,
    mut on_step: impl FnMut(&Episode, &crate::rollout::StepResult),
) -> Result<EpisodeMetrics> {
    let mut ep = Episode::new(setup, seed, &[])?;
    let mut ar = 0.0;
    while !ep.done.is_done() {
        let r = ep.step(setup, &[])?;
        ar += r.rewards.r1;
        on_step(&ep, &r);
    }
    Ok(EpisodeMetrics {
        ar,
        el: ep.world.step,
        success: ep.done == Termination::MaxLen,
    })
}

/// Evaluates a frozen tracker over `episodes` seeded episodes. Optionally
/// collects per-step traces.
pub fn run_benchmark(
    tracker: &TrackerSetup,
    cfg: &BenchConfig,
    env: &EvalEnv,
    pool: Option<&Arc<ModelPool>>,
    mut traces: Option<&mut Vec<TraceStep>>,
) -> Result<(BenchSummary, Vec<EpisodeMetrics>)> {
    frozen_only(tracker)?;
    let setup = env.setup(tracker.clone(), env.opponents(cfg.bench, pool)?, cfg.bench.distractors);
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for k in 0..cfg.episodes as u64 {
        let m = run_episode(&setup, episode_seed(cfg.seed, 0, k), |ep, r| {
            if let Some(t) = traces.as_deref_mut() {
                t.push(TraceStep::capture(
                    k,
                    &ep.world,
                    &r.actions,
                    &r.rewards,
                    &r.outcome.collisions,
                    ep.world.target_in_fov(&setup.arena),
                    r.outcome.done,
                ));
            }
        })?;
        metrics.push(m);
    }
    Ok((summarize(&metrics), metrics))
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub snapshot: usize,
    pub interaction_count: u64,
    pub fov_frequency: f64,
    pub sr: f64,
    pub ar_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub rows: Vec<ProbeRow>,
    /// Rank correlation of distractor view frequency with snapshot index.
    pub spearman: Option<f64>,
}

/// Replays every pool snapshot against a fixed probe tracker with two
/// distractors and measures how often a distractor is in the tracker's view.
pub fn curriculum_probe(
    pool: &Arc<ModelPool>,
    tracker: &TrackerSetup,
    env: &EvalEnv,
    episodes: usize,
    seed: u64,
) -> Result<ProbeResult> {
    frozen_only(tracker)?;
    if pool.is_empty() {
        return Err(Error::InvalidInput("curriculum probe needs a non-empty pool".into()));
    }
    let mut rows = Vec::with_capacity(pool.len());
    for (s, snap) in pool.snapshots.iter().enumerate() {
        let opp = OpponentSetup::Snapshot {
            pool: Arc::clone(pool),
            index: s,
            mode: env.opponent_mode,
        };
        let setup = env.setup(tracker.clone(), opp, PROBE_DISTRACTORS);
        let (mut seen, mut steps) = (0usize, 0usize);
        let mut metrics = Vec::with_capacity(episodes);
        for k in 0..episodes as u64 {
            let m = run_episode(&setup, episode_seed(seed, 1, k), |ep, _| {
                steps += 1;
                if ep.distractor_in_view(&setup.arena) {
                    seen += 1;
                }
            })?;
            metrics.push(m);
        }
        let sum = summarize(&metrics);
        rows.push(ProbeRow {
            snapshot: s,
            interaction_count: snap.interaction_count,
            fov_frequency: if steps == 0 { 0.0 } else { seen as f64 / steps as f64 },
            sr: sum.sr,
            ar_mean: sum.ar_mean,
        });
    }
    let idx: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
    let freq: Vec<f64> = rows.iter().map(|r| r.fov_frequency).collect();
    Ok(ProbeResult {
        spearman: spearman(&idx, &freq),
        rows,
    })
}

/// Tracker reward per adversary-training episode for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvRun {
    pub seed: u64,
    /// Mean tracker episode reward against the initial adversaries.
    pub baseline: f64,
    /// `(interaction count at episode end, tracker episode reward)`.
    pub episodes: Vec<(u64, f64)>,
}

impl AdvRun {
    /// Mean tracker reward over the first and last `frac` of episodes.
    pub fn head_tail(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.episodes.len();
        if n == 0 {
            return None;
        }
        let k = ((n as f64 * frac).ceil() as usize).max(1);
        let mean = |s: &[(u64, f64)]| s.iter().map(|e| e.1).sum::<f64>() / s.len() as f64;
        Some((mean(&self.episodes[..k]), mean(&self.episodes[n - k..])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: u64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvResult {
    pub runs: Vec<AdvRun>,
    /// Binned mean curve over seeds with standard-error bands.
    pub curve: Vec<CurvePoint>,
}

/// Optimizes a fresh target and two distractors, initialized from the last
/// pool snapshot, against a frozen tracker, once per seed.
pub fn adversarial_test(
    tracker: &TrackerSetup,
    pool: &Arc<ModelPool>,
    cfg: &RlConfig,
    env: &EvalEnv,
    seeds: &[u64],
    bins: usize,
) -> Result<AdvResult> {
    frozen_only(tracker)?;
    let before = tracker_fingerprint(tracker);
    let last = pool
        .snapshots
        .last()
        .ok_or_else(|| Error::InvalidInput("adversarial test needs a non-empty pool".into()))?;
    let t_net = crate::nn::PolicyNet::new(pool.target_spec.clone())?;
    let d_net = crate::nn::PolicyNet::new(pool.distractor_spec.clone())?;
    let arena = ArenaConfig {
        n_distractors: DistractorCount::Fixed(PROBE_DISTRACTORS),
        ..env.arena.clone()
    };
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let init = (
            Model::new(t_net.clone(), last.target.clone()),
            Model::new(d_net.clone(), last.distractor.clone()),
        );
        let baseline_setup = env.setup(
            tracker.clone(),
            OpponentSetup::Neural {
                target: ModelRef::Frozen(Arc::new(init.0.clone())),
                distractor: ModelRef::Frozen(Arc::new(init.1.clone())),
                mode: ActMode::Sample,
            },
            PROBE_DISTRACTORS,
        );
        let mut base = Vec::with_capacity(ADV_BASELINE_EPISODES);
        for k in 0..ADV_BASELINE_EPISODES as u64 {
            base.push(run_episode(&baseline_setup, episode_seed(seed, 2, k), |_, _| {})?);
        }
        let baseline = summarize(&base).ar_mean;

        let mut episodes = Vec::new();
        if cfg.total_steps > 0 {
            let mut s = adversary_session(tracker.clone(), init, cfg, &arena, &env.reward, &env.detection, seed)?;
            s.run()?;
            let rewards = tracker_rewards(&s.log);
            let steps = s.log.iter().filter(|r| r.role == crate::train::Role::Tracker).map(|r| r.step);
            episodes = steps.zip(rewards).collect();
        }
        runs.push(AdvRun {
            seed,
            baseline,
            episodes,
        });
    }
    if tracker_fingerprint(tracker) != before {
        return Err(Error::InvalidInput("frozen tracker parameters changed".into()));
    }
    let curve = adv_curve(&runs, cfg.total_steps, bins);
    Ok(AdvResult { runs, curve })
}

fn tracker_fingerprint(t: &TrackerSetup) -> Option<String> {
    match t {
        TrackerSetup::Neural { model, .. } => Some(model.resolve(&[]).params.checksum()),
        _ => None,
    }
}

/// Point 0 is the frozen baseline; later points average the episodes that
/// ended inside each of `bins` equal slices of the budget.
fn adv_curve(runs: &[AdvRun], budget: u64, bins: usize) -> Vec<CurvePoint> {
    let mut per_x: Vec<(u64, Vec<f64>)> = vec![(0, runs.iter().map(|r| r.baseline).collect())];
    if budget > 0 && bins > 0 {
        let width = budget.div_ceil(bins as u64).max(1);
        for b in 0..bins as u64 {
            let (lo, hi) = (b * width, (b + 1) * width);
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| {
                    let v: Vec<f64> = r.episodes.iter().filter(|e| e.0 > lo && e.0 <= hi).map(|e| e.1).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            if !vals.is_empty() {
                per_x.push((hi.min(budget), vals));
            }
        }
    }
    per_x
        .into_iter()
        .map(|(x, v)| {
            let (mean, stderr) = mean_stderr(&v);
            CurvePoint { x, mean, stderr }
        })
        .collect()
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Plot-ready long-format row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub seed: Option<u64>,
}

impl AdvResult {
    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for r in &self.runs {
            rows.push(LongRow {
                series: "tracker_reward".into(),
                x: 0.0,
                y: r.baseline,
                seed: Some(r.seed),
            });
            for &(x, y) in &r.episodes {
                rows.push(LongRow {
                    series: "tracker_reward".into(),
                    x: x as f64,
                    y,
                    seed: Some(r.seed),
                });
            }
        }
        for p in &self.curve {
            for (series, y) in [
                ("mean", p.mean),
                ("mean_minus_se", p.mean - p.stderr),
                ("mean_plus_se", p.mean + p.stderr),
            ] {
                rows.push(LongRow {
                    series: series.into(),
                    x: p.x as f64,
                    y,
                    seed: None,
                });
            }
        }
        rows
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// One cell of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub bench: String,
    pub ar_mean: f64,
    pub el_mean: f64,
    pub sr: f64,
    /// AR divided by the teacher's AR on the same benchmark, when a
    /// `teacher` row exists and its AR is non-zero.
    pub ar_normalized: Option<f64>,
}

pub const TEACHER_METHOD: &str = "teacher";

/// Evaluates each named tracker on each benchmark.
pub fn ablation_table(
    methods: &[(&str, TrackerSetup)],
    benches: &[Bench],
    env: &EvalEnv,
    pool: Option<&Arc<ModelPool>>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, tracker) in methods {
        for &bench in benches {
            let cfg = BenchConfig { bench, episodes, seed };
            let (s, _) = run_benchmark(tracker, &cfg, env, pool, None)?;
            rows.push(AblationRow {
                method: name.to_string(),
                bench: bench.to_string(),
                ar_mean: s.ar_mean,
                el_mean: s.el_mean,
                sr: s.sr,
                ar_normalized: None,
            });
        }
    }
    let teacher_ar: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| r.method == TEACHER_METHOD)
        .map(|r| (r.bench.clone(), r.ar_mean))
        .collect();
    for r in &mut rows {
        if let Some((_, t)) = teacher_ar.iter().find(|(b, _)| *b == r.bench) {
            r.ar_normalized = (*t != 0.0).then(|| r.ar_mean / t);
        }
    }
    Ok(rows)
}

/// Students for the three ablation arms.
#[derive(Debug, Clone)]
pub struct AblationStudents {
    /// Distilled against the model pool.
    pub full: Model,
    /// Distilled against scripted navigators.
    pub no_curriculum: Model,
    /// Trained by actor-critic from detections against the pool, with the
    /// same interaction budget as distillation.
    pub no_teacher: Model,
}

pub fn train_ablation_students(
    teacher: &Model,
    pool: &Arc<ModelPool>,
    cfg: &crate::config::Config,
    seed: u64,
) -> Result<AblationStudents> {
    let net = crate::nn::PolicyNet::new(cfg.net.student_spec(&cfg.detection))?;
    let init = Model::new(net.clone(), net.init_params(episode_seed(seed, u64::MAX, 3)));
    let template = |opponents| GameSetup {
        arena: cfg.arena.clone(),
        reward: cfg.reward.clone(),
        detection: cfg.detection.clone(),
        tracker: TrackerSetup::Random,
        opponents,
    };
    let meta = OpponentSetup::Pool {
        pool: Arc::clone(pool),
        mode: ActMode::Sample,
    };
    let full = distill_train(teacher, init.clone(), &template(meta.clone()), &cfg.distill, seed)?.into_result()?;
    let no_curriculum =
        distill_train(teacher, init.clone(), &template(OpponentSetup::Navigator), &cfg.distill, seed)?.into_result()?;
    let rl = RlConfig {
        total_steps: cfg.distill.total_steps,
        ..cfg.rl.clone()
    };
    let mut s = pure_rl_session(init, template(meta), &rl, seed)?;
    s.run()?;
    Ok(AblationStudents {
        full: full.student,
        no_curriculum: no_curriculum.student,
        no_teacher: s.models.pop().expect("student"),
    })
}

/// The ablation table over Nav-0..4 and Meta-2 for the teacher and the
/// three student arms.
pub fn ablation_suite(
    teacher: &Model,
    students: &AblationStudents,
    pool: &Arc<ModelPool>,
    env: &EvalEnv,
    tracker_mode: ActMode,
    episodes: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    use crate::rollout::Sensor;
    let student = |m: &Model| neural_tracker(m.clone(), Sensor::Detections, tracker_mode);
    let methods = [
        (TEACHER_METHOD, neural_tracker(teacher.clone(), Sensor::Grounded, tracker_mode)),
        ("full", student(&students.full)),
        ("no-curriculum", student(&students.no_curriculum)),
        ("no-teacher", student(&students.no_teacher)),
    ];
    let mut benches: Vec<Bench> = (0..=MAX_DISTRACTORS)
        .map(|distractors| Bench {
            mode: OpponentMode::Nav,
            distractors,
        })
        .collect();
    benches.push(Bench {
        mode: OpponentMode::Meta,
        distractors: 2,
    });
    ablation_table(&methods, &benches, env, Some(pool), episodes, seed)
}

/// Frozen neural tracker driven by `model`.
pub fn neural_tracker(model: Model, sensor: crate::rollout::Sensor, mode: ActMode) -> TrackerSetup {
    TrackerSetup::Neural {
        model: ModelRef::Frozen(Arc::new(model)),
        sensor,
        mode,
    }
}

/// True when the controller list drives the tracker with a fixed policy.
pub fn is_frozen(c: &Controller) -> bool {
    !matches!(
        c,
        Controller::Neural(crate::rollout::NeuralSlot {
            model: ModelRef::Shared(_),
            ..
        })
    )
}
