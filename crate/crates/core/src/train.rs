//! Actor-critic training: n-step returns, reward normalization, self-play,
//! tracker fine-tuning and adversary optimization against a frozen tracker.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::arena::{Action, AgentKind, ArenaConfig, Termination};
use crate::error::{Error, Result};
use crate::nn::loss::actor_critic_step;
use crate::nn::{Adam, AdamConfig, EncoderKind, MemoryKind, MemoryState, NetSpec, PolicyInput, PolicyNet};
use crate::obs::DetectionConfig;
use crate::policy::{ActMode, ModelPool};
use crate::reward::RewardParams;
use crate::rollout::{episode_seed, Controller, Episode, GameSetup, Model, ModelRef, OpponentSetup, Sensor, TrackerSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerMode {
    /// Workers take turns; gradients of one round are averaged.
    Sync,
    /// Workers run on threads and apply updates as they finish.
    Async,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub total_steps: u64,
    pub n_step: usize,
    pub gamma: f64,
    pub entropy_w_tracker: f64,
    pub entropy_w_adversary: f64,
    pub lr: f64,
    pub workers: usize,
    pub worker_mode: WorkerMode,
    pub reward_norm: bool,
    pub snapshot_interval: u64,
    pub clip_norm: Option<f64>,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            total_steps: 200_000,
            n_step: 20,
            gamma: 0.95,
            entropy_w_tracker: 0.01,
            entropy_w_adversary: 0.03,
            lr: 1e-3,
            workers: 1,
            worker_mode: WorkerMode::Sync,
            reward_norm: true,
            snapshot_interval: 10_000,
            clip_norm: Some(10.0),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("rl.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.n_step == 0 {
            return bad("n_step must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.snapshot_interval == 0 {
            return bad("snapshot_interval must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.entropy_w_tracker >= 0.0 && self.entropy_w_adversary >= 0.0) {
            return bad("entropy weights must be non-negative");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// Network widths and cell kinds shared by every role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub encoder: EncoderKind,
    pub encoder_hidden: usize,
    pub memory: MemoryKind,
    pub memory_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            encoder: EncoderKind::BiGru,
            encoder_hidden: 64,
            memory: MemoryKind::Lstm,
            memory_hidden: 128,
        }
    }
}

impl NetConfig {
    pub fn spec(&self, entity_dim: usize, extra_dim: usize) -> NetSpec {
        NetSpec {
            encoder: self.encoder,
            memory: self.memory,
            ..NetSpec::new(entity_dim, extra_dim, self.encoder_hidden, self.memory_hidden)
        }
    }

    pub fn tracker_spec(&self) -> NetSpec {
        self.spec(crate::geometry::EntityFeature::LEN, 0)
    }

    pub fn adversary_spec(&self) -> NetSpec {
        self.spec(crate::geometry::EntityFeature::LEN, Action::COUNT)
    }

    pub fn student_spec(&self, det: &DetectionConfig) -> NetSpec {
        self.spec(det.feature_len(), Action::COUNT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tracker,
    Target,
    Distractor,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Tracker, Role::Target, Role::Distractor];

    pub fn of(kind: AgentKind) -> Role {
        match kind {
            AgentKind::Tracker => Role::Tracker,
            AgentKind::Target => Role::Target,
            AgentKind::Distractor => Role::Distractor,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Discounted n-step returns and advantages: `R_t = r_t + γ R_{t+1}`,
/// `A_t = R_t − V_t`, seeded with `bootstrap` after the last step.
pub fn n_step_returns(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    let adv = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    (returns, adv)
}

/// Running scale estimate for reward normalization (Welford).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardNormalizer {
    count: u64,
    mean: f64,
    m2: f64,
}

pub const NORM_EPS: f64 = 1e-8;

impl RewardNormalizer {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation of everything pushed so far.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    /// Divisor applied to rewards: root mean square, so a constant stream
    /// maps to unit magnitude instead of blowing up.
    pub fn scale(&self) -> f64 {
        (self.std().powi(2) + self.mean * self.mean).sqrt()
    }

    /// Updates the statistics with `x` and returns the scaled value.
    pub fn normalize(&mut self, x: f64) -> f64 {
        self.push(x);
        x / (self.scale() + NORM_EPS)
    }
}

/// Summed actor-critic losses over a window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowLoss {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub steps: usize,
}

/// Recomputes a window from `start`, evaluates the actor-critic loss and
/// accumulates its gradient into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn actor_critic_grads(
    model: &Model,
    start: &MemoryState,
    inputs: &[PolicyInput],
    actions: &[Action],
    rewards: &[f64],
    bootstrap: f64,
    gamma: f64,
    entropy_w: f64,
    grads: &mut [f64],
) -> Result<WindowLoss> {
    let n = inputs.len();
    assert!(actions.len() == n && rewards.len() == n);
    let mut mem = start.clone();
    let mut caches = Vec::with_capacity(n);
    let mut outs = Vec::with_capacity(n);
    for x in inputs {
        let (o, next, c) = model.net.forward_cached(&model.params, x, &mem);
        mem = next;
        caches.push(c);
        outs.push(o);
    }
    let values: Vec<f64> = outs.iter().map(|o| o.value).collect();
    let (returns, adv) = n_step_returns(rewards, &values, bootstrap, gamma);
    let mut loss = WindowLoss {
        steps: n,
        ..WindowLoss::default()
    };
    let mut d_logits = Vec::with_capacity(n);
    let mut d_values = Vec::with_capacity(n);
    for t in 0..n {
        let (terms, dl, dv) = actor_critic_step(&outs[t].logits, actions[t], adv[t], returns[t], values[t], entropy_w);
        loss.policy += terms.policy;
        loss.value += terms.value;
        loss.entropy += terms.entropy;
        loss.total += terms.total(entropy_w);
        d_logits.push(dl);
        d_values.push(dv);
    }
    if !loss.total.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss (policy {}, value {}, entropy {})",
            loss.policy, loss.value, loss.entropy
        )));
    }
    model.net.backward_window(&model.params, grads, &caches, &d_logits, &d_values);
    Ok(loss)
}

/// One CSV row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub role: Role,
    pub mean_episode_reward: f64,
    pub episode_length: usize,
    pub entropy: Option<f64>,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy_loss: Option<f64>,
}

#[derive(Debug, Clone)]
struct AgentTrace {
    start: MemoryState,
    inputs: Vec<PolicyInput>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct RoleEpisodeStats {
    instances: usize,
    entropy_sum: f64,
    entropy_n: usize,
    loss: WindowLoss,
    learner: bool,
}

/// Per-worker rollout state.
struct Worker {
    setup: GameSetup,
    learners: Vec<bool>,
    seed: u64,
    stream: u64,
    episodes: u64,
    episode: Episode,
    traces: Vec<Option<AgentTrace>>,
    norms: [RewardNormalizer; 3],
    agent_rewards: Vec<f64>,
    role_stats: [RoleEpisodeStats; 3],
}

struct Segment {
    grads: Vec<Option<Vec<f64>>>,
    steps: u64,
    finished: Vec<(u64, Vec<TrainLogRow>)>,
    exhausted: bool,
}

fn learner_slot(c: &Controller, learners: &[bool]) -> Option<usize> {
    match c {
        Controller::Neural(s) => match s.model {
            ModelRef::Shared(m) if learners[m] => Some(m),
            _ => None,
        },
        _ => None,
    }
}

impl Worker {
    fn new(setup: GameSetup, learners: Vec<bool>, seed: u64, stream: u64, models: &[Model]) -> Result<Self> {
        let episode = Episode::new(&setup, episode_seed(seed, stream, 0), models)?;
        let mut w = Worker {
            setup,
            learners,
            seed,
            stream,
            episodes: 1,
            episode,
            traces: Vec::new(),
            norms: Default::default(),
            agent_rewards: Vec::new(),
            role_stats: Default::default(),
        };
        w.begin_episode();
        Ok(w)
    }

    fn begin_episode(&mut self) {
        let n = self.episode.n_agents();
        self.agent_rewards = vec![0.0; n];
        self.role_stats = Default::default();
        for (i, a) in self.episode.world.agents.iter().enumerate() {
            let r = Role::of(a.kind).index();
            self.role_stats[r].instances += 1;
            if learner_slot(&self.episode.controllers[i], &self.learners).is_some() {
                self.role_stats[r].learner = true;
            }
        }
        self.reset_traces();
    }

    fn reset_traces(&mut self) {
        self.traces = self
            .episode
            .controllers
            .iter()
            .map(|c| {
                learner_slot(c, &self.learners).map(|_| match c {
                    Controller::Neural(s) => AgentTrace {
                        start: s.memory.clone(),
                        inputs: Vec::new(),
                        actions: Vec::new(),
                        rewards: Vec::new(),
                    },
                    _ => unreachable!(),
                })
            })
            .collect();
    }

    fn run_segment(&mut self, models: &[Model], cfg: &RlConfig, budget: &AtomicU64) -> Result<Segment> {
        let mut seg = Segment {
            grads: vec![None; models.len()],
            steps: 0,
            finished: Vec::new(),
            exhausted: false,
        };
        for _ in 0..cfg.n_step {
            let claimed = budget.fetch_add(1, Ordering::SeqCst);
            if claimed >= cfg.total_steps {
                seg.exhausted = true;
                break;
            }
            seg.steps += 1;
            let res = self.episode.step(&self.setup, models)?;
            for i in 0..res.actions.len() {
                let r = res.rewards.for_agent(i);
                self.agent_rewards[i] += r;
                let role = Role::of(self.episode.world.agents[i].kind);
                if let Some(ns) = &res.neural[i] {
                    let st = &mut self.role_stats[role.index()];
                    st.entropy_sum += crate::nn::loss::entropy(&ns.output.probs);
                    st.entropy_n += 1;
                }
                if let Some(tr) = &mut self.traces[i] {
                    let ns = res.neural[i].as_ref().expect("learner is neural");
                    let scaled = if cfg.reward_norm {
                        self.norms[role.index()].normalize(r)
                    } else {
                        r
                    };
                    tr.inputs.push(ns.input.clone());
                    tr.actions.push(res.actions[i]);
                    tr.rewards.push(scaled);
                }
            }
            if res.outcome.done.is_done() {
                break;
            }
        }

        // gradients for every learner agent
        let done = self.episode.done;
        for i in 0..self.traces.len() {
            let Some(tr) = &self.traces[i] else { continue };
            if tr.inputs.is_empty() {
                continue;
            }
            let Controller::Neural(slot) = &self.episode.controllers[i] else {
                unreachable!()
            };
            let m = match slot.model {
                ModelRef::Shared(m) => m,
                ModelRef::Frozen(_) => unreachable!(),
            };
            let model = &models[m];
            let bootstrap = if done == Termination::Lost {
                0.0
            } else {
                let sensor = slot.sensor;
                let memory = slot.memory.clone();
                let x = self.episode.input_for(&self.setup, i, sensor);
                model.net.forward(&model.params, &x, &memory).0.value
            };
            let role = Role::of(self.episode.world.agents[i].kind);
            let ew = if role == Role::Tracker {
                cfg.entropy_w_tracker
            } else {
                cfg.entropy_w_adversary
            };
            let g = seg.grads[m].get_or_insert_with(|| model.params.zeros_like());
            let l = actor_critic_grads(
                model,
                &tr.start,
                &tr.inputs,
                &tr.actions,
                &tr.rewards,
                bootstrap,
                cfg.gamma,
                ew,
                g,
            )?;
            let acc = &mut self.role_stats[role.index()].loss;
            acc.policy += l.policy;
            acc.value += l.value;
            acc.entropy += l.entropy;
            acc.total += l.total;
            acc.steps += l.steps;
        }

        if done.is_done() {
            let rows = self.finish_episode();
            seg.finished.push((seg.steps, rows));
            let seed = episode_seed(self.seed, self.stream, self.episodes);
            self.episodes += 1;
            self.episode = Episode::new(&self.setup, seed, models)?;
            self.begin_episode();
        } else {
            self.reset_traces();
        }
        Ok(seg)
    }

    fn finish_episode(&self) -> Vec<TrainLogRow> {
        let len = self.episode.world.step;
        let mut sums = [0.0; 3];
        for (i, a) in self.episode.world.agents.iter().enumerate() {
            sums[Role::of(a.kind).index()] += self.agent_rewards[i];
        }
        Role::ALL
            .iter()
            .filter(|r| self.role_stats[r.index()].instances > 0)
            .map(|&role| {
                let st = &self.role_stats[role.index()];
                let per = |x: f64| (st.learner && st.loss.steps > 0).then(|| x / st.loss.steps as f64);
                TrainLogRow {
                    step: 0,
                    role,
                    mean_episode_reward: sums[role.index()] / st.instances as f64,
                    episode_length: len,
                    entropy: (st.entropy_n > 0).then(|| st.entropy_sum / st.entropy_n as f64),
                    policy_loss: per(st.loss.policy),
                    value_loss: per(st.loss.value),
                    entropy_loss: per(st.loss.entropy),
                }
            })
            .collect()
    }
}

/// Everything a training run owns and mutates.
pub struct TrainSession {
    pub cfg: RlConfig,
    pub models: Vec<Model>,
    pub learners: Vec<bool>,
    optimizers: Vec<Option<Adam>>,
    /// `(target model, distractor model)` to snapshot into `pool`.
    pub snapshot_models: Option<(usize, usize)>,
    pub pool: Option<ModelPool>,
    pub log: Vec<TrainLogRow>,
    pub interactions: u64,
    next_snapshot: u64,
    setup: GameSetup,
    seed: u64,
}

impl TrainSession {
    pub fn new(cfg: RlConfig, setup: GameSetup, models: Vec<Model>, learners: Vec<bool>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if learners.len() != models.len() {
            return Err(Error::InvalidInput("one learner flag per model required".into()));
        }
        let optimizers = models
            .iter()
            .zip(&learners)
            .map(|(m, &l)| l.then(|| Adam::new(m.params.len(), cfg.adam())))
            .collect();
        let next_snapshot = cfg.snapshot_interval;
        Ok(TrainSession {
            cfg,
            models,
            learners,
            optimizers,
            snapshot_models: None,
            pool: None,
            log: Vec::new(),
            interactions: 0,
            next_snapshot,
            setup,
            seed,
        })
    }

    /// Saves target/distractor snapshots into a fresh pool every
    /// `snapshot_interval` interactions.
    pub fn with_pool(mut self, target: usize, distractor: usize) -> Self {
        self.snapshot_models = Some((target, distractor));
        self.pool = Some(ModelPool::new(
            self.models[target].net.spec().clone(),
            self.models[distractor].net.spec().clone(),
        ));
        self
    }

    fn apply(&mut self, seg: Segment, scale: f64) -> Result<()> {
        for (m, g) in seg.grads.into_iter().enumerate() {
            let Some(mut g) = g else { continue };
            if scale != 1.0 {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for model {m} at interaction {}",
                    self.interactions
                )));
            }
            let opt = self.optimizers[m].as_mut().expect("gradient only for learners");
            let mut next = self.models[m].params.clone();
            let mut trial = opt.clone();
            trial.step(&mut next, &mut g);
            if !next.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters for model {m} at interaction {}",
                    self.interactions
                )));
            }
            *opt = trial;
            self.models[m].params = next;
        }
        Ok(())
    }

    fn account(&mut self, steps: u64, finished: Vec<(u64, Vec<TrainLogRow>)>) -> Result<()> {
        let base = self.interactions;
        for (at, rows) in finished {
            self.log.extend(rows.into_iter().map(|mut r| {
                r.step = base + at;
                r
            }));
        }
        self.interactions += steps;
        self.take_snapshots()
    }

    fn take_snapshots(&mut self) -> Result<()> {
        while self.interactions >= self.next_snapshot {
            if let (Some((t, d)), Some(pool)) = (self.snapshot_models, self.pool.as_mut()) {
                pool.save(self.next_snapshot, &self.models[t].params, &self.models[d].params)?;
            }
            self.next_snapshot += self.cfg.snapshot_interval;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        match (self.cfg.workers, self.cfg.worker_mode) {
            (1, _) | (_, WorkerMode::Sync) => self.run_sync(),
            (_, WorkerMode::Async) => self.run_async(),
        }
    }

    fn make_workers(&self) -> Result<Vec<Worker>> {
        (0..self.cfg.workers as u64)
            .map(|w| Worker::new(self.setup.clone(), self.learners.clone(), self.seed, w, &self.models))
            .collect()
    }

    fn run_sync(&mut self) -> Result<()> {
        let budget = AtomicU64::new(self.interactions);
        let mut workers = self.make_workers()?;
        loop {
            let mut exhausted = false;
            let mut total: Option<Segment> = None;
            let mut contributions = vec![0usize; self.models.len()];
            let mut finished = Vec::new();
            let mut steps = 0;
            for w in workers.iter_mut() {
                let seg = w.run_segment(&self.models, &self.cfg, &budget)?;
                exhausted |= seg.exhausted;
                for (at, rows) in seg.finished {
                    finished.push((steps + at, rows));
                }
                steps += seg.steps;
                let acc = total.get_or_insert_with(|| Segment {
                    grads: vec![None; self.models.len()],
                    steps: 0,
                    finished: Vec::new(),
                    exhausted: false,
                });
                for (m, g) in seg.grads.into_iter().enumerate() {
                    let Some(g) = g else { continue };
                    contributions[m] += 1;
                    match &mut acc.grads[m] {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
            }
            if let Some(mut acc) = total {
                for (m, g) in acc.grads.iter_mut().enumerate() {
                    if let Some(g) = g {
                        if contributions[m] > 1 {
                            let s = 1.0 / contributions[m] as f64;
                            g.iter_mut().for_each(|x| *x *= s);
                        }
                    }
                }
                self.apply(acc, 1.0)?;
            }
            self.account(steps, finished)?;
            if exhausted {
                return Ok(());
            }
        }
    }

    fn run_async(&mut self) -> Result<()> {
        let budget = AtomicU64::new(self.interactions);
        let workers = self.make_workers()?;
        let shared_models = Arc::new(Mutex::new(std::mem::take(&mut self.models)));
        let session = Mutex::new(&mut *self);
        let result = std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .into_iter()
                .map(|mut w| {
                    let budget = &budget;
                    let session = &session;
                    let shared_models = Arc::clone(&shared_models);
                    scope.spawn(move || -> Result<()> {
                        loop {
                            let local = shared_models.lock().expect("model lock").clone();
                            let cfg = session.lock().expect("session lock").cfg.clone();
                            let mut seg = w.run_segment(&local, &cfg, budget)?;
                            let exhausted = seg.exhausted;
                            let finished = std::mem::take(&mut seg.finished);
                            let steps = seg.steps;
                            {
                                let mut s = session.lock().expect("session lock");
                                let mut models = shared_models.lock().expect("model lock");
                                std::mem::swap(&mut s.models, &mut *models);
                                let r = s.apply(seg, 1.0).and_then(|_| s.account(steps, finished));
                                std::mem::swap(&mut s.models, &mut *models);
                                r?;
                            }
                            if exhausted {
                                return Ok(());
                            }
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect::<Result<Vec<()>>>()
        });
        let models = Arc::try_unwrap(shared_models)
            .map_err(|_| Error::InvalidInput("model table still shared".into()))?
            .into_inner()
            .expect("model lock");
        self.models = models;
        result.map(|_| ())
    }
}

fn new_model(spec: NetSpec, seed: u64) -> Result<Model> {
    let net = PolicyNet::new(spec)?;
    let params = net.init_params(seed);
    Ok(Model::new(net, params))
}

#[derive(Debug, Clone)]
pub struct SelfPlayResult {
    pub tracker: Model,
    pub target: Model,
    pub distractor: Model,
    pub pool: ModelPool,
    pub log: Vec<TrainLogRow>,
}

/// Fresh tracker, target and distractor networks seeded from `seed`.
pub fn init_meta_models(nets: &NetConfig, seed: u64) -> Result<Vec<Model>> {
    Ok(vec![
        new_model(nets.tracker_spec(), episode_seed(seed, u64::MAX, 0))?,
        new_model(nets.adversary_spec(), episode_seed(seed, u64::MAX, 1))?,
        new_model(nets.adversary_spec(), episode_seed(seed, u64::MAX, 2))?,
    ])
}

fn meta_setup(arena: &ArenaConfig, reward: &RewardParams) -> GameSetup {
    GameSetup {
        arena: arena.clone(),
        reward: reward.clone(),
        detection: DetectionConfig::default(),
        tracker: TrackerSetup::Neural {
            model: ModelRef::Shared(0),
            sensor: Sensor::Grounded,
            mode: ActMode::Sample,
        },
        opponents: OpponentSetup::Neural {
            target: ModelRef::Shared(1),
            distractor: ModelRef::Shared(2),
            mode: ActMode::Sample,
        },
    }
}

/// Self-play of all three roles on grounded state. Distractor count follows
/// `arena.n_distractors` (random 0–4 by default); every distractor shares one
/// parameter set.
pub fn selfplay_session(
    cfg: &RlConfig,
    nets: &NetConfig,
    arena: &ArenaConfig,
    reward: &RewardParams,
    seed: u64,
) -> Result<TrainSession> {
    arena.validate()?;
    reward.validate()?;
    let models = init_meta_models(nets, seed)?;
    Ok(TrainSession::new(cfg.clone(), meta_setup(arena, reward), models, vec![true; 3], seed)?.with_pool(1, 2))
}

pub fn selfplay_train(
    cfg: &RlConfig,
    nets: &NetConfig,
    arena: &ArenaConfig,
    reward: &RewardParams,
    seed: u64,
) -> Result<SelfPlayResult> {
    let mut s = selfplay_session(cfg, nets, arena, reward, seed)?;
    s.run()?;
    let pool = s.pool.take().expect("self-play keeps a pool");
    let mut models = std::mem::take(&mut s.models).into_iter();
    Ok(SelfPlayResult {
        tracker: models.next().expect("tracker"),
        target: models.next().expect("target"),
        distractor: models.next().expect("distractor"),
        pool,
        log: std::mem::take(&mut s.log),
    })
}

/// Tracker training against opponents drawn from `pool` every episode.
pub fn finetune_session(
    tracker: Model,
    pool: Arc<ModelPool>,
    cfg: &RlConfig,
    arena: &ArenaConfig,
    reward: &RewardParams,
    seed: u64,
) -> Result<TrainSession> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("fine-tuning needs a non-empty pool".into()));
    }
    let setup = GameSetup {
        opponents: OpponentSetup::Pool {
            pool,
            mode: ActMode::Sample,
        },
        ..meta_setup(arena, reward)
    };
    TrainSession::new(cfg.clone(), setup, vec![tracker], vec![true], seed)
}

pub fn finetune_tracker(
    tracker: Model,
    pool: Arc<ModelPool>,
    cfg: &RlConfig,
    arena: &ArenaConfig,
    reward: &RewardParams,
    seed: u64,
) -> Result<(Model, Vec<TrainLogRow>)> {
    let mut s = finetune_session(tracker, pool, cfg, arena, reward, seed)?;
    s.run()?;
    let log = std::mem::take(&mut s.log);
    Ok((s.models.pop().expect("tracker"), log))
}

/// Target and distractors learn against a tracker that never changes.
/// The adversaries start from `init` (target, distractor).
#[allow(clippy::too_many_arguments)]
pub fn adversary_session(
    tracker: TrackerSetup,
    init: (Model, Model),
    cfg: &RlConfig,
    arena: &ArenaConfig,
    reward: &RewardParams,
    detection: &DetectionConfig,
    seed: u64,
) -> Result<TrainSession> {
    if let TrackerSetup::Neural {
        model: ModelRef::Shared(_),
        ..
    } = tracker
    {
        return Err(Error::InvalidInput("the frozen tracker must not use a trainable slot".into()));
    }
    let setup = GameSetup {
        arena: arena.clone(),
        reward: reward.clone(),
        detection: detection.clone(),
        tracker,
        opponents: OpponentSetup::Neural {
            target: ModelRef::Shared(0),
            distractor: ModelRef::Shared(1),
            mode: ActMode::Sample,
        },
    };
    TrainSession::new(cfg.clone(), setup, vec![init.0, init.1], vec![true, true], seed)
}

/// Actor-critic training of a detection-driven tracker with no teacher.
pub fn pure_rl_session(student: Model, setup: GameSetup, cfg: &RlConfig, seed: u64) -> Result<TrainSession> {
    let setup = GameSetup {
        tracker: TrackerSetup::Neural {
            model: ModelRef::Shared(0),
            sensor: Sensor::Detections,
            mode: ActMode::Sample,
        },
        ..setup
    };
    TrainSession::new(cfg.clone(), setup, vec![student], vec![true], seed)
}

/// The tracker role's rows of a training log.
pub fn tracker_rewards(log: &[TrainLogRow]) -> Vec<f64> {
    log.iter()
        .filter(|r| r.role == Role::Tracker)
        .map(|r| r.mean_episode_reward)
        .collect()
}

pub fn write_log_csv(log: &[TrainLogRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in log {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
