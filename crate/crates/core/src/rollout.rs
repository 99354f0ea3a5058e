//! Episode driver shared by training, distillation and evaluation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arena::{self, in_fov, Action, AgentKind, ArenaConfig, DistractorCount, StepOutcome, Termination, WorldState, MAX_DISTRACTORS, TRACKER};
use crate::error::Result;
use crate::nn::{MemoryState, PolicyInput, PolicyNet, ParameterSet, StepOutput};
use crate::obs::{detection_obs, encode_detection, grounded_obs, sample_appearances, DetectionConfig, DetectionObservation};
use crate::policy::{select_action, ActMode, ModelPool, NavigatorState, PidParams, PidTracker};
use crate::reward::{compute_rewards, RewardParams, RewardVector};

#[derive(Debug, Clone)]
pub struct Model {
    pub net: PolicyNet,
    pub params: ParameterSet,
}

impl Model {
    pub fn new(net: PolicyNet, params: ParameterSet) -> Self {
        Model { net, params }
    }
}

/// Where a neural controller finds its weights: a slot in the caller's
/// (possibly changing) model table, or a frozen private copy.
#[derive(Debug, Clone)]
pub enum ModelRef {
    Shared(usize),
    Frozen(Arc<Model>),
}

impl ModelRef {
    pub fn resolve<'a>(&'a self, shared: &'a [Model]) -> &'a Model {
        match self {
            ModelRef::Shared(i) => &shared[*i],
            ModelRef::Frozen(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    Grounded,
    Detections,
}

#[derive(Debug, Clone)]
pub struct NeuralSlot {
    pub model: ModelRef,
    pub sensor: Sensor,
    pub mode: ActMode,
    pub memory: MemoryState,
}

#[derive(Debug, Clone)]
pub enum Controller {
    Navigator(NavigatorState),
    Pid(PidTracker),
    Random,
    Neural(NeuralSlot),
}

#[derive(Debug, Clone)]
pub enum TrackerSetup {
    Neural { model: ModelRef, sensor: Sensor, mode: ActMode },
    Pid(PidParams),
    Random,
}

#[derive(Debug, Clone)]
pub enum OpponentSetup {
    Navigator,
    Neural { target: ModelRef, distractor: ModelRef, mode: ActMode },
    /// A snapshot is drawn uniformly at the start of every episode.
    Pool { pool: Arc<ModelPool>, mode: ActMode },
    /// One fixed snapshot index.
    Snapshot { pool: Arc<ModelPool>, index: usize, mode: ActMode },
}

#[derive(Debug, Clone)]
pub struct GameSetup {
    pub arena: ArenaConfig,
    pub reward: RewardParams,
    pub detection: DetectionConfig,
    pub tracker: TrackerSetup,
    pub opponents: OpponentSetup,
}

/// What a neural controller saw and produced on one step.
#[derive(Debug, Clone)]
pub struct NeuralStep {
    pub input: PolicyInput,
    pub memory_before: MemoryState,
    pub output: StepOutput,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub actions: Vec<Action>,
    pub neural: Vec<Option<NeuralStep>>,
    pub outcome: StepOutcome,
    pub rewards: RewardVector,
}

pub fn grounded_input(world: &WorldState, idx: usize, rho_max: f64, tracker_last: Action) -> PolicyInput {
    let g = grounded_obs(world, idx, rho_max, tracker_last).expect("agent index in range");
    PolicyInput {
        entities: g.features.iter().map(|f| f.to_array().to_vec()).collect(),
        extra: g.tracker_last_action.map(|a| a.to_vec()).unwrap_or_default(),
    }
}

pub fn detection_input(obs: &DetectionObservation, rho_max: f64, pool: usize) -> PolicyInput {
    PolicyInput {
        entities: obs.detections.iter().map(|d| encode_detection(d, rho_max, pool)).collect(),
        extra: obs.last_self_action.to_vec(),
    }
}

fn snapshot_models(pool: &ModelPool, index: usize) -> Result<(Arc<Model>, Arc<Model>)> {
    let s = &pool.snapshots[index];
    let t = Model::new(PolicyNet::new(pool.target_spec.clone())?, s.target.clone());
    let d = Model::new(PolicyNet::new(pool.distractor_spec.clone())?, s.distractor.clone());
    Ok((Arc::new(t), Arc::new(d)))
}

pub struct Episode {
    pub world: WorldState,
    pub controllers: Vec<Controller>,
    pub appearances: Vec<u8>,
    pub last_actions: Vec<Action>,
    pub rng: ChaCha8Rng,
    pub done: Termination,
    /// Pool snapshot used by the opponents, if any.
    pub snapshot: Option<usize>,
    /// Most recent detections delivered to the tracker.
    pub last_detections: Option<DetectionObservation>,
}

impl Episode {
    pub fn new(setup: &GameSetup, seed: u64, shared: &[Model]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_distractors = match setup.arena.n_distractors {
            DistractorCount::Fixed(n) => n,
            DistractorCount::Random => rng.random_range(0..=MAX_DISTRACTORS),
        };
        let world_seed: u64 = rng.random();
        let world = arena::reset_with(&setup.arena, n_distractors, &mut rng, world_seed);
        let n = world.n_agents();

        let neural = |model: ModelRef, sensor, mode| {
            let memory = model.resolve(shared).net.initial_memory();
            Controller::Neural(NeuralSlot {
                model,
                sensor,
                mode,
                memory,
            })
        };

        let mut controllers = Vec::with_capacity(n);
        controllers.push(match &setup.tracker {
            TrackerSetup::Neural { model, sensor, mode } => neural(model.clone(), *sensor, *mode),
            TrackerSetup::Pid(p) => Controller::Pid(PidTracker::new(p.clone())),
            TrackerSetup::Random => Controller::Random,
        });

        let mut snapshot = None;
        let opponent_refs = match &setup.opponents {
            OpponentSetup::Navigator => None,
            OpponentSetup::Neural { target, distractor, mode } => Some((target.clone(), distractor.clone(), *mode)),
            OpponentSetup::Pool { pool, mode } => {
                let idx = pool.sample_index(&mut rng)?;
                snapshot = Some(idx);
                let (t, d) = snapshot_models(pool, idx)?;
                Some((ModelRef::Frozen(t), ModelRef::Frozen(d), *mode))
            }
            OpponentSetup::Snapshot { pool, index, mode } => {
                snapshot = Some(*index);
                let (t, d) = snapshot_models(pool, *index)?;
                Some((ModelRef::Frozen(t), ModelRef::Frozen(d), *mode))
            }
        };
        for agent in &world.agents[1..] {
            let c = match &opponent_refs {
                None => Controller::Navigator(NavigatorState::new(&setup.arena, &mut rng)),
                Some((t, d, mode)) => {
                    let m = if agent.kind == AgentKind::Target { t } else { d };
                    neural(m.clone(), Sensor::Grounded, *mode)
                }
            };
            controllers.push(c);
        }

        let appearances = sample_appearances(n, &setup.detection, &mut rng);
        Ok(Episode {
            world,
            controllers,
            appearances,
            last_actions: vec![Action::NOOP; n],
            rng,
            done: Termination::Running,
            snapshot,
            last_detections: None,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.world.n_agents()
    }

    fn tracker_uses_detections(&self) -> bool {
        matches!(
            &self.controllers[TRACKER],
            Controller::Pid(_)
                | Controller::Neural(NeuralSlot {
                    sensor: Sensor::Detections,
                    ..
                })
        )
    }

    /// Fresh detections for the tracker (draws noise from the episode stream).
    pub fn observe_detections(&mut self, setup: &GameSetup) -> DetectionObservation {
        detection_obs(
            &self.world,
            &setup.arena,
            &setup.detection,
            &self.appearances,
            self.last_actions[TRACKER],
            &mut self.rng,
        )
    }

    /// Network input for agent `i` in the current state. Detection inputs
    /// reuse the detections from the last `choose`.
    pub fn input_for(&mut self, setup: &GameSetup, i: usize, sensor: Sensor) -> PolicyInput {
        match sensor {
            Sensor::Grounded => grounded_input(&self.world, i, setup.reward.rho_max, self.last_actions[TRACKER]),
            Sensor::Detections => {
                let det = match &self.last_detections {
                    Some(d) => d.clone(),
                    None => self.observe_detections(setup),
                };
                detection_input(&det, setup.reward.rho_max, setup.detection.appearance_pool)
            }
        }
    }

    /// Picks every agent's action without advancing the world.
    pub fn choose(&mut self, setup: &GameSetup, shared: &[Model]) -> (Vec<Action>, Vec<Option<NeuralStep>>) {
        let n = self.n_agents();
        self.last_detections = if self.tracker_uses_detections() {
            Some(self.observe_detections(setup))
        } else {
            None
        };
        let mut actions = Vec::with_capacity(n);
        let mut neural = Vec::with_capacity(n);
        for i in 0..n {
            let mut record = None;
            let action = match &mut self.controllers[i] {
                Controller::Navigator(nav) => nav.act(&self.world.agents[i].pose, &setup.arena, &mut self.rng),
                Controller::Random => Action::from_index(self.rng.random_range(0..Action::COUNT)),
                Controller::Pid(pid) => {
                    let det = self.last_detections.as_ref().expect("pid tracker has detections");
                    pid.act(&det.detections, &setup.reward)
                }
                Controller::Neural(slot) => {
                    let input = match slot.sensor {
                        Sensor::Grounded => {
                            grounded_input(&self.world, i, setup.reward.rho_max, self.last_actions[TRACKER])
                        }
                        Sensor::Detections => detection_input(
                            self.last_detections.as_ref().expect("detections computed"),
                            setup.reward.rho_max,
                            setup.detection.appearance_pool,
                        ),
                    };
                    let model = slot.model.resolve(shared);
                    let (output, next) = model.net.forward(&model.params, &input, &slot.memory);
                    let a = select_action(&output.probs, slot.mode, &mut self.rng);
                    let memory_before = std::mem::replace(&mut slot.memory, next);
                    record = Some(NeuralStep {
                        input,
                        memory_before,
                        output,
                    });
                    a
                }
            };
            actions.push(action);
            neural.push(record);
        }
        (actions, neural)
    }

    /// Advances the world with externally chosen actions.
    pub fn apply(&mut self, setup: &GameSetup, actions: &[Action]) -> Result<(StepOutcome, RewardVector)> {
        let outcome = self.world.step(actions, &setup.arena)?;
        let rewards = compute_rewards(&self.world, &outcome.collisions, &setup.reward);
        self.last_actions = actions.to_vec();
        self.done = outcome.done;
        Ok((outcome, rewards))
    }

    pub fn step(&mut self, setup: &GameSetup, shared: &[Model]) -> Result<StepResult> {
        let (actions, neural) = self.choose(setup, shared);
        let (outcome, rewards) = self.apply(setup, &actions)?;
        Ok(StepResult {
            actions,
            neural,
            outcome,
            rewards,
        })
    }

    /// True when at least one distractor is inside the tracker's view.
    pub fn distractor_in_view(&self, arena: &ArenaConfig) -> bool {
        let t = self.world.tracker();
        self.world.agents[2..].iter().any(|d| in_fov(t, d, arena))
    }
}

/// Derives independent per-episode seeds from a base seed.
pub fn episode_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the packed triple
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
