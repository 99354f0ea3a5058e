//! Discrete-action kinematic arena.
//!
//! Agents are discs on an obstacle-free rectangle. Each step every agent picks
//! one of seven discrete commands, the commanded velocities pass through a
//! first-order smoothing filter, and poses are integrated with forward Euler.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, relative_pose, Pose};

pub const MAX_DISTRACTORS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Action(u8);

impl Action {
    pub const COUNT: usize = 7;
    pub const NOOP: Action = Action(0);
    pub const FORWARD: Action = Action(1);
    pub const BACKWARD: Action = Action(2);
    pub const TURN_LEFT: Action = Action(3);
    pub const TURN_RIGHT: Action = Action(4);
    pub const FORWARD_LEFT: Action = Action(5);
    pub const FORWARD_RIGHT: Action = Action(6);

    pub fn new(code: u8) -> Result<Self> {
        if (code as usize) < Self::COUNT {
            Ok(Action(code))
        } else {
            Err(Error::InvalidInput(format!("action code {code} outside 0..7")))
        }
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT, "action index {i} out of range");
        Action(i as u8)
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn one_hot(self) -> [f64; Action::COUNT] {
        let mut v = [0.0; Action::COUNT];
        v[self.index()] = 1.0;
        v
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..Self::COUNT as u8).map(Action)
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;
    fn try_from(code: u8) -> Result<Self> {
        Action::new(code)
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.0
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.0 {
            0 => "noop",
            1 => "forward",
            2 => "backward",
            3 => "turn-left",
            4 => "turn-right",
            5 => "forward-left",
            _ => "forward-right",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Tracker,
    Target,
    Distractor,
}

/// Number of distractors per episode: fixed, or uniform over `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistractorCount {
    Fixed(usize),
    Random,
}

impl Serialize for DistractorCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DistractorCount::Fixed(n) => s.serialize_u64(*n as u64),
            DistractorCount::Random => s.serialize_str("random"),
        }
    }
}

impl<'de> Deserialize<'de> for DistractorCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) if n as usize <= MAX_DISTRACTORS => Ok(DistractorCount::Fixed(n as usize)),
            Raw::Count(n) => Err(serde::de::Error::custom(format!(
                "n_distractors {n} exceeds {MAX_DISTRACTORS}"
            ))),
            Raw::Name(s) if s == "random" => Ok(DistractorCount::Random),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "n_distractors must be 0-4 or \"random\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    pub dt: f64,
    pub v_max_lin: f64,
    pub v_max_ang: f64,
    pub alpha: f64,
    pub width: f64,
    pub height: f64,
    pub fov_half_angle: f64,
    pub fov_range: f64,
    pub agent_radius: f64,
    pub max_episode_steps: usize,
    pub lost_limit_steps: usize,
    pub n_distractors: DistractorCount,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            dt: 0.1,
            v_max_lin: 2.0,
            v_max_ang: FRAC_PI_2,
            alpha: 0.5,
            width: 12.0,
            height: 12.0,
            fov_half_angle: FRAC_PI_4,
            fov_range: 7.5,
            agent_radius: 0.4,
            max_episode_steps: 500,
            lost_limit_steps: 50,
            n_distractors: DistractorCount::Random,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("arena.dt must be > 0");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("arena.alpha must lie in [0, 1)");
        }
        if self.max_episode_steps < 1 {
            return bad("arena.max_episode_steps must be >= 1");
        }
        if !(self.v_max_lin > 0.0) || !(self.v_max_ang > 0.0) {
            return bad("arena velocity limits must be > 0");
        }
        if !(self.agent_radius > 0.0) {
            return bad("arena.agent_radius must be > 0");
        }
        if !(self.width > 8.0 * self.agent_radius) || !(self.height > 8.0 * self.agent_radius) {
            return bad("arena is too small for its agents");
        }
        if !(self.fov_range > 0.0) || !(self.fov_half_angle > 0.0) {
            return bad("arena field of view must be non-empty");
        }
        if let DistractorCount::Fixed(n) = self.n_distractors {
            if n > MAX_DISTRACTORS {
                return bad("arena.n_distractors must be at most 4");
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            min_x: -self.width / 2.0,
            min_y: -self.height / 2.0,
            max_x: self.width / 2.0,
            max_y: self.height / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// True when a disc of `radius` at `(x, y)` touches or crosses a wall.
    pub fn disc_hits_wall(&self, x: f64, y: f64, radius: f64) -> bool {
        x - radius < self.min_x
            || x + radius > self.max_x
            || y - radius < self.min_y
            || y + radius > self.max_y
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min_x, self.max_x), y.clamp(self.min_y, self.max_y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose,
    pub v_lin: f64,
    pub v_ang: f64,
    pub kind: AgentKind,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    Lost,
    MaxLen,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub collisions: Vec<bool>,
    pub done: Termination,
}

/// Full joint state. Index 0 is the tracker, index 1 the target, the rest
/// distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<AgentState>,
    pub step: usize,
    pub lost_steps: usize,
    pub bounds: Bounds,
    pub rng_seed: u64,
}

pub const TRACKER: usize = 0;
pub const TARGET: usize = 1;

pub fn action_to_command(a: Action, cfg: &ArenaConfig) -> (f64, f64) {
    let (l, w) = (cfg.v_max_lin, cfg.v_max_ang);
    match a.code() {
        0 => (0.0, 0.0),
        1 => (l, 0.0),
        2 => (-l, 0.0),
        3 => (0.0, w),
        4 => (0.0, -w),
        5 => (l, w),
        6 => (l, -w),
        _ => unreachable!("Action invariant"),
    }
}

pub fn smooth(v_prev: f64, v_cmd: f64, alpha: f64) -> f64 {
    alpha * v_prev + (1.0 - alpha) * v_cmd
}

pub fn in_fov(observer: &AgentState, other: &AgentState, cfg: &ArenaConfig) -> bool {
    let rel = relative_pose(&observer.pose, &other.pose);
    rel.rho <= cfg.fov_range && rel.theta.abs() <= cfg.fov_half_angle
}

fn discs_overlap(a: &AgentState, b: &AgentState) -> bool {
    a.pose.distance_to(&b.pose) < a.radius + b.radius
}

/// Samples a fresh episode. Deterministic in `seed`.
pub fn reset(cfg: &ArenaConfig, seed: u64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_distractors = match cfg.n_distractors {
        DistractorCount::Fixed(n) => n,
        DistractorCount::Random => rng.random_range(0..=MAX_DISTRACTORS),
    };
    reset_with(cfg, n_distractors, &mut rng, seed)
}

pub fn reset_with(cfg: &ArenaConfig, n_distractors: usize, rng: &mut impl Rng, seed: u64) -> WorldState {
    let bounds = cfg.bounds();
    let r = cfg.agent_radius;
    let cx = (bounds.min_x + bounds.max_x) / 2.0;
    let cy = (bounds.min_y + bounds.max_y) / 2.0;
    let mut agents = vec![AgentState {
        pose: Pose::new(cx, cy, 0.0),
        v_lin: 0.0,
        v_ang: 0.0,
        kind: AgentKind::Tracker,
        radius: r,
    }];

    // uniform by area over the annular sector rho in [1, 3]
    let rho_lo = 1.0f64;
    let rho_hi = 3.0f64.min(cfg.fov_range).max(rho_lo);
    let rho = rng.random_range(rho_lo * rho_lo..=rho_hi * rho_hi).sqrt();
    let theta = rng.random_range(-cfg.fov_half_angle..=cfg.fov_half_angle);
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    agents.push(AgentState {
        pose: Pose::new(cx + rho * theta.cos(), cy + rho * theta.sin(), heading),
        v_lin: 0.0,
        v_ang: 0.0,
        kind: AgentKind::Target,
        radius: r,
    });

    for _ in 0..n_distractors {
        let mut placed = None;
        for _ in 0..10_000 {
            let x = rng.random_range(bounds.min_x + r..=bounds.max_x - r);
            let y = rng.random_range(bounds.min_y + r..=bounds.max_y - r);
            let candidate = AgentState {
                pose: Pose::new(x, y, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
                v_lin: 0.0,
                v_ang: 0.0,
                kind: AgentKind::Distractor,
                radius: r,
            };
            if !bounds.disc_hits_wall(x, y, r) && agents.iter().all(|a| !discs_overlap(a, &candidate)) {
                placed = Some(candidate);
                break;
            }
        }
        agents.push(placed.expect("arena has room for every distractor"));
    }

    WorldState {
        agents,
        step: 0,
        lost_steps: 0,
        bounds,
        rng_seed: seed,
    }
}

impl WorldState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_distractors(&self) -> usize {
        self.agents.len().saturating_sub(2)
    }

    pub fn tracker(&self) -> &AgentState {
        &self.agents[TRACKER]
    }

    pub fn target(&self) -> &AgentState {
        &self.agents[TARGET]
    }

    pub fn target_in_fov(&self, cfg: &ArenaConfig) -> bool {
        in_fov(self.tracker(), self.target(), cfg)
    }

    /// Advances the world by one control period.
    pub fn step(&mut self, actions: &[Action], cfg: &ArenaConfig) -> Result<StepOutcome> {
        if actions.len() != self.agents.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} actions, got {}",
                self.agents.len(),
                actions.len()
            )));
        }
        let previous: Vec<Pose> = self.agents.iter().map(|a| a.pose).collect();

        for (agent, &a) in self.agents.iter_mut().zip(actions) {
            let (cmd_lin, cmd_ang) = action_to_command(a, cfg);
            agent.v_lin = smooth(agent.v_lin, cmd_lin, cfg.alpha);
            agent.v_ang = smooth(agent.v_ang, cmd_ang, cfg.alpha);
            let (s, c) = agent.pose.heading.sin_cos();
            let x = agent.pose.x + agent.v_lin * c * cfg.dt;
            let y = agent.pose.y + agent.v_lin * s * cfg.dt;
            let (x, y) = self.bounds.clamp(x, y);
            agent.pose = Pose::new(x, y, agent.pose.heading + agent.v_ang * cfg.dt);
        }

        let n = self.agents.len();
        let mut collided = vec![false; n];
        for i in 0..n {
            let a = &self.agents[i];
            if self.bounds.disc_hits_wall(a.pose.x, a.pose.y, a.radius) {
                collided[i] = true;
            }
            for j in (i + 1)..n {
                if discs_overlap(a, &self.agents[j]) {
                    collided[i] = true;
                    collided[j] = true;
                }
            }
        }

        // Revert colliders, then keep reverting anyone who now overlaps a
        // reverted agent until the set is closed.
        let mut reverted = vec![false; n];
        loop {
            let mut changed = false;
            for i in 0..n {
                if collided[i] && !reverted[i] {
                    let agent = &mut self.agents[i];
                    agent.pose = Pose::new(previous[i].x, previous[i].y, agent.pose.heading);
                    agent.v_lin = 0.0;
                    agent.v_ang = 0.0;
                    reverted[i] = true;
                    changed = true;
                }
            }
            for i in 0..n {
                if reverted[i] {
                    continue;
                }
                if (0..n).any(|j| j != i && reverted[j] && discs_overlap(&self.agents[i], &self.agents[j])) {
                    collided[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        self.step += 1;
        if self.target_in_fov(cfg) {
            self.lost_steps = 0;
        } else {
            self.lost_steps += 1;
        }
        let done = if self.lost_steps >= cfg.lost_limit_steps {
            Termination::Lost
        } else if self.step >= cfg.max_episode_steps {
            Termination::MaxLen
        } else {
            Termination::Running
        };
        Ok(StepOutcome {
            collisions: collided,
            done,
        })
    }
}

/// Heading-aware helper used by scripted controllers.
pub fn bearing_to(from: &Pose, x: f64, y: f64) -> f64 {
    normalize_angle((y - from.y).atan2(x - from.x) - from.heading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_3, PI};

    fn agent(x: f64, y: f64, h: f64, kind: AgentKind) -> AgentState {
        AgentState {
            pose: Pose::new(x, y, h),
            v_lin: 0.0,
            v_ang: 0.0,
            kind,
            radius: 0.4,
        }
    }

    fn world(agents: Vec<AgentState>) -> WorldState {
        WorldState {
            agents,
            step: 0,
            lost_steps: 0,
            bounds: ArenaConfig::default().bounds(),
            rng_seed: 0,
        }
    }

    #[test]
    fn commands() {
        let cfg = ArenaConfig::default();
        assert_eq!(action_to_command(Action::NOOP, &cfg), (0.0, 0.0));
        assert_eq!(action_to_command(Action::FORWARD, &cfg), (2.0, 0.0));
        assert_eq!(action_to_command(Action::FORWARD_LEFT, &cfg), (2.0, FRAC_PI_2));
        assert_eq!(action_to_command(Action::FORWARD_RIGHT, &cfg), (2.0, -FRAC_PI_2));
        assert_eq!(action_to_command(Action::BACKWARD, &cfg), (-2.0, 0.0));
        assert!(Action::new(7).is_err());
        assert_eq!(Action::all().count(), 7);
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(0.0, 2.0, 0.5), 1.0);
        assert_eq!(smooth(1.3, 1.3, 0.7), 1.3);
        let mut v = 0.0;
        for _ in 0..3 {
            v = smooth(v, 2.0, 0.5);
        }
        assert!((v - 1.75).abs() < 1e-15);
    }

    #[test]
    fn forward_from_rest() {
        let cfg = ArenaConfig::default();
        let mut w = world(vec![agent(0.0, 0.0, 0.0, AgentKind::Tracker), agent(3.0, 0.0, 0.0, AgentKind::Target)]);
        w.step(&[Action::FORWARD, Action::FORWARD], &cfg).unwrap();
        assert!((w.agents[0].pose.x - 0.1).abs() < 1e-12);
        assert_eq!(w.agents[0].v_lin, 1.0);
    }

    #[test]
    fn overlapping_agents_both_revert() {
        let cfg = ArenaConfig::default();
        let mut w = world(vec![agent(0.0, 0.0, 0.0, AgentKind::Tracker), agent(0.5, 0.0, 0.0, AgentKind::Target)]);
        let out = w.step(&[Action::NOOP, Action::NOOP], &cfg).unwrap();
        assert_eq!(out.collisions, vec![true, true]);
        assert_eq!((w.agents[0].pose.x, w.agents[1].pose.x), (0.0, 0.5));
    }

    #[test]
    fn moving_into_neighbour_reverts() {
        let cfg = ArenaConfig::default();
        let mut w = world(vec![agent(0.0, 0.0, 0.0, AgentKind::Tracker), agent(0.85, 0.0, 0.0, AgentKind::Target)]);
        w.agents[0].v_lin = 2.0;
        let out = w.step(&[Action::FORWARD, Action::NOOP], &cfg).unwrap();
        assert_eq!(out.collisions, vec![true, true]);
        assert_eq!(w.agents[0].pose.x, 0.0);
        assert_eq!(w.agents[0].v_lin, 0.0);
    }

    #[test]
    fn wall_collision() {
        let cfg = ArenaConfig::default();
        let mut w = world(vec![agent(5.55, 0.0, 0.0, AgentKind::Tracker), agent(2.0, 0.0, 0.0, AgentKind::Target)]);
        w.agents[0].v_lin = 2.0;
        let out = w.step(&[Action::FORWARD, Action::NOOP], &cfg).unwrap();
        assert!(out.collisions[0]);
        assert!(!out.collisions[1]);
        assert_eq!(w.agents[0].pose.x, 5.55);
    }

    #[test]
    fn lost_after_limit() {
        let cfg = ArenaConfig::default();
        let mut w = world(vec![agent(0.0, 0.0, 0.0, AgentKind::Tracker), agent(-3.0, 0.0, 0.0, AgentKind::Target)]);
        w.lost_steps = 49;
        let out = w.step(&[Action::NOOP, Action::NOOP], &cfg).unwrap();
        assert_eq!(out.done, Termination::Lost);
        assert_eq!(w.lost_steps, 50);
    }

    #[test]
    fn lost_counter_resets_when_visible() {
        let cfg = ArenaConfig::default();
        let mut w = world(vec![agent(0.0, 0.0, 0.0, AgentKind::Tracker), agent(3.0, 0.0, 0.0, AgentKind::Target)]);
        w.lost_steps = 30;
        w.step(&[Action::NOOP, Action::NOOP], &cfg).unwrap();
        assert_eq!(w.lost_steps, 0);
    }

    #[test]
    fn max_len_termination() {
        let cfg = ArenaConfig {
            max_episode_steps: 3,
            ..Default::default()
        };
        let mut w = world(vec![agent(0.0, 0.0, 0.0, AgentKind::Tracker), agent(3.0, 0.0, 0.0, AgentKind::Target)]);
        let acts = [Action::NOOP, Action::NOOP];
        assert_eq!(w.step(&acts, &cfg).unwrap().done, Termination::Running);
        assert_eq!(w.step(&acts, &cfg).unwrap().done, Termination::Running);
        assert_eq!(w.step(&acts, &cfg).unwrap().done, Termination::MaxLen);
    }

    #[test]
    fn action_count_mismatch() {
        let cfg = ArenaConfig::default();
        let mut w = reset(&cfg, 1);
        assert!(w.step(&[Action::NOOP], &cfg).is_err());
    }

    #[test]
    fn fov_examples() {
        let cfg = ArenaConfig::default();
        let me = agent(0.0, 0.0, 0.0, AgentKind::Tracker);
        assert!(in_fov(&me, &agent(3.0, 0.0, 0.0, AgentKind::Target), &cfg));
        let (s, c) = FRAC_PI_3.sin_cos();
        assert!(!in_fov(&me, &agent(3.0 * c, 3.0 * s, 0.0, AgentKind::Target), &cfg));
        assert!(!in_fov(&me, &agent(8.0, 0.0, 0.0, AgentKind::Target), &cfg));
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let mut cfg = ArenaConfig::default();
        assert_eq!(reset(&cfg, 42), reset(&cfg, 42));
        cfg.n_distractors = DistractorCount::Fixed(2);
        let w = reset(&cfg, 7);
        assert_eq!(w.n_agents(), 4);
        assert!(w.target_in_fov(&cfg));
        let rho = w.tracker().pose.distance_to(&w.target().pose);
        assert!((1.0..=3.0).contains(&rho));
    }

    #[test]
    fn random_distractor_count_is_uniform() {
        // Binomial(n, 0.2) per bucket; accept within 3 sigma.
        let cfg = ArenaConfig::default();
        let n = 10_000usize;
        let mut counts = [0usize; 5];
        for seed in 0..n as u64 {
            counts[reset(&cfg, seed).n_distractors()] += 1;
        }
        let p = 0.2;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn config_accepts_random_or_count() {
        let c: ArenaConfig = serde_json::from_str(r#"{"n_distractors": "random"}"#).unwrap();
        assert_eq!(c.n_distractors, DistractorCount::Random);
        let c: ArenaConfig = serde_json::from_str(r#"{"n_distractors": 3}"#).unwrap();
        assert_eq!(c.n_distractors, DistractorCount::Fixed(3));
        assert!(serde_json::from_str::<ArenaConfig>(r#"{"n_distractors": 5}"#).is_err());
        assert!(serde_json::from_str::<ArenaConfig>(r#"{"bogus": 1}"#).is_err());
    }

    fn any_action() -> impl Strategy<Value = Action> {
        (0u8..7).prop_map(|c| Action::new(c).unwrap())
    }

    proptest! {
        #[test]
        fn step_invariants(seed in 0u64..10_000, acts in proptest::collection::vec(proptest::collection::vec(any_action(), 6), 1..60)) {
            let cfg = ArenaConfig::default();
            let mut w = reset(&cfg, seed);
            let n = w.n_agents();
            for row in acts {
                let out = w.step(&row[..n], &cfg).unwrap();
                for (i, a) in w.agents.iter().enumerate() {
                    prop_assert!(w.bounds.contains(a.pose.x, a.pose.y));
                    prop_assert!(!w.bounds.disc_hits_wall(a.pose.x, a.pose.y, a.radius));
                    prop_assert!(a.pose.heading > -PI && a.pose.heading <= PI);
                    prop_assert!(a.v_lin.abs() <= cfg.v_max_lin + 1e-12);
                    prop_assert!(a.v_ang.abs() <= cfg.v_max_ang + 1e-12);
                    for b in &w.agents[i + 1..] {
                        prop_assert!(!discs_overlap(a, b));
                    }
                }
                if out.done.is_done() { break; }
            }
        }

        #[test]
        fn step_is_deterministic(seed in 0u64..1000, codes in proptest::collection::vec(0u8..7, 6)) {
            let cfg = ArenaConfig::default();
            let mut a = reset(&cfg, seed);
            let mut b = a.clone();
            let acts: Vec<Action> = codes[..a.n_agents()].iter().map(|&c| Action::new(c).unwrap()).collect();
            let oa = a.step(&acts, &cfg).unwrap();
            let ob = b.step(&acts, &cfg).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(oa, ob);
        }
    }
}
