//! Agent controllers and the opponent model pool.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arena::{bearing_to, Action, ArenaConfig};
use crate::error::{Error, Result};
use crate::geometry::{Pose, PolarRel};
use crate::nn::{Checkpoint, NetSpec, ParameterSet};
use crate::obs::Detection;
use crate::reward::RewardParams;

pub const WAYPOINT_REACHED: f64 = 0.5;
pub const RESAMPLE_STEPS: usize = 100;
pub const NAV_SPEED_RANGE: (f64, f64) = (0.5, 2.0);

/// Scripted navigator: heads for a random waypoint at a random speed.
#[derive(Debug, Clone, PartialEq)]
pub struct NavigatorState {
    pub waypoint: (f64, f64),
    pub set_speed: f64,
    pub steps_since_resample: usize,
    /// Accumulates `set_speed / v_max` so that discrete forward commands
    /// average out to the set speed.
    pub duty: f64,
}

impl NavigatorState {
    pub fn new(cfg: &ArenaConfig, rng: &mut impl Rng) -> Self {
        let mut s = NavigatorState {
            waypoint: (0.0, 0.0),
            set_speed: 0.0,
            steps_since_resample: 0,
            duty: 0.0,
        };
        s.resample(cfg, rng);
        s
    }

    fn resample(&mut self, cfg: &ArenaConfig, rng: &mut impl Rng) {
        let b = cfg.bounds();
        let r = cfg.agent_radius;
        self.waypoint = (
            rng.random_range(b.min_x + r..=b.max_x - r),
            rng.random_range(b.min_y + r..=b.max_y - r),
        );
        self.set_speed = rng.random_range(NAV_SPEED_RANGE.0..=NAV_SPEED_RANGE.1);
        self.steps_since_resample = 0;
        self.duty = 1.0;
    }

    pub fn act(&mut self, pose: &Pose, cfg: &ArenaConfig, rng: &mut impl Rng) -> Action {
        let (wx, wy) = self.waypoint;
        if (wx - pose.x).hypot(wy - pose.y) < WAYPOINT_REACHED || self.steps_since_resample >= RESAMPLE_STEPS {
            self.resample(cfg, rng);
        }
        self.steps_since_resample += 1;
        let b = bearing_to(pose, self.waypoint.0, self.waypoint.1);
        if b.abs() > 0.3 {
            return if b > 0.0 { Action::TURN_LEFT } else { Action::TURN_RIGHT };
        }
        self.duty += self.set_speed / cfg.v_max_lin;
        let advance = self.duty >= 1.0;
        if advance {
            self.duty -= 1.0;
        }
        match (b.abs() > 0.1, advance) {
            (false, true) => Action::FORWARD,
            (false, false) => Action::NOOP,
            (true, true) if b > 0.0 => Action::FORWARD_LEFT,
            (true, true) => Action::FORWARD_RIGHT,
            (true, false) if b > 0.0 => Action::TURN_LEFT,
            (true, false) => Action::TURN_RIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidParams {
    pub p_lin: f64,
    pub p_ang: f64,
    pub deadband_rho: f64,
    pub deadband_theta: f64,
}

impl Default for PidParams {
    fn default() -> Self {
        PidParams {
            p_lin: 1.0,
            p_ang: 2.0,
            deadband_rho: 0.3,
            deadband_theta: 0.1,
        }
    }
}

/// Continuous commands `(V_l, V_a)`. Positive `V_l` moves forward, positive
/// `V_a` turns left (counter-clockwise), matching the arena's bearing sign.
pub fn pid_command(rel: &PolarRel, p: &PidParams, reward: &RewardParams) -> (f64, f64) {
    let rho_err = rel.rho - reward.rho_star;
    let theta_err = rel.theta - reward.theta_star;
    (p.p_lin * rho_err, p.p_ang * theta_err)
}

/// Discretized control law. Every `(rho_err, theta_err)` maps to one action.
pub fn pid_act(rel: &PolarRel, p: &PidParams, reward: &RewardParams) -> Action {
    let (v_l, v_a) = pid_command(rel, p, reward);
    let lin_db = p.p_lin * p.deadband_rho;
    let ang_db = p.p_ang * p.deadband_theta;
    if v_a.abs() > ang_db {
        let left = v_a > 0.0;
        match (v_l > lin_db, left) {
            (true, true) => Action::FORWARD_LEFT,
            (true, false) => Action::FORWARD_RIGHT,
            (false, true) => Action::TURN_LEFT,
            (false, false) => Action::TURN_RIGHT,
        }
    } else if v_l > lin_db {
        Action::FORWARD
    } else if v_l < -lin_db {
        Action::BACKWARD
    } else {
        Action::NOOP
    }
}

/// Detection-driven tracker with nearest-neighbour association.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PidTracker {
    pub params: PidParams,
    estimate: Option<Detection>,
    pub lost: bool,
}

impl PidTracker {
    pub fn new(params: PidParams) -> Self {
        PidTracker {
            params,
            estimate: None,
            lost: false,
        }
    }

    pub fn reset(&mut self) {
        self.estimate = None;
        self.lost = false;
    }

    pub fn estimate(&self) -> Option<&Detection> {
        self.estimate.as_ref()
    }

    fn planar(rho: f64, theta: f64) -> (f64, f64) {
        (rho * theta.cos(), rho * theta.sin())
    }

    /// Picks the detection to follow: on the first step the one closest to
    /// the expected point, afterwards the one closest to the previous
    /// estimate, preferring detections whose appearance matches.
    fn associate(&self, detections: &[Detection], reward: &RewardParams) -> Option<Detection> {
        let (anchor, pool): ((f64, f64), Vec<&Detection>) = match &self.estimate {
            None => (Self::planar(reward.rho_star, reward.theta_star), detections.iter().collect()),
            Some(prev) => {
                let same: Vec<&Detection> = detections
                    .iter()
                    .filter(|d| d.appearance_id == prev.appearance_id)
                    .collect();
                let pool = if same.is_empty() { detections.iter().collect() } else { same };
                (Self::planar(prev.rho, prev.theta), pool)
            }
        };
        pool.into_iter()
            .min_by(|a, b| {
                let da = dist2(Self::planar(a.rho, a.theta), anchor);
                let db = dist2(Self::planar(b.rho, b.theta), anchor);
                da.total_cmp(&db)
            })
            .copied()
    }

    pub fn act(&mut self, detections: &[Detection], reward: &RewardParams) -> Action {
        match self.associate(detections, reward) {
            Some(d) => {
                self.estimate = Some(d);
                self.lost = false;
                pid_act(&PolarRel::new(d.rho, d.theta, 0.0), &self.params, reward)
            }
            None => {
                self.lost = true;
                Action::NOOP
            }
        }
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Greedy ties resolve to the lowest action code.
pub fn select_action(probs: &[f64; Action::COUNT], mode: ActMode, rng: &mut impl Rng) -> Action {
    match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for k in 1..Action::COUNT {
                if probs[k] > probs[best] {
                    best = k;
                }
            }
            Action::from_index(best)
        }
        ActMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Action::from_index(k);
                }
            }
            // rounding left u above the cumulative sum; take the last
            // action with non-zero mass
            let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
            Action::from_index(last)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub interaction_count: u64,
    pub target: ParameterSet,
    pub distractor: ParameterSet,
}

/// Target/distractor parameter snapshots saved during self-play.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    pub target_spec: NetSpec,
    pub distractor_spec: NetSpec,
    pub snapshots: Vec<Snapshot>,
}

pub const POOL_INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolManifestEntry {
    pub interaction_count: u64,
    pub target: String,
    pub distractor: String,
    pub target_sha256: String,
    pub distractor_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolManifest {
    pub format: u32,
    pub snapshots: Vec<PoolManifestEntry>,
}

impl PoolManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: PoolManifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("pool index: {e}")))?;
        if m.format != 1 {
            return Err(Error::Format(format!("pool index format {} unsupported", m.format)));
        }
        let mut last = None;
        for s in &m.snapshots {
            if last.is_some_and(|l| s.interaction_count <= l) {
                return Err(Error::Format("pool interaction counts must increase".into()));
            }
            last = Some(s.interaction_count);
            for f in [&s.target, &s.distractor] {
                if f.is_empty() || f.contains(['/', '\\']) || f.starts_with('.') {
                    return Err(Error::Format(format!("pool file name {f:?} is not a plain file name")));
                }
            }
        }
        Ok(m)
    }
}

impl ModelPool {
    pub fn new(target_spec: NetSpec, distractor_spec: NetSpec) -> Self {
        ModelPool {
            target_spec,
            distractor_spec,
            snapshots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn save(&mut self, count: u64, target: &ParameterSet, distractor: &ParameterSet) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if count <= last.interaction_count {
                return Err(Error::InvalidInput(format!(
                    "snapshot count {count} not after {}",
                    last.interaction_count
                )));
            }
        }
        self.snapshots.push(Snapshot {
            interaction_count: count,
            target: target.clone(),
            distractor: distractor.clone(),
        });
        Ok(())
    }

    /// Uniform draw over snapshots; returns the index.
    pub fn sample_index(&self, rng: &mut impl Rng) -> Result<usize> {
        if self.snapshots.is_empty() {
            return Err(Error::InvalidInput("model pool is empty".into()));
        }
        Ok(rng.random_range(0..self.snapshots.len()))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<&Snapshot> {
        Ok(&self.snapshots[self.sample_index(rng)?])
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.snapshots.len());
        for s in &self.snapshots {
            let t_name = format!("target_{:012}.ckpt", s.interaction_count);
            let d_name = format!("distractor_{:012}.ckpt", s.interaction_count);
            let t = Checkpoint::new(self.target_spec.clone(), s.target.clone());
            let d = Checkpoint::new(self.distractor_spec.clone(), s.distractor.clone());
            t.save(&dir.join(&t_name))?;
            d.save(&dir.join(&d_name))?;
            entries.push(PoolManifestEntry {
                interaction_count: s.interaction_count,
                target: t_name,
                distractor: d_name,
                target_sha256: t.content_hash(),
                distractor_sha256: d.content_hash(),
            });
        }
        let manifest = PoolManifest {
            format: 1,
            snapshots: entries,
        };
        fs::write(dir.join(POOL_INDEX), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let index: PathBuf = dir.join(POOL_INDEX);
        if !index.exists() {
            return Err(Error::MissingArtifact(index));
        }
        let manifest = PoolManifest::parse(&fs::read_to_string(&index)?)?;
        let mut pool: Option<ModelPool> = None;
        for e in &manifest.snapshots {
            let t = Checkpoint::load(&dir.join(&e.target))?;
            let d = Checkpoint::load(&dir.join(&e.distractor))?;
            if t.content_hash() != e.target_sha256 || d.content_hash() != e.distractor_sha256 {
                return Err(Error::Checkpoint(format!(
                    "snapshot {} does not match its recorded hash",
                    e.interaction_count
                )));
            }
            let p = pool.get_or_insert_with(|| ModelPool::new(t.spec.clone(), d.spec.clone()));
            if p.target_spec != t.spec || p.distractor_spec != d.spec {
                return Err(Error::Checkpoint("pool snapshots disagree on architecture".into()));
            }
            p.save(e.interaction_count, &t.params, &d.params)?;
        }
        pool.ok_or_else(|| Error::Format("pool index lists no snapshots".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::PolicyNet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(rho_err: f64, theta_err: f64) -> PolarRel {
        PolarRel::new(2.5 + rho_err, theta_err, 0.0)
    }

    #[test]
    fn pid_examples() {
        let (p, r) = (PidParams::default(), RewardParams::default());
        assert_eq!(pid_act(&rel(0.0, 0.0), &p, &r), Action::NOOP);
        assert_eq!(pid_act(&rel(1.0, 0.0), &p, &r), Action::FORWARD);
        assert_eq!(pid_act(&rel(1.0, -0.4), &p, &r), Action::FORWARD_RIGHT);
        assert_eq!(pid_act(&rel(1.0, 0.4), &p, &r), Action::FORWARD_LEFT);
        assert_eq!(pid_act(&rel(-1.0, 0.0), &p, &r), Action::BACKWARD);
        assert_eq!(pid_act(&rel(-1.0, 0.5), &p, &r), Action::TURN_LEFT);
        assert_eq!(pid_act(&rel(0.0, -0.5), &p, &r), Action::TURN_RIGHT);
    }

    #[test]
    fn pid_without_detections_is_lost() {
        let mut t = PidTracker::new(PidParams::default());
        assert_eq!(t.act(&[], &RewardParams::default()), Action::NOOP);
        assert!(t.lost);
    }

    #[test]
    fn pid_starts_on_detection_nearest_expected_point() {
        let mut t = PidTracker::new(PidParams::default());
        let dets = [
            Detection { rho: 1.0, theta: 0.5, appearance_id: 0 },
            Detection { rho: 2.6, theta: 0.02, appearance_id: 1 },
        ];
        t.act(&dets, &RewardParams::default());
        assert_eq!(t.estimate().unwrap().appearance_id, 1);
        // keeps following id 1 even when another id is closer to the old estimate
        let dets = [
            Detection { rho: 2.6, theta: 0.0, appearance_id: 0 },
            Detection { rho: 3.5, theta: 0.3, appearance_id: 1 },
        ];
        t.act(&dets, &RewardParams::default());
        assert_eq!(t.estimate().unwrap().appearance_id, 1);
    }

    #[test]
    fn greedy_tie_breaks_low_and_one_hot_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0 / 7.0; 7], ActMode::Greedy, &mut rng), Action::NOOP);
        let mut one_hot = [0.0; 7];
        one_hot[3] = 1.0;
        for _ in 0..100 {
            assert_eq!(select_action(&one_hot, ActMode::Sample, &mut rng), Action::TURN_LEFT);
            assert_eq!(select_action(&one_hot, ActMode::Greedy, &mut rng), Action::TURN_LEFT);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let probs = [0.1, 0.2, 0.05, 0.15, 0.2, 0.2, 0.1];
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| select_action(&probs, ActMode::Sample, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn navigator_decisions() {
        let cfg = ArenaConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nav = NavigatorState {
            waypoint: (5.0, 0.0),
            set_speed: cfg.v_max_lin,
            steps_since_resample: 0,
            duty: 0.0,
        };
        assert_eq!(nav.act(&Pose::new(0.0, 0.0, 0.0), &cfg, &mut rng), Action::FORWARD);
        assert_eq!(nav.act(&Pose::new(0.0, 0.0, -0.5), &cfg, &mut rng), Action::TURN_LEFT);
        assert_eq!(nav.act(&Pose::new(0.0, 0.0, 0.5), &cfg, &mut rng), Action::TURN_RIGHT);
        assert_eq!(nav.act(&Pose::new(0.0, 0.0, -0.2), &cfg, &mut rng), Action::FORWARD_LEFT);
    }

    #[test]
    fn navigator_resamples_at_waypoint_deterministically() {
        let cfg = ArenaConfig::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut nav = NavigatorState {
                waypoint: (0.2, 0.0),
                set_speed: 1.0,
                steps_since_resample: 3,
                duty: 0.0,
            };
            nav.act(&Pose::new(0.0, 0.0, 0.0), &cfg, &mut rng);
            nav
        };
        let a = run();
        assert_ne!(a.waypoint, (0.2, 0.0));
        assert_eq!(a.steps_since_resample, 1);
        assert!((0.5..=2.0).contains(&a.set_speed));
        assert_eq!(a, run());
    }

    #[test]
    fn navigator_average_speed_tracks_set_speed() {
        let cfg = ArenaConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut nav = NavigatorState {
            waypoint: (1000.0, 0.0),
            set_speed: 0.5,
            steps_since_resample: 0,
            duty: 0.0,
        };
        let forward = (0..80)
            .filter(|_| {
                nav.steps_since_resample = 0;
                nav.act(&Pose::new(0.0, 0.0, 0.0), &cfg, &mut rng) == Action::FORWARD
            })
            .count();
        assert_eq!(forward, 20);
    }

    fn tiny_pool(n: usize) -> ModelPool {
        let net = PolicyNet::new(NetSpec::new(5, 7, 2, 3)).unwrap();
        let mut pool = ModelPool::new(net.spec().clone(), net.spec().clone());
        for i in 0..n {
            pool.save((i as u64 + 1) * 50_000, &net.init_params(i as u64), &net.init_params(100 + i as u64))
                .unwrap();
        }
        pool
    }

    #[test]
    fn full_scale_snapshot_count() {
        let (total, interval) = (2_000_000u64, 50_000u64);
        assert_eq!(total / interval, 40);
        assert_eq!(tiny_pool(40).len(), 40);
    }

    #[test]
    fn pool_rejects_non_increasing_counts() {
        let mut pool = tiny_pool(2);
        let p = pool.snapshots[0].target.clone();
        assert!(pool.save(100_000, &p, &p).is_err());
        assert!(pool.save(150_000, &p, &p).is_ok());
    }

    #[test]
    fn single_snapshot_always_sampled() {
        let pool = tiny_pool(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(pool.sample_index(&mut rng).unwrap(), 0);
        }
        assert!(ModelPool::new(pool.target_spec.clone(), pool.target_spec.clone())
            .sample_index(&mut rng)
            .is_err());
    }

    #[test]
    fn pool_sampling_is_uniform() {
        let pool = tiny_pool(40);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 10_000;
        let mut counts = vec![0usize; 40];
        for _ in 0..draws {
            counts[pool.sample_index(&mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 40.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn pool_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pool = tiny_pool(3);
        pool.save_dir(dir.path()).unwrap();
        assert_eq!(ModelPool::load_dir(dir.path()).unwrap(), pool);
        fs::write(dir.path().join("distractor_000000100000.ckpt"), b"junk").unwrap();
        assert!(ModelPool::load_dir(dir.path()).is_err());
    }

    #[test]
    fn manifest_rejects_path_escapes() {
        let bad = r#"{"format":1,"snapshots":[{"interaction_count":1,"target":"../x","distractor":"d","target_sha256":"","distractor_sha256":""}]}"#;
        assert!(PoolManifest::parse(bad).is_err());
        let bad = r#"{"format":1,"snapshots":[
            {"interaction_count":5,"target":"a","distractor":"b","target_sha256":"","distractor_sha256":""},
            {"interaction_count":5,"target":"c","distractor":"d","target_sha256":"","distractor_sha256":""}]}"#;
        assert!(PoolManifest::parse(bad).is_err());
    }
}
