//! Observations: grounded (identity-labelled, used by meta policies) and
//! detection-based (anonymous, noisy, field-of-view limited, used by the
//! student tracker).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arena::{in_fov, Action, ArenaConfig, WorldState, TARGET, TRACKER};
use crate::error::{Error, Result};
use crate::geometry::{encode_entity, relative_pose, EntityFeature};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedObservation {
    pub features: Vec<EntityFeature>,
    /// Only set for target and distractor observations.
    pub tracker_last_action: Option<[f64; Action::COUNT]>,
}

/// Entity order: the tracker sees the target first; everyone else sees the
/// tracker first (distractors then the target). Remaining distractors follow
/// by ascending distance.
pub fn grounded_obs(
    world: &WorldState,
    agent_index: usize,
    rho_max: f64,
    tracker_last_action: Action,
) -> Result<GroundedObservation> {
    let n = world.n_agents();
    if agent_index >= n {
        return Err(Error::InvalidInput(format!("agent index {agent_index} >= {n}")));
    }
    let me = &world.agents[agent_index].pose;
    let rel = |j: usize| relative_pose(me, &world.agents[j].pose);

    let mut leading: Vec<usize> = match agent_index {
        TRACKER => vec![TARGET],
        TARGET => vec![TRACKER],
        _ => vec![TRACKER, TARGET],
    };
    let mut rest: Vec<(usize, f64)> = (2..n)
        .filter(|&j| j != agent_index)
        .map(|j| (j, rel(j).rho))
        .collect();
    rest.sort_by(|a, b| a.1.total_cmp(&b.1));
    leading.extend(rest.into_iter().map(|(j, _)| j));

    let features = leading.into_iter().map(|j| encode_entity(&rel(j), rho_max)).collect();
    let tracker_last_action = (agent_index != TRACKER).then(|| tracker_last_action.one_hot());
    Ok(GroundedObservation {
        features,
        tracker_last_action,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub sigma_rho: f64,
    pub sigma_theta: f64,
    pub appearance_pool: usize,
    /// Give every entity its own appearance id (requires a large enough pool).
    pub unique_appearances: bool,
    /// Probability that an in-view entity produces no detection.
    pub dropout: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            sigma_rho: 0.1,
            sigma_theta: 0.02,
            appearance_pool: 3,
            unique_appearances: false,
            dropout: 0.0,
        }
    }
}

impl DetectionConfig {
    /// Zero-noise detections with one appearance per entity.
    pub fn clean() -> Self {
        DetectionConfig {
            sigma_rho: 0.0,
            sigma_theta: 0.0,
            appearance_pool: 5,
            unique_appearances: true,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_rho >= 0.0) || !(self.sigma_theta >= 0.0) {
            return Err(Error::Config("detection noise must be >= 0".into()));
        }
        if self.appearance_pool == 0 || self.appearance_pool > 64 {
            return Err(Error::Config("detection.appearance_pool must lie in 1..=64".into()));
        }
        if self.unique_appearances && self.appearance_pool < 5 {
            return Err(Error::Config("unique appearances need appearance_pool >= 5".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config("detection.dropout must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Width of a single encoded detection.
    pub fn feature_len(&self) -> usize {
        3 + self.appearance_pool
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rho: f64,
    pub theta: f64,
    pub appearance_id: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionObservation {
    pub detections: Vec<Detection>,
    pub last_self_action: [f64; Action::COUNT],
}

/// Per-episode appearance ids, indexed by world agent index. The tracker's
/// entry is unused.
pub fn sample_appearances(n_agents: usize, cfg: &DetectionConfig, rng: &mut impl Rng) -> Vec<u8> {
    (0..n_agents)
        .map(|i| {
            if cfg.unique_appearances {
                (i.saturating_sub(1) % cfg.appearance_pool) as u8
            } else {
                rng.random_range(0..cfg.appearance_pool) as u8
            }
        })
        .collect()
}

/// Detections seen by the tracker.
pub fn detection_obs(
    world: &WorldState,
    arena: &ArenaConfig,
    cfg: &DetectionConfig,
    appearances: &[u8],
    last_self_action: Action,
    rng: &mut impl Rng,
) -> DetectionObservation {
    let tracker = &world.agents[TRACKER];
    let rho_noise = Normal::new(0.0, cfg.sigma_rho).expect("validated sigma");
    let theta_noise = Normal::new(0.0, cfg.sigma_theta).expect("validated sigma");
    let mut detections = Vec::new();
    for (j, other) in world.agents.iter().enumerate().skip(1) {
        if !in_fov(tracker, other, arena) {
            continue;
        }
        if cfg.dropout > 0.0 && rng.random::<f64>() < cfg.dropout {
            continue;
        }
        let rel = relative_pose(&tracker.pose, &other.pose);
        let (mut rho, mut theta) = (rel.rho, rel.theta);
        if cfg.sigma_rho > 0.0 {
            rho = (rho + rho_noise.sample(rng)).max(0.0);
        }
        if cfg.sigma_theta > 0.0 {
            theta += theta_noise.sample(rng);
        }
        detections.push(Detection {
            rho,
            theta,
            appearance_id: appearances[j],
        });
    }
    detections.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.theta.total_cmp(&b.theta)));
    DetectionObservation {
        detections,
        last_self_action: last_self_action.one_hot(),
    }
}

/// Network input for one detection: `(rho / rho_max, cos θ, sin θ, one-hot id)`.
pub fn encode_detection(d: &Detection, rho_max: f64, pool: usize) -> Vec<f64> {
    let mut v = vec![0.0; 3 + pool];
    v[0] = d.rho / rho_max;
    v[1] = d.theta.cos();
    v[2] = d.theta.sin();
    v[3 + (d.appearance_id as usize).min(pool - 1)] = 1.0;
    v
}
