//! Distraction-aware reward structure.
//!
//! The tracker and target play a zero-sum game on the tracker-centric
//! distance `d(1, 2)` to the expected target point. Each distractor shares
//! the target's reward minus its own distance to that point, which pulls it
//! into the tracker's view.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::arena::{WorldState, TARGET, TRACKER};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, relative_pose, PolarRel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub rho_star: f64,
    pub theta_star: f64,
    pub rho_max: f64,
    pub theta_max: f64,
    pub collision_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            rho_star: 2.5,
            theta_star: 0.0,
            rho_max: 5.0,
            theta_max: FRAC_PI_2,
            collision_penalty: -1.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max > 0.0) || !(self.theta_max > 0.0) {
            return Err(Error::Config("reward.rho_max and reward.theta_max must be > 0".into()));
        }
        if !self.rho_star.is_finite() || !self.theta_star.is_finite() || !self.collision_penalty.is_finite() {
            return Err(Error::Config("reward parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub r1: f64,
    pub r2: f64,
    pub r3: Vec<f64>,
}

impl RewardVector {
    /// Reward for the agent at world index `i`.
    pub fn for_agent(&self, i: usize) -> f64 {
        match i {
            TRACKER => self.r1,
            TARGET => self.r2,
            j => self.r3[j - 2],
        }
    }
}

/// Tracker-centric distance to the expected point; each normalized term is
/// clipped to `[0, 1]`, so the result lies in `[0, 2]`.
pub fn rel_distance(rel: &PolarRel, p: &RewardParams) -> f64 {
    let dr = ((rel.rho - p.rho_star).abs() / p.rho_max).min(1.0);
    let dt = (normalize_angle(rel.theta - p.theta_star).abs() / p.theta_max).min(1.0);
    dr + dt
}

/// Rewards before collision penalties.
pub fn base_rewards(world: &WorldState, p: &RewardParams) -> RewardVector {
    assert!(world.n_agents() >= 2, "reward needs a tracker and a target");
    let tracker = &world.agents[TRACKER].pose;
    let d_target = rel_distance(&relative_pose(tracker, &world.agents[TARGET].pose), p);
    let r1 = 1.0 - d_target;
    let r2 = -r1;
    let r3 = world.agents[2..]
        .iter()
        .map(|a| r2 - rel_distance(&relative_pose(tracker, &a.pose), p))
        .collect();
    RewardVector { r1, r2, r3 }
}

pub fn compute_rewards(world: &WorldState, collisions: &[bool], p: &RewardParams) -> RewardVector {
    let mut r = base_rewards(world, p);
    for (i, &hit) in collisions.iter().enumerate() {
        if !hit {
            continue;
        }
        match i {
            TRACKER => r.r1 += p.collision_penalty,
            TARGET => r.r2 += p.collision_penalty,
            j => r.r3[j - 2] += p.collision_penalty,
        }
    }
    r
}
