//! Poses and the tracker-centric polar encoding used as policy input.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Distances below this are treated as coincident; the bearing is then 0.
pub const DEGENERATE_RHO: f64 = 1e-9;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -π after the subtraction above only via
    // rounding; fold it onto +π.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Applies a rigid motion: rotate by `angle` about the origin, then translate.
    pub fn transformed(&self, dx: f64, dy: f64, angle: f64) -> Pose {
        let (s, c) = angle.sin_cos();
        Pose::new(
            c * self.x - s * self.y + dx,
            s * self.x + c * self.y + dy,
            self.heading + angle,
        )
    }
}

/// Position of one entity relative to an observer, in the observer's frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarRel {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
}

impl PolarRel {
    pub fn new(rho: f64, theta: f64, phi: f64) -> Self {
        PolarRel {
            rho,
            theta: normalize_angle(theta),
            phi: normalize_angle(phi),
        }
    }
}

/// `(rho / rho_max, cos θ, sin θ, cos φ, sin φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityFeature {
    pub rho_norm: f64,
    pub cos_theta: f64,
    pub sin_theta: f64,
    pub cos_phi: f64,
    pub sin_phi: f64,
}

impl EntityFeature {
    pub const LEN: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.rho_norm,
            self.cos_theta,
            self.sin_theta,
            self.cos_phi,
            self.sin_phi,
        ]
    }
}

pub fn relative_pose(observer: &Pose, other: &Pose) -> PolarRel {
    let dx = other.x - observer.x;
    let dy = other.y - observer.y;
    let rho = dx.hypot(dy);
    let theta = if rho < DEGENERATE_RHO {
        0.0
    } else {
        let (s, c) = observer.heading.sin_cos();
        // rotate the offset into the observer frame
        let fx = c * dx + s * dy;
        let fy = -s * dx + c * dy;
        fy.atan2(fx)
    };
    PolarRel::new(rho, theta, other.heading - observer.heading)
}

/// Encodes a relative pose. `rho_norm` is not clipped, entities beyond
/// `rho_max` encode above 1.
pub fn encode_entity(rel: &PolarRel, rho_max: f64) -> EntityFeature {
    debug_assert!(rho_max > 0.0);
    let (sin_theta, cos_theta) = rel.theta.sin_cos();
    let (sin_phi, cos_phi) = rel.phi.sin_cos();
    EntityFeature {
        rho_norm: rel.rho / rho_max,
        cos_theta,
        sin_theta,
        cos_phi,
        sin_phi,
    }
}
