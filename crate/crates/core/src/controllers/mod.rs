//! Low-level controllers that turn high-level setpoints into actuator commands.
//!
//! Longitudinal control is a PI speed loop and a PI gap loop; lateral control
//! is a Stanley tracker that follows a cubic Bézier lane-change path or the
//! current lane centerline. [`arbitrate`] picks which of them is in charge.

mod arbitrate;
mod autopilot;
mod lane_change;
mod pi;

use serde::{Deserialize, Serialize};

pub use arbitrate::{arbitrate, lane_change_legal};
pub use autopilot::{Autopilot, Command};
pub use lane_change::{plan_lane_change, track_centerline, track_path, LaneChangePath, PathTracking};
pub use pi::{pi_follow, pi_velocity, PiState};

use crate::config::SimConfig;

/// High-level setpoints produced by a driver model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlTargets {
    /// Desired following distance (m).
    pub f_hat: f64,
    /// Probability that a lane change should start now.
    pub l_hat: f64,
    /// Desired speed (m/s).
    pub v_hat: f64,
    /// Predicted aggression score (ADB points).
    pub s_hat: f64,
}

impl ControlTargets {
    pub fn is_finite(&self) -> bool {
        self.f_hat.is_finite() && self.l_hat.is_finite() && self.v_hat.is_finite() && self.s_hat.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Velocity,
    Follow,
    LaneChange,
}

/// Actuator limits and control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuators {
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_max: f64,
    pub dt: f64,
}

impl From<&SimConfig> for Actuators {
    fn from(cfg: &SimConfig) -> Self {
        Self { accel_min: cfg.accel_min, accel_max: cfg.accel_max, steer_max: cfg.steer_max, dt: cfg.dt }
    }
}

impl Actuators {
    pub fn clamp_accel(&self, a: f64) -> f64 {
        a.clamp(self.accel_min, self.accel_max)
    }

    pub fn clamp_steer(&self, s: f64) -> f64 {
        s.clamp(-self.steer_max, self.steer_max)
    }
}
