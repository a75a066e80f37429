//! Experiment configuration.
//!
//! A single JSON document with one section per subsystem. Every artifact
//! written by the pipeline records [`Config::hash`] so outputs can be traced
//! back to the exact settings that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

/// 55 mph in m/s.
pub const POSTED_SPEED_55_MPH: f64 = 55.0 * MPS_PER_MPH;
pub const MPS_PER_MPH: f64 = 0.44704;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimConfig,
    pub controllers: ControllerGains,
    pub personas: PersonaConfig,
    pub learn: LearnConfig,
    pub stylespace: StylespaceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Length of the observation history fed to the predictors.
    pub window_s: f64,
    pub posted_speed_mps: f64,
    /// Gap reported when no lead vehicle is tracked.
    pub sentinel_gap_m: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_max: f64,
    pub v_max: f64,
    pub wheelbase_m: f64,
    pub lane_width_m: f64,
    pub vehicle_length_m: f64,
    pub vehicle_width_m: f64,
    pub lead_spawn_ahead_m: f64,
    /// A lead that pulls this far ahead is retired and replaced.
    pub lead_retire_ahead_m: f64,
    pub offlane_mean_spacing_m: f64,
    pub offlane_min_spacing_m: f64,
    /// Off-lane cruise speeds are drawn uniformly from this range of
    /// fractions above the posted speed.
    pub offlane_speed_excess: [f64; 2],
    pub traffic_horizon_ahead_m: f64,
    pub traffic_horizon_behind_m: f64,
    /// Ego speed at t = 0; `None` starts at the posted speed.
    pub initial_speed_mps: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            window_s: 3.0,
            posted_speed_mps: POSTED_SPEED_55_MPH,
            sentinel_gap_m: 500.0,
            accel_min: -6.0,
            accel_max: 4.0,
            steer_max: 0.5,
            v_max: 45.0,
            wheelbase_m: 2.7,
            lane_width_m: 3.7,
            vehicle_length_m: 4.5,
            vehicle_width_m: 1.8,
            lead_spawn_ahead_m: 250.0,
            lead_retire_ahead_m: 400.0,
            offlane_mean_spacing_m: 400.0,
            offlane_min_spacing_m: 40.0,
            offlane_speed_excess: [0.02, 0.1],
            traffic_horizon_ahead_m: 700.0,
            traffic_horizon_behind_m: 400.0,
            initial_speed_mps: None,
        }
    }
}

impl SimConfig {
    /// Number of samples in an observation window.
    pub fn window_len(&self) -> usize {
        (self.window_s / self.dt).round() as usize
    }

    pub fn steps_for(&self, duration_s: f64) -> usize {
        (duration_s / self.dt).round() as usize
    }

    pub fn lane_center(&self, lane: u8) -> f64 {
        f64::from(lane) * self.lane_width_m
    }

    pub fn road_bounds(&self) -> (f64, f64) {
        (-0.5 * self.lane_width_m, 1.5 * self.lane_width_m)
    }
}

/// Low-level controller gains and arbitration thresholds. All SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_f: f64,
    pub ki_f: f64,
    /// Relative-speed gain of the following controller.
    pub kv_f: f64,
    pub stanley_k: f64,
    /// Gap below which the velocity controller hands over to following (λ).
    pub follow_switch_m: f64,
    /// Lane-change probability threshold (δ).
    pub lane_change_threshold: f64,
    /// Hard safety floor on the gap to the vehicle ahead.
    pub f_min: f64,
    /// Minimum time headway before emergency braking.
    pub tau_min: f64,
    pub lane_change_time_s: f64,
    pub lane_change_min_length_m: f64,
    /// With nothing to pass, a lane change is vetoed while a slower vehicle is
    /// this close ahead in the target lane.
    pub slower_ahead_clear_m: f64,
    /// Lateral distance within which another vehicle counts as in the ego's path.
    pub in_path_half_width_m: f64,
    /// Lane change is complete once the ego is this close to the target centerline.
    pub settle_tolerance_m: f64,
    /// In the passing lane the ego holds at least the tracked lead's speed
    /// plus this margin until it is `pass_floor_clear_m` past the lead.
    pub pass_speed_margin_mps: f64,
    pub pass_floor_clear_m: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp_v: 0.8,
            ki_v: 0.05,
            kp_f: 0.4,
            ki_f: 0.02,
            kv_f: 1.0,
            stanley_k: 2.0,
            follow_switch_m: 80.0,
            lane_change_threshold: 0.5,
            f_min: 5.0,
            tau_min: 0.5,
            lane_change_time_s: 2.5,
            lane_change_min_length_m: 30.0,
            slower_ahead_clear_m: 80.0,
            in_path_half_width_m: 2.2,
            settle_tolerance_m: 0.1,
            pass_speed_margin_mps: 1.0,
            pass_floor_clear_m: 60.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            ("kp_v", self.kp_v),
            ("ki_v", self.ki_v),
            ("kp_f", self.kp_f),
            ("ki_f", self.ki_f),
            ("kv_f", self.kv_f),
            ("stanley_k", self.stanley_k),
            ("follow_switch_m", self.follow_switch_m),
            ("f_min", self.f_min),
            ("tau_min", self.tau_min),
        ];
        for (name, value) in gains {
            if !(value > 0.0) {
                return Err(invalid(format!("controllers.{name} must be > 0, got {value}")));
            }
        }
        if !(self.lane_change_threshold > 0.0 && self.lane_change_threshold < 1.0) {
            return Err(invalid("controllers.lane_change_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaConfig {
    /// Stationary standard deviation of the Ornstein–Uhlenbeck speed jitter.
    pub speed_jitter_mps: f64,
    pub ou_theta: f64,
    /// Per-parameter relative perturbation drawn from the persona seed.
    pub param_spread: f64,
    /// A lead must be at least this much slower than the target speed to be passed.
    pub pass_speed_margin_mps: f64,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            speed_jitter_mps: 0.25,
            ou_theta: 0.5,
            param_spread: 0.1,
            pass_speed_margin_mps: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Weight on the lane-change cross-entropy.
    pub c2: f64,
    /// Weight on the style loss, which is measured in ADB points.
    pub c4: f64,
    pub speed_norm: f64,
    pub gap_norm: f64,
    pub lateral_norm: f64,
    /// Output scale of the following-distance head (m per softplus unit).
    pub follow_out_scale_m: f64,
    /// Output scale of the velocity head (m/s per softplus unit).
    pub velocity_out_scale_mps: f64,
    /// Residual unit of the following-distance loss.
    pub follow_loss_unit_m: f64,
    /// Residual unit of the velocity loss.
    pub velocity_loss_unit_mps: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub sample_stride: usize,
    pub val_fraction: f64,
    /// Lane-change label stays on for this long after initiation.
    pub label_smear_s: f64,
    /// A lead counts as slow when it is this much below the demonstrator's
    /// free-road speed.
    pub intent_speed_margin_mps: f64,
    /// Smallest gap to a same-lane lead that still counts as free road.
    pub free_road_gap_m: f64,
    /// Relative speed below which a close same-lane lead counts as steady following.
    pub follow_rel_speed_tol: f64,
    /// Largest gap change over one observation window that still counts as steady following.
    pub follow_gap_drift_m: f64,
    pub pos_weight_cap: f64,
    /// Standard deviation of the Gaussian jitter added to every embedding
    /// once per training batch. Keeps the predictors smooth between drivers.
    pub embed_noise: f64,
    pub fit_steps: usize,
    pub fit_learning_rate: f64,
    pub fit_restarts: usize,
    pub fit_max_samples: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            hidden_layers: 2,
            c2: 5.0,
            c4: 10.0 / (55.0 * 55.0),
            speed_norm: 40.0,
            gap_norm: 500.0,
            lateral_norm: 3.7,
            follow_out_scale_m: 60.0,
            velocity_out_scale_mps: 40.0,
            follow_loss_unit_m: 5.0,
            velocity_loss_unit_mps: 1.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 256,
            epochs: 200,
            patience: 20,
            sample_stride: 5,
            val_fraction: 0.2,
            label_smear_s: 0.5,
            intent_speed_margin_mps: 0.5,
            free_road_gap_m: 150.0,
            follow_rel_speed_tol: 0.5,
            follow_gap_drift_m: 1.0,
            pos_weight_cap: 100.0,
            embed_noise: 1.0,
            fit_steps: 300,
            fit_learning_rate: 0.05,
            fit_restarts: 4,
            fit_max_samples: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StylespaceConfig {
    /// ADB shift for the aggressive / cautious conditions.
    pub condition_shift_adb: f64,
}

impl Default for StylespaceConfig {
    fn default() -> Self {
        Self { condition_shift_adb: 15.0 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim.dt > 0.0 && self.sim.dt <= 0.5) {
            return Err(invalid("sim.dt must lie in (0, 0.5]"));
        }
        if self.sim.window_len() < 2 {
            return Err(invalid("sim.window_s must cover at least two steps"));
        }
        if !(self.sim.posted_speed_mps > 0.0) {
            return Err(invalid("sim.posted_speed_mps must be > 0"));
        }
        self.controllers.validate()?;
        if self.learn.batch_size == 0 || self.learn.hidden_width == 0 || self.learn.sample_stride == 0 {
            return Err(invalid("learn.batch_size, hidden_width and sample_stride must be > 0"));
        }
        Ok(())
    }

    /// Applies `section.field=value` overrides. Values are parsed as JSON and
    /// fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| invalid(format!("override `{item}` is not of the form key.path=value")))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for key in path.split('.') {
                slot = slot
                    .get_mut(key)
                    .ok_or_else(|| invalid(format!("unknown config field `{path}`")))?;
            }
            *slot = value;
        }
        let cfg: Config = serde_json::from_value(doc)
            .map_err(|e| invalid(format!("override produced an invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short SHA-256 digest of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
