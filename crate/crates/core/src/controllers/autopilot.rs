use super::lane_change::{plan_lane_change, track_centerline, track_path, LaneChangePath, PathTracking};
use super::pi::{pi_follow, pi_velocity, static_floor, PiState};
use super::{arbitrate, Actuators, ControlTargets, Mode};
use crate::config::{ControllerGains, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::sim::WorldState;

const SETTLED_HEADING_RAD: f64 = 0.01;

/// Actuator command for one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub accel: f64,
    pub steer: f64,
    pub mode: Mode,
    /// True on the period a lane change is initiated.
    pub lane_change_started: bool,
}

#[derive(Debug, Clone)]
struct ActiveChange {
    path: LaneChangePath,
    path_done: bool,
}

/// The full low-level stack: arbitration, lane-change latch, PI loops and
/// Stanley steering. Holds the integrator and latch state of one rollout.
#[derive(Debug, Clone)]
pub struct Autopilot {
    gains: ControllerGains,
    sim: SimConfig,
    act: Actuators,
    velocity: PiState,
    follow: PiState,
    active: Option<ActiveChange>,
}

impl Autopilot {
    pub fn new(gains: &ControllerGains, sim: &SimConfig) -> Self {
        Self {
            gains: gains.clone(),
            sim: sim.clone(),
            act: Actuators::from(sim),
            velocity: PiState::default(),
            follow: PiState::default(),
            active: None,
        }
    }

    pub fn is_changing_lanes(&self) -> bool {
        self.active.is_some()
    }

    pub fn step(&mut self, state: &WorldState, targets: &ControlTargets) -> Result<Command> {
        if !targets.is_finite() {
            return Err(invalid(format!("non-finite control targets {targets:?}")));
        }
        let gains = &self.gains.clone();
        let ego = &state.ego;
        let in_path = state.vehicle_ahead_in_path(gains.in_path_half_width_m);

        let mut mode = arbitrate(state, targets, gains, &self.sim, self.active.is_some());
        let mut started = false;
        if mode == Mode::LaneChange && self.active.is_none() {
            let target_lane = 1 - ego.lane.min(1);
            match plan_lane_change(ego, in_path.map(|(t, _)| &t.state), target_lane, ego.v, gains, &self.sim) {
                Ok(path) => {
                    self.active = Some(ActiveChange { path, path_done: false });
                    started = true;
                }
                Err(Error::ManeuverRejected(_)) => {
                    mode = match in_path {
                        Some((_, gap)) if gap < gains.follow_switch_m => Mode::Follow,
                        _ => Mode::Velocity,
                    };
                }
                Err(e) => return Err(e),
            }
        }

        let steer = self.steer(state);

        let (a_v, s_v) = pi_velocity(ego, passing_speed(state, targets.v_hat, gains), gains, self.velocity, &self.act);
        let accel = match (mode, in_path) {
            (Mode::Follow, Some((lead, _))) => {
                let (a_f, s_f) = pi_follow(ego, Some(&lead.state), targets.f_hat, gains, self.follow, &self.act)?;
                self.follow = s_f;
                if a_v <= a_f {
                    self.velocity = s_v;
                }
                a_v.min(a_f)
            }
            _ => {
                self.velocity = s_v;
                self.follow = PiState::default();
                match in_path {
                    Some((_, gap)) if gap < static_floor(ego.v, gains) => self.act.accel_min,
                    _ => a_v,
                }
            }
        };

        Ok(Command { accel, steer, mode, lane_change_started: started })
    }

    fn steer(&mut self, state: &WorldState) -> f64 {
        let ego = &state.ego;
        let (k, wheelbase) = (self.gains.stanley_k, self.sim.wheelbase_m);
        let Some(active) = self.active.as_mut() else {
            return track_centerline(ego, self.sim.lane_center(ego.lane), k, wheelbase, &self.act);
        };
        if !active.path_done {
            match track_path(ego, &active.path, k, wheelbase, &self.act) {
                PathTracking::Steer(s) => return s,
                PathTracking::Complete => active.path_done = true,
            }
        }
        let y_target = self.sim.lane_center(active.path.target_lane);
        let steer = track_centerline(ego, y_target, k, wheelbase, &self.act);
        if (ego.y - y_target).abs() < self.gains.settle_tolerance_m && ego.heading.abs() < SETTLED_HEADING_RAD {
            self.active = None;
        }
        steer
    }
}

/// Velocity setpoint with the passing-lane floor applied: an ego in lane 1
/// never settles alongside or behind the lead it is passing.
fn passing_speed(state: &WorldState, v_hat: f64, gains: &ControllerGains) -> f64 {
    let ego = &state.ego;
    match state.tracked_lead() {
        Some(lead) if ego.lane == 1 && lead.state.x - ego.x > -gains.pass_floor_clear_m => {
            v_hat.max(lead.state.v + gains.pass_speed_margin_mps)
        }
        _ => v_hat,
    }
}
