use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::schedule::shuffled_schedule;
use super::{Role, TrafficVehicle, VehicleState, WorldState};
use crate::config::SimConfig;
use crate::error::{invalid, Result};

// Removal bound beyond the spawn horizons; large enough that spawning and
// removal never alternate on the same vehicle.
const HORIZON_SLACK_M: f64 = 1000.0;

// Cruise law for traffic vehicles.
const TRAFFIC_MAX_ACCEL: f64 = 1.0;
const TRAFFIC_SPEED_GAIN: f64 = 0.5;
const TRAFFIC_GAP_GAIN: f64 = 0.4;
const TRAFFIC_REL_SPEED_GAIN: f64 = 1.0;
const TRAFFIC_STANDSTILL_GAP_M: f64 = 10.0;
const TRAFFIC_TIME_GAP_S: f64 = 1.0;

/// Highway state plus the seeded traffic generator that evolves it.
///
/// Stepping is a pure function of `self`: [`World::step`] returns a new world
/// and leaves the receiver untouched.
#[derive(Debug, Clone)]
pub struct World {
    state: WorldState,
    cfg: SimConfig,
    ego_target_speed: f64,
    rng: ChaCha8Rng,
    schedule: VecDeque<f64>,
    spawned_lead_speeds: Vec<f64>,
    next_id: u32,
}

impl World {
    /// A fresh episode: ego at the origin of lane 0, first lead ahead,
    /// off-lane traffic populated around the ego.
    pub fn new(cfg: &SimConfig, ego_target_speed: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schedule = shuffled_schedule(ego_target_speed, cfg.posted_speed_mps, &mut rng)?;
        let v0 = cfg.initial_speed_mps.unwrap_or(cfg.posted_speed_mps);
        let ego = VehicleState::in_lane(0.0, 0, cfg.lane_width_m, v0);
        let mut world = Self {
            state: WorldState { time: 0.0, ego, traffic: Vec::new(), posted_speed: cfg.posted_speed_mps },
            cfg: cfg.clone(),
            ego_target_speed,
            rng,
            schedule: schedule.into(),
            spawned_lead_speeds: Vec::new(),
            next_id: 0,
        };
        world.populate_off_lane();
        world.manage_lead()?;
        world.sort_traffic();
        Ok(world)
    }

    /// A world with hand-placed traffic and no automatic spawning of off-lane
    /// vehicles. Leads are still replaced from the schedule once passed.
    pub fn from_state(cfg: &SimConfig, state: WorldState, ego_target_speed: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schedule = shuffled_schedule(ego_target_speed, cfg.posted_speed_mps, &mut rng)?;
        let next_id = state.traffic.iter().map(|t| t.id + 1).max().unwrap_or(0);
        let mut world = Self {
            state,
            cfg: cfg.clone(),
            ego_target_speed,
            rng,
            schedule: schedule.into(),
            spawned_lead_speeds: Vec::new(),
            next_id,
        };
        world.sort_traffic();
        Ok(world)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Speeds of every lead spawned so far, in spawn order.
    pub fn spawned_lead_speeds(&self) -> &[f64] {
        &self.spawned_lead_speeds
    }

    /// Advances the world by `dt`. Commands are clamped to the actuator limits.
    pub fn step(&self, accel: f64, steer: f64, dt: f64) -> Result<World> {
        if !accel.is_finite() || !steer.is_finite() {
            return Err(invalid(format!("non-finite command (accel {accel}, steer {steer})")));
        }
        if !(dt > 0.0 && dt <= 0.5) {
            return Err(invalid(format!("dt must lie in (0, 0.5], got {dt}")));
        }
        let cfg = &self.cfg;
        let accel = accel.clamp(cfg.accel_min, cfg.accel_max);
        let steer = steer.clamp(-cfg.steer_max, cfg.steer_max);

        let mut next = self.clone();
        let traffic_accels: Vec<f64> =
            self.state.traffic.iter().map(|t| self.traffic_accel(t)).collect();

        integrate_bicycle(&mut next.state.ego, accel, steer, dt, cfg);
        next.state.ego.lane = lane_of(next.state.ego.y, cfg.lane_width_m);

        for (vehicle, a) in next.state.traffic.iter_mut().zip(traffic_accels) {
            let s = &mut vehicle.state;
            let v_new = (s.v + a * dt).clamp(0.0, cfg.v_max);
            s.x += 0.5 * (s.v + v_new) * dt;
            s.v = v_new;
        }
        next.state.time = self.state.time + dt;

        next.manage_lead()?;
        next.manage_off_lane();
        next.sort_traffic();
        Ok(next)
    }

    fn traffic_accel(&self, vehicle: &TrafficVehicle) -> f64 {
        let cfg = &self.cfg;
        let s = &vehicle.state;
        if let Some(a) = vehicle.forced_accel {
            return if s.v <= 0.0 { 0.0 } else { a };
        }
        let free = (TRAFFIC_SPEED_GAIN * (vehicle.cruise_speed - s.v)).clamp(-2.0, TRAFFIC_MAX_ACCEL);

        // Traffic yields to whatever is directly ahead in its lane, including the ego.
        let half_width = 1.2 * cfg.vehicle_width_m;
        let ego = &self.state.ego;
        let ahead = self
            .state
            .traffic
            .iter()
            .map(|t| &t.state)
            .chain(std::iter::once(ego))
            .filter(|o| o.x > s.x && (o.y - s.y).abs() < half_width)
            .min_by(|a, b| a.x.total_cmp(&b.x));
        let Some(ahead) = ahead else {
            return free;
        };
        let gap = ahead.x - s.x;
        if gap < TRAFFIC_STANDSTILL_GAP_M * 0.5 + 0.5 * s.v {
            return cfg.accel_min;
        }
        let desired = TRAFFIC_STANDSTILL_GAP_M + TRAFFIC_TIME_GAP_S * s.v;
        let follow = TRAFFIC_GAP_GAIN * (gap - desired) + TRAFFIC_REL_SPEED_GAIN * (ahead.v - s.v);
        free.min(follow).clamp(cfg.accel_min, TRAFFIC_MAX_ACCEL)
    }

    /// Retires a lead once it is passed (ego back in lane 0 ahead of it), has
    /// pulled away, or has been left far behind, then spawns the next one.
    fn manage_lead(&mut self) -> Result<()> {
        let ego = self.state.ego;
        let sentinel = self.cfg.sentinel_gap_m;
        let retire_ahead = self.cfg.lead_retire_ahead_m;
        self.state.traffic.retain(|t| {
            if t.role != Role::Lead {
                return true;
            }
            let dx = t.state.x - ego.x;
            let passed = ego.lane == 0 && dx < 0.0;
            !(passed || dx > retire_ahead || dx < -sentinel)
        });
        if self.state.tracked_lead().is_none() {
            if self.schedule.is_empty() {
                let fresh =
                    shuffled_schedule(self.ego_target_speed, self.cfg.posted_speed_mps, &mut self.rng)?;
                self.schedule.extend(fresh);
            }
            let speed = self.schedule.pop_front().expect("schedule refilled");
            let state =
                VehicleState::in_lane(ego.x + self.cfg.lead_spawn_ahead_m, 0, self.cfg.lane_width_m, speed);
            let id = self.take_id();
            self.state.traffic.push(TrafficVehicle::cruising(id, Role::Lead, state));
            self.spawned_lead_speeds.push(speed);
        }
        Ok(())
    }

    fn off_lane_spacing(&mut self) -> f64 {
        let exp = Exp::new(1.0 / self.cfg.offlane_mean_spacing_m).expect("positive rate");
        exp.sample(&mut self.rng).max(self.cfg.offlane_min_spacing_m)
    }

    fn populate_off_lane(&mut self) {
        let ego_x = self.state.ego.x;
        let mut x = ego_x - self.cfg.traffic_horizon_behind_m
            - self.rng.random::<f64>() * self.cfg.offlane_mean_spacing_m;
        while x < ego_x + self.cfg.traffic_horizon_ahead_m {
            self.push_off_lane(x);
            x += self.off_lane_spacing();
        }
    }

    fn manage_off_lane(&mut self) {
        let ego_x = self.state.ego.x;
        let (ahead, behind) = (self.cfg.traffic_horizon_ahead_m, self.cfg.traffic_horizon_behind_m);
        self.state.traffic.retain(|t| {
            t.role != Role::OffLane
                || (t.state.x > ego_x - behind - HORIZON_SLACK_M && t.state.x < ego_x + ahead + HORIZON_SLACK_M)
        });
        loop {
            let front = self.off_lane_extreme(f64::max);
            match front {
                Some(x) if x >= ego_x + ahead => break,
                Some(x) => {
                    let next = x + self.off_lane_spacing();
                    self.push_off_lane(next);
                }
                None => {
                    self.push_off_lane(ego_x + ahead);
                }
            }
        }
        while let Some(x) = self.off_lane_extreme(f64::min) {
            if x <= ego_x - behind {
                break;
            }
            let next = x - self.off_lane_spacing();
            self.push_off_lane(next);
        }
    }

    fn off_lane_extreme(&self, pick: fn(f64, f64) -> f64) -> Option<f64> {
        self.state
            .traffic
            .iter()
            .filter(|t| t.role == Role::OffLane)
            .map(|t| t.state.x)
            .reduce(pick)
    }

    fn push_off_lane(&mut self, x: f64) {
        let [lo, hi] = self.cfg.offlane_speed_excess;
        let excess = lo + (hi - lo) * self.rng.random::<f64>();
        let speed = self.cfg.posted_speed_mps * (1.0 + excess);
        let state = VehicleState::in_lane(x, 1, self.cfg.lane_width_m, speed);
        let id = self.take_id();
        self.state.traffic.push(TrafficVehicle::cruising(id, Role::OffLane, state));
    }

    fn take_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn sort_traffic(&mut self) {
        self.state.traffic.sort_by(|a, b| a.state.x.total_cmp(&b.state.x).then(a.id.cmp(&b.id)));
    }
}

fn lane_of(y: f64, lane_width: f64) -> u8 {
    if y > 0.5 * lane_width {
        1
    } else {
        0
    }
}

/// Kinematic bicycle model, integrated over the distance travelled in the step.
fn integrate_bicycle(ego: &mut VehicleState, accel: f64, steer: f64, dt: f64, cfg: &SimConfig) {
    let v_new = (ego.v + accel * dt).clamp(0.0, cfg.v_max);
    let ds = 0.5 * (ego.v + v_new) * dt;
    ego.x += ds * ego.heading.cos();
    ego.y += ds * ego.heading.sin();
    ego.heading = (ego.heading + ds / cfg.wheelbase_m * steer.tan()).clamp(-1.0, 1.0);
    ego.v = v_new;
}
