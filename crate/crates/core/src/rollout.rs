//! Closed-loop episodes: a planner produces setpoints, the autopilot turns
//! them into commands, the world advances, and every step is recorded.

use std::collections::VecDeque;

use crate::config::Config;
use crate::controllers::{Autopilot, ControlTargets, Mode};
use crate::error::Result;
use crate::sim::{DemonstrationTrace, Frame, Scenario, TraceMeta, TraceRecord, World, WorldState};

/// Source of high-level setpoints.
pub trait Planner {
    /// `frames` holds the most recent observation window, oldest first.
    fn targets(&mut self, state: &WorldState, frames: &[Frame], lane_changing: bool) -> Result<ControlTargets>;
}

/// A recorded episode plus safety bookkeeping that the trace alone cannot show.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trace: DemonstrationTrace,
    /// Steps on which the ego overlapped another vehicle.
    pub collisions: usize,
    pub off_road_steps: usize,
    /// Smallest gap to any vehicle ahead in the ego's path.
    pub min_gap_ahead: f64,
    pub modes: Vec<Mode>,
}

pub fn run_episode<P: Planner + ?Sized>(
    planner: &mut P,
    scenario: &Scenario,
    cfg: &Config,
    adb_score: f64,
    condition: &str,
) -> Result<Episode> {
    let mut sim = cfg.sim.clone();
    sim.posted_speed_mps = scenario.posted_speed_mps;
    let ego_target = scenario.ego_target_speed_mps.unwrap_or(scenario.posted_speed_mps);
    let mut world = World::new(&sim, ego_target, scenario.seed)?;
    let mut autopilot = Autopilot::new(&cfg.controllers, &sim);

    let w = sim.window_len();
    let first = world.state().frame(sim.sentinel_gap_m);
    let mut frames: VecDeque<Frame> = std::iter::repeat_n(first, w).collect();

    let steps = sim.steps_for(scenario.duration_s);
    let mut records = Vec::with_capacity(steps);
    let mut modes = Vec::with_capacity(steps);
    let (mut collisions, mut off_road_steps, mut min_gap_ahead) = (0, 0, f64::INFINITY);
    for step in 0..steps {
        if step > 0 {
            frames.pop_front();
            frames.push_back(world.state().frame(sim.sentinel_gap_m));
        }
        let state = world.state();
        let targets = planner.targets(state, frames.make_contiguous(), autopilot.is_changing_lanes())?;
        let cmd = autopilot.step(state, &targets)?;
        records.push(TraceRecord::from_state(state, sim.sentinel_gap_m, cmd.lane_change_started));
        modes.push(cmd.mode);

        if state.has_collision(sim.vehicle_length_m, sim.vehicle_width_m) {
            collisions += 1;
        }
        if state.is_off_road(sim.road_bounds()) {
            off_road_steps += 1;
        }
        if let Some((_, gap)) = state.vehicle_ahead_in_path(cfg.controllers.in_path_half_width_m) {
            min_gap_ahead = min_gap_ahead.min(gap);
        }
        world = world.step(cmd.accel, cmd.steer, sim.dt)?;
    }

    let meta = TraceMeta {
        persona_id: scenario.persona_id.clone(),
        adb_score,
        seed: scenario.seed,
        condition: condition.to_string(),
        posted_speed_mps: scenario.posted_speed_mps,
        ego_target_speed_mps: ego_target,
        dt: sim.dt,
        duration_s: scenario.duration_s,
        config_hash: cfg.hash(),
    };
    Ok(Episode { trace: DemonstrationTrace { meta, records }, collisions, off_road_steps, min_gap_ahead, modes })
}
