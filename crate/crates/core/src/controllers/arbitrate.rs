use super::{ControlTargets, Mode};
use crate::config::{ControllerGains, SimConfig};
use crate::sim::{Lane, WorldState};

const MIN_MERGE_GAP_M: f64 = 10.0;
/// Extra gap per m/s of closing speed demanded of the target lane.
const CLOSING_GAP_S: f64 = 3.0;
const SLOWER_MARGIN_MPS: f64 = 0.5;
/// Distance past the passed vehicle before the pass counts as complete.
const PASS_CLEAR_M: f64 = 40.0;

/// True when the adjacent lane has room for the ego: enough space ahead and
/// behind for the current speeds, and no vehicle ahead that is slower than the
/// speed the ego wants to drive and would block it before the maneuver pays
/// off. When there is a vehicle to pass in the current lane, a slower vehicle
/// in the target lane blocks only if the ego would catch it before clearing
/// the one being passed.
pub fn lane_change_legal(
    state: &WorldState,
    target_lane: Lane,
    desired_speed: f64,
    gains: &ControllerGains,
    sim: &SimConfig,
) -> bool {
    if target_lane > 1 || target_lane == state.ego.lane {
        return false;
    }
    let ego = &state.ego;
    let v_want = ego.v.max(desired_speed);
    let pass_time = state
        .vehicle_ahead_in_path(gains.in_path_half_width_m)
        .filter(|(t, _)| t.state.v < v_want - SLOWER_MARGIN_MPS)
        .map(|(t, gap)| (gap + PASS_CLEAR_M) / (v_want - t.state.v));
    let y_target = sim.lane_center(target_lane);
    state
        .traffic
        .iter()
        .filter(|t| (t.state.y - y_target).abs() < 0.5 * sim.lane_width_m)
        .all(|t| {
            let other = &t.state;
            let dx = other.x - ego.x;
            if dx >= 0.0 {
                let need = (gains.f_min + gains.tau_min * ego.v).max(MIN_MERGE_GAP_M)
                    + CLOSING_GAP_S * (ego.v - other.v).max(0.0);
                let blocking = other.v < v_want - SLOWER_MARGIN_MPS
                    && match pass_time {
                        Some(pass) => (dx - need) / (v_want - other.v) < pass,
                        None => dx <= gains.slower_ahead_clear_m,
                    };
                dx >= need && !blocking
            } else {
                let need = (gains.f_min + gains.tau_min * other.v).max(MIN_MERGE_GAP_M)
                    + CLOSING_GAP_S * (other.v - ego.v).max(0.0);
                -dx >= need
            }
        })
}

/// Chooses the controller in charge. An active lane change stays latched
/// until its path is complete.
pub fn arbitrate(
    state: &WorldState,
    targets: &ControlTargets,
    gains: &ControllerGains,
    sim: &SimConfig,
    latched: bool,
) -> Mode {
    if latched {
        return Mode::LaneChange;
    }
    let target_lane = 1 - state.ego.lane.min(1);
    if targets.l_hat > gains.lane_change_threshold && lane_change_legal(state, target_lane, targets.v_hat, gains, sim) {
        return Mode::LaneChange;
    }
    match state.vehicle_ahead_in_path(gains.in_path_half_width_m) {
        Some((_, gap)) if gap < gains.follow_switch_m => Mode::Follow,
        _ => Mode::Velocity,
    }
}
