use super::Actuators;
use crate::config::ControllerGains;
use crate::error::{Error, Result};
use crate::sim::VehicleState;

/// Integrator of a PI loop.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    pub integral: f64,
}

/// Integrates `error` unless the output is saturated and the error would push
/// it further into saturation (conditional integration).
fn pi_step(p_term: f64, ki: f64, error: f64, state: PiState, act: &Actuators) -> (f64, PiState) {
    let candidate = state.integral + error * act.dt;
    let raw = p_term + ki * candidate;
    let saturated_high = raw > act.accel_max && error > 0.0;
    let saturated_low = raw < act.accel_min && error < 0.0;
    let integral = if saturated_high || saturated_low { state.integral } else { candidate };
    let out = act.clamp_accel(p_term + ki * integral);
    (out, PiState { integral })
}

/// Speed-tracking PI loop.
pub fn pi_velocity(
    ego: &VehicleState,
    v_des: f64,
    gains: &ControllerGains,
    state: PiState,
    act: &Actuators,
) -> (f64, PiState) {
    let e = v_des.max(0.0) - ego.v;
    pi_step(gains.kp_v * e, gains.ki_v, e, state, act)
}

/// Gap-regulating PI loop with a relative-speed term and two safety overrides:
/// maximal braking inside the hard floor, and a closing-speed limit that
/// brakes early enough to stop the approach at the desired gap.
pub fn pi_follow(
    ego: &VehicleState,
    lead: Option<&VehicleState>,
    f_des: f64,
    gains: &ControllerGains,
    state: PiState,
    act: &Actuators,
) -> Result<(f64, PiState)> {
    let lead = lead.ok_or_else(|| Error::InvalidState("following controller needs a lead vehicle".into()))?;
    let gap = lead.x - ego.x;
    let f_eff = f_des.max(gains.f_min);
    let closing = ego.v - lead.v;

    if gap < emergency_gap(ego.v, lead.v, gains, act) {
        return Ok((act.accel_min, state));
    }

    let e = gap - f_eff;
    let p_term = gains.kp_f * e + gains.kv_f * (lead.v - ego.v);
    let (mut accel, next) = pi_step(p_term, gains.ki_f, e, state, act);
    if closing > 0.0 {
        let room = (gap - f_eff).max(0.5);
        let needed = -CLOSING_BRAKE_MARGIN * closing * closing / (2.0 * room);
        accel = accel.min(act.clamp_accel(needed));
    }
    Ok((accel, next))
}

const CLOSING_BRAKE_MARGIN: f64 = 1.2;

/// Gap below which the ego brakes at the limit: the static floor
/// `max(f_min, τ_min·v)`, and the distance needed to stop behind a lead that
/// itself starts braking at the limit, with one control period of lag.
pub fn emergency_gap(v_ego: f64, v_lead: f64, gains: &ControllerGains, act: &Actuators) -> f64 {
    let decel = -act.accel_min;
    let stopping = (v_ego * v_ego - v_lead * v_lead).max(0.0) / (2.0 * decel);
    let lag = (v_ego - v_lead).max(0.0) * act.dt;
    static_floor(v_ego, gains).max(gains.f_min + stopping + lag)
}

pub fn static_floor(v_ego: f64, gains: &ControllerGains) -> f64 {
    gains.f_min.max(gains.tau_min * v_ego)
}
