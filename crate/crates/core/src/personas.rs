//! Scripted demonstrators with an assigned aggression score.
//!
//! Every behavioral parameter is a linear function of the ADB score, perturbed
//! by a seeded ±10% factor so that personas sharing a score still differ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{Config, PersonaConfig};
use crate::controllers::ControlTargets;
use crate::error::{invalid, Result};
use crate::rollout::{run_episode, Planner};
use crate::sim::{DemonstrationTrace, Frame, Scenario, WorldState};

pub const ADB_MIN: f64 = 11.0;
pub const ADB_MAX: f64 = 55.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaParams {
    pub adb_score: f64,
    pub target_speed: f64,
    pub desired_follow: f64,
    /// Headway time below which a pass is initiated (s).
    pub pass_headway_time: f64,
    /// Gap to the passed vehicle required before merging back (m).
    pub merge_back_gap: f64,
    pub speed_jitter: f64,
}

/// Unperturbed parameters for a score.
pub fn nominal_persona(adb_score: f64, cfg: &PersonaConfig) -> Result<PersonaParams> {
    if !(ADB_MIN..=ADB_MAX).contains(&adb_score) {
        return Err(invalid(format!("ADB score {adb_score} outside [{ADB_MIN}, {ADB_MAX}]")));
    }
    let n = (adb_score - ADB_MIN) / (ADB_MAX - ADB_MIN);
    Ok(PersonaParams {
        adb_score,
        target_speed: 22.0 + 12.0 * n,
        desired_follow: 60.0 - 40.0 * n,
        pass_headway_time: 4.0 - 2.5 * n,
        merge_back_gap: 50.0 - 30.0 * n,
        speed_jitter: cfg.speed_jitter_mps,
    })
}

pub fn make_persona(adb_score: f64, seed: u64, cfg: &Config) -> Result<PersonaParams> {
    let mut p = nominal_persona(adb_score, &cfg.personas)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = cfg.personas.param_spread;
    let mut factor = || 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0);
    p.target_speed = (p.target_speed * factor()).clamp(20.0, 36.0);
    p.desired_follow = (p.desired_follow * factor()).max(cfg.controllers.f_min);
    p.pass_headway_time *= factor();
    p.merge_back_gap *= factor();
    Ok(p)
}

/// Rule-based driving policy of a persona.
#[derive(Debug, Clone)]
pub struct PersonaPolicy {
    params: PersonaParams,
    ou_theta: f64,
    pass_margin: f64,
    lane_half_width: f64,
    sentinel_gap: f64,
    dt: f64,
    jitter: f64,
    rng: ChaCha8Rng,
}

impl PersonaPolicy {
    pub fn new(params: PersonaParams, cfg: &Config, seed: u64) -> Self {
        Self {
            params,
            ou_theta: cfg.personas.ou_theta,
            pass_margin: cfg.personas.pass_speed_margin_mps,
            lane_half_width: 0.5 * cfg.sim.lane_width_m,
            sentinel_gap: cfg.sim.sentinel_gap_m,
            dt: cfg.sim.dt,
            jitter: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    pub fn params(&self) -> &PersonaParams {
        &self.params
    }

    fn wants_lane_change(&self, lane: u8, f: &Frame) -> bool {
        let p = &self.params;
        let lead_present = f.d_x.abs() < self.sentinel_gap;
        let lead_slow = f.v_lv < p.target_speed - self.pass_margin;
        if lane == 0 {
            let ahead = f.lead_is_ahead_in_lane(self.lane_half_width, self.sentinel_gap);
            ahead && lead_slow && f.d_x / f.v_ev.max(1.0) < p.pass_headway_time
        } else if !lead_present {
            true
        } else if f.d_x < 0.0 {
            -f.d_x > p.merge_back_gap
        } else {
            // Still behind the lead in the passing lane: merge back only if the
            // pass is not worth it or is not making progress.
            !lead_slow || f.v_ev < f.v_lv - self.pass_margin
        }
    }
}

impl Planner for PersonaPolicy {
    fn targets(&mut self, state: &WorldState, frames: &[Frame], lane_changing: bool) -> Result<ControlTargets> {
        let p = &self.params;
        let sigma = p.speed_jitter;
        let noise: f64 = self.rng.sample(StandardNormal);
        self.jitter += -self.ou_theta * self.jitter * self.dt + sigma * (2.0 * self.ou_theta * self.dt).sqrt() * noise;
        let frame = frames.last().ok_or_else(|| invalid("empty observation window"))?;
        let change = !lane_changing && self.wants_lane_change(state.ego.lane, frame);
        Ok(ControlTargets {
            f_hat: p.desired_follow,
            l_hat: if change { 1.0 } else { 0.0 },
            v_hat: (p.target_speed + self.jitter).max(0.0),
            s_hat: p.adb_score,
        })
    }
}

/// Drives a persona through a scenario and records the demonstration.
pub fn generate_demonstrations(persona: &PersonaParams, scenario: &Scenario, cfg: &Config) -> Result<DemonstrationTrace> {
    if scenario.duration_s < 60.0 {
        return Err(invalid(format!("demonstrations need at least 60 s, got {}", scenario.duration_s)));
    }
    let mut scenario = scenario.clone();
    scenario.ego_target_speed_mps.get_or_insert(persona.target_speed);
    let mut policy = PersonaPolicy::new(persona.clone(), cfg, scenario.seed);
    let episode = run_episode(&mut policy, &scenario, cfg, persona.adb_score, "demo")?;
    Ok(episode.trace)
}
