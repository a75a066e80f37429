use serde::{Deserialize, Serialize};

use super::WorldState;
use crate::error::{Error, Result};

/// The four observed channels at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub v_ev: f64,
    pub v_lv: f64,
    /// Signed lead-minus-ego longitudinal gap.
    pub d_x: f64,
    /// Signed lead-minus-ego lateral offset.
    pub d_y: f64,
}

impl Frame {
    /// What the ego sees with no lead vehicle: the sentinel gap and a lead
    /// notionally cruising at the posted speed in the same lane.
    pub fn free_road(v_ev: f64, posted_speed: f64, sentinel_gap: f64) -> Self {
        Self { v_ev, v_lv: posted_speed, d_x: sentinel_gap, d_y: 0.0 }
    }

    pub fn lead_is_ahead_in_lane(&self, lane_half_width: f64, sentinel_gap: f64) -> bool {
        self.d_x > 0.0 && self.d_x < sentinel_gap && self.d_y.abs() < lane_half_width
    }
}

/// Fixed-length history of the observed channels, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub v_ev: Vec<f64>,
    pub v_lv: Vec<f64>,
    pub d_x: Vec<f64>,
    pub d_y: Vec<f64>,
}

impl FeatureWindow {
    pub fn from_frames<'a, I>(frames: I) -> Self
    where
        I: IntoIterator<Item = &'a Frame>,
    {
        let mut w = Self { v_ev: Vec::new(), v_lv: Vec::new(), d_x: Vec::new(), d_y: Vec::new() };
        for f in frames {
            w.v_ev.push(f.v_ev);
            w.v_lv.push(f.v_lv);
            w.d_x.push(f.d_x);
            w.d_y.push(f.d_y);
        }
        w
    }

    pub fn len(&self) -> usize {
        self.v_ev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_ev.is_empty()
    }

    /// The most recent frame.
    pub fn latest(&self) -> Option<Frame> {
        let i = self.len().checked_sub(1)?;
        Some(Frame { v_ev: self.v_ev[i], v_lv: self.v_lv[i], d_x: self.d_x[i], d_y: self.d_y[i] })
    }
}

/// The last `w` observations of a world history.
pub fn observe(history: &[WorldState], w: usize, sentinel_gap: f64) -> Result<FeatureWindow> {
    if history.len() < w || w == 0 {
        return Err(Error::InsufficientHistory { need: w.max(1), have: history.len() });
    }
    let frames: Vec<Frame> = history[history.len() - w..].iter().map(|s| s.frame(sentinel_gap)).collect();
    Ok(FeatureWindow::from_frames(&frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::sim::{Role, TrafficVehicle, VehicleState, World};

    fn following_world(gap: f64, v: f64, lead_accel: Option<f64>) -> World {
        let mut lead = TrafficVehicle::cruising(0, Role::Lead, VehicleState::in_lane(gap, 0, 3.7, v));
        lead.forced_accel = lead_accel;
        let state = WorldState {
            time: 0.0,
            ego: VehicleState::in_lane(0.0, 0, 3.7, v),
            traffic: vec![lead],
            posted_speed: 24.5872,
        };
        World::from_state(&SimConfig::default(), state, 25.0, 0).unwrap()
    }

    fn history(world: World, steps: usize) -> Vec<WorldState> {
        let mut out = vec![world.state().clone()];
        let mut w = world;
        for _ in 1..steps {
            w = w.step(0.0, 0.0, 0.1).unwrap();
            out.push(w.state().clone());
        }
        out
    }

    #[test]
    fn steady_follow_gives_constant_gap() {
        let h = history(following_world(30.0, 25.0, None), 40);
        let win = observe(&h, 30, 500.0).unwrap();
        assert_eq!(win.len(), 30);
        assert!(win.d_x.iter().all(|&d| (d - 30.0).abs() < 1e-9));
    }

    #[test]
    fn missing_lead_reports_sentinel() {
        let state = WorldState {
            time: 0.0,
            ego: VehicleState::in_lane(0.0, 0, 3.7, 25.0),
            traffic: Vec::new(),
            posted_speed: 24.5872,
        };
        let h = vec![state; 30];
        let win = observe(&h, 30, 500.0).unwrap();
        assert!(win.d_x.iter().all(|&d| d == 500.0));
        assert!(win.v_lv.iter().all(|&v| v == 24.5872));
    }

    #[test]
    fn braking_lead_closes_gap_monotonically() {
        let h = history(following_world(60.0, 20.0, Some(-1.0)), 40);
        let win = observe(&h, 30, 500.0).unwrap();
        assert!(win.d_x.windows(2).all(|p| p[1] < p[0]));
        assert!(win.v_ev.iter().all(|&v| v == 20.0));
    }

    #[test]
    fn short_history_is_an_error() {
        let h = history(following_world(30.0, 25.0, None), 5);
        assert!(matches!(observe(&h, 30, 500.0), Err(Error::InsufficientHistory { need: 30, have: 5 })));
    }
}
