//! Two-lane divided highway in light traffic.
//!
//! Lane 0 is the travel (right) lane, lane 1 the passing (left) lane. Lead
//! vehicles are scheduled one at a time in lane 0; off-lane vehicles cruise
//! in lane 1 at the posted speed and only constrain lane-change legality.

mod observe;
mod schedule;
mod trace;
mod world;

use serde::{Deserialize, Serialize};

pub use observe::{observe, FeatureWindow, Frame};
pub use schedule::{lead_speed_set, spawn_lead_schedule};
pub use trace::{DemonstrationTrace, EgoRecord, LeadRecord, Scenario, TraceMeta, TraceRecord};
pub use world::World;

pub type Lane = u8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position along the road axis (m).
    pub x: f64,
    /// Lateral position, 0 at the lane-0 centerline, positive to the left (m).
    pub y: f64,
    pub v: f64,
    pub heading: f64,
    pub lane: Lane,
}

impl VehicleState {
    pub fn in_lane(x: f64, lane: Lane, lane_width: f64, v: f64) -> Self {
        Self { x, y: f64::from(lane) * lane_width, v, heading: 0.0, lane }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Scheduled same-lane vehicle the ego must decide whether to pass.
    Lead,
    OffLane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficVehicle {
    pub id: u32,
    pub role: Role,
    pub state: VehicleState,
    pub cruise_speed: f64,
    /// Scripted acceleration overriding the cruise law (used for braking scenarios).
    pub forced_accel: Option<f64>,
}

impl TrafficVehicle {
    pub fn cruising(id: u32, role: Role, state: VehicleState) -> Self {
        Self { id, role, cruise_speed: state.v, state, forced_accel: None }
    }
}

/// One instant of the highway.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub ego: VehicleState,
    /// Sorted by longitudinal position.
    pub traffic: Vec<TrafficVehicle>,
    pub posted_speed: f64,
}

impl WorldState {
    /// The scheduled lead vehicle, tracked from the moment it spawns until the
    /// ego has passed it and returned to the travel lane.
    pub fn tracked_lead(&self) -> Option<&TrafficVehicle> {
        self.traffic.iter().find(|t| t.role == Role::Lead)
    }

    /// Nearest vehicle ahead whose lateral offset puts it in the ego's path,
    /// with the longitudinal gap to it.
    pub fn vehicle_ahead_in_path(&self, half_width: f64) -> Option<(&TrafficVehicle, f64)> {
        self.traffic
            .iter()
            .filter(|t| t.state.x >= self.ego.x && (t.state.y - self.ego.y).abs() < half_width)
            .map(|t| (t, t.state.x - self.ego.x))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn vehicles_in_lane(&self, lane: Lane) -> impl Iterator<Item = &TrafficVehicle> {
        self.traffic.iter().filter(move |t| t.state.lane == lane)
    }

    /// Observation of this instant as consumed by the predictors.
    pub fn frame(&self, sentinel_gap: f64) -> Frame {
        match self.tracked_lead() {
            Some(lead) if (lead.state.x - self.ego.x).abs() <= sentinel_gap => Frame {
                v_ev: self.ego.v,
                v_lv: lead.state.v,
                d_x: lead.state.x - self.ego.x,
                d_y: lead.state.y - self.ego.y,
            },
            _ => Frame::free_road(self.ego.v, self.posted_speed, sentinel_gap),
        }
    }

    /// True when the ego's footprint overlaps any traffic vehicle.
    pub fn has_collision(&self, length: f64, width: f64) -> bool {
        self.traffic.iter().any(|t| {
            (t.state.x - self.ego.x).abs() < length && (t.state.y - self.ego.y).abs() < width
        })
    }

    pub fn is_off_road(&self, bounds: (f64, f64)) -> bool {
        self.ego.y < bounds.0 || self.ego.y > bounds.1
    }
}
