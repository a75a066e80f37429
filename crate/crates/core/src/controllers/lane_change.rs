use serde::{Deserialize, Serialize};

use super::Actuators;
use crate::config::{ControllerGains, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::sim::{Lane, VehicleState};

const CHECK_SAMPLES: usize = 40;

/// Cubic Bézier from the current lane centerline to the target centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangePath {
    pub control: [[f64; 2]; 4],
    pub target_lane: Lane,
    /// Longitudinal length (m).
    pub length: f64,
}

impl LaneChangePath {
    /// Path through `(x0, y0)` and `(x0 + length, y1)` with road-parallel end tangents.
    pub fn new(x0: f64, y0: f64, y1: f64, length: f64, target_lane: Lane) -> Self {
        let control = [
            [x0, y0],
            [x0 + length / 3.0, y0],
            [x0 + 2.0 * length / 3.0, y1],
            [x0 + length, y1],
        ];
        Self { control, target_lane, length }
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        let [p0, p1, p2, p3] = self.control;
        let u = 1.0 - t;
        let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
        [
            b[0] * p0[0] + b[1] * p1[0] + b[2] * p2[0] + b[3] * p3[0],
            b[0] * p0[1] + b[1] * p1[1] + b[2] * p2[1] + b[3] * p3[1],
        ]
    }

    pub fn tangent(&self, t: f64) -> [f64; 2] {
        let [p0, p1, p2, p3] = self.control;
        let u = 1.0 - t;
        let b = [3.0 * u * u, 6.0 * u * t, 3.0 * t * t];
        [
            b[0] * (p1[0] - p0[0]) + b[1] * (p2[0] - p1[0]) + b[2] * (p3[0] - p2[0]),
            b[0] * (p1[1] - p0[1]) + b[1] * (p2[1] - p1[1]) + b[2] * (p3[1] - p2[1]),
        ]
    }

    /// Curve parameter at longitudinal position `x`. The control points are
    /// evenly spaced in x, so x(t) is linear.
    pub fn param_at(&self, x: f64) -> f64 {
        (x - self.control[0][0]) / self.length
    }

    pub fn start(&self) -> [f64; 2] {
        self.control[0]
    }

    pub fn end(&self) -> [f64; 2] {
        self.control[3]
    }
}

pub fn path_length(v: f64, gains: &ControllerGains) -> f64 {
    (gains.lane_change_time_s * v).max(gains.lane_change_min_length_m)
}

/// Plans a lane change into the adjacent `target_lane`, rejecting it when the
/// lead (extrapolated at constant speed) would come within `f_min` of the ego
/// while the two overlap laterally.
pub fn plan_lane_change(
    ego: &VehicleState,
    lead: Option<&VehicleState>,
    target_lane: Lane,
    v: f64,
    gains: &ControllerGains,
    sim: &SimConfig,
) -> Result<LaneChangePath> {
    if target_lane > 1 || target_lane == ego.lane {
        return Err(invalid(format!("lane {target_lane} is not adjacent to lane {}", ego.lane)));
    }
    let length = path_length(v, gains);
    let path = LaneChangePath::new(
        ego.x,
        sim.lane_center(ego.lane),
        sim.lane_center(target_lane),
        length,
        target_lane,
    );
    if let Some(lead) = lead {
        let speed = v.max(0.1);
        for i in 0..=CHECK_SAMPLES {
            let t = i as f64 / CHECK_SAMPLES as f64;
            let [px, py] = path.point(t);
            let elapsed = (px - ego.x) / speed;
            let lead_x = lead.x + lead.v * elapsed;
            if (lead.y - py).abs() < gains.in_path_half_width_m && (lead_x - px).abs() < gains.f_min {
                return Err(Error::ManeuverRejected(format!(
                    "lead predicted {:.1} m from the path at t = {t:.2}",
                    (lead_x - px).abs()
                )));
            }
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathTracking {
    Steer(f64),
    /// The front axle is past the end of the path.
    Complete,
}

fn front_axle(ego: &VehicleState, wheelbase: f64) -> (f64, f64) {
    (ego.x + wheelbase * ego.heading.cos(), ego.y + wheelbase * ego.heading.sin())
}

fn stanley(path_heading: f64, ego: &VehicleState, cross_track: f64, k: f64, act: &Actuators) -> f64 {
    let heading_error = path_heading - ego.heading;
    act.clamp_steer(heading_error + (k * cross_track / ego.v.max(1.0)).atan())
}

/// Stanley steering toward the path at the front axle. Positive cross-track
/// error means the path lies to the left of the vehicle.
pub fn track_path(
    ego: &VehicleState,
    path: &LaneChangePath,
    stanley_k: f64,
    wheelbase: f64,
    act: &Actuators,
) -> PathTracking {
    let (fx, fy) = front_axle(ego, wheelbase);
    let t = path.param_at(fx);
    if t > 1.0 {
        return PathTracking::Complete;
    }
    let t = t.max(0.0);
    let [_, py] = path.point(t);
    let [tx, ty] = path.tangent(t);
    let theta = ty.atan2(tx);
    let cross_track = (py - fy) * theta.cos();
    PathTracking::Steer(stanley(theta, ego, cross_track, stanley_k, act))
}

/// Stanley steering toward a straight centerline at lateral position `y`.
pub fn track_centerline(ego: &VehicleState, y: f64, stanley_k: f64, wheelbase: f64, act: &Actuators) -> f64 {
    let (_, fy) = front_axle(ego, wheelbase);
    stanley(0.0, ego, y - fy, stanley_k, act)
}
