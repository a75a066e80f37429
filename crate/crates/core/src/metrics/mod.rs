//! Objective driving-style metrics, mimic accuracy and correlation statistics.

mod correlate;
mod report;

use serde::{Deserialize, Serialize};

pub use correlate::{correlate, ranks, Method};
pub use report::{read_eval_csv, write_eval_csv, EvalRow, Report};

use crate::error::{Error, Result};
use crate::sim::DemonstrationTrace;

/// Speed drop over `SLOWDOWN_WINDOW_S` that counts as the ego slowing down.
pub const SLOWDOWN_MPS: f64 = 0.5;
pub const SLOWDOWN_WINDOW_S: f64 = 1.0;

/// Objective style metrics of one trace. Event-based metrics are `None` when
/// the trace has no qualifying event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mean_velocity: f64,
    /// Mean d_x / v_ev at the start of each overtake (s).
    pub mean_headway_time: Option<f64>,
    /// Mean gap to the passed vehicle when merging back (m).
    pub distance_headway_merge_back: Option<f64>,
    /// Mean of the merge-back gap divided by ego speed (s).
    pub time_headway_merge_back: Option<f64>,
    pub lane_change_count: usize,
    /// Mean over lead approaches of the smallest gap reached before the ego
    /// slows down or changes lanes (m).
    pub min_headway_distance: Option<f64>,
    pub left_lane_fraction: f64,
}

/// Lane geometry needed to interpret a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceGeometry {
    pub lane_half_width: f64,
    pub sentinel_gap: f64,
}

impl Default for TraceGeometry {
    fn default() -> Self {
        Self { lane_half_width: 1.85, sentinel_gap: 500.0 }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn compute_metrics(trace: &DemonstrationTrace, geo: &TraceGeometry) -> Result<MetricSet> {
    let r = &trace.records;
    if r.is_empty() {
        return Err(Error::Parse("trace has no records".into()));
    }
    let dt = trace.meta.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parse(format!("trace has invalid dt {dt}")));
    }
    if let Some(i) = r.iter().position(|x| !(x.ego.v.is_finite() && x.d_x.is_finite() && x.d_y.is_finite())) {
        return Err(Error::Parse(format!("record {i} has non-finite values")));
    }
    let n = r.len();
    let lead_ahead = |i: usize| r[i].d_x > 0.0 && r[i].d_x < geo.sentinel_gap && r[i].d_y.abs() < geo.lane_half_width;

    let mut headway = Vec::new();
    let mut merge_gap = Vec::new();
    let mut merge_time = Vec::new();
    for (i, x) in r.iter().enumerate().filter(|(_, x)| x.lane_change_flag) {
        if x.ego.lane == 0 && lead_ahead(i) {
            headway.push(x.d_x / x.ego.v);
        }
        // Merge-back: leaving the passing lane with the passed vehicle behind.
        if x.ego.lane == 1 && x.lead.is_some() && x.d_x < 0.0 {
            merge_gap.push(-x.d_x);
            merge_time.push(-x.d_x / x.ego.v);
        }
    }

    let lag = (SLOWDOWN_WINDOW_S / dt).round() as usize;
    let slowing = |i: usize| i >= lag && r[i].ego.v - r[i - lag].ego.v < -SLOWDOWN_MPS;
    let mut approach_minima = Vec::new();
    let mut i = 0;
    while i < n {
        if !lead_ahead(i) {
            i += 1;
            continue;
        }
        let mut min_gap = f64::INFINITY;
        let mut ended = false;
        while i < n && lead_ahead(i) {
            min_gap = min_gap.min(r[i].d_x);
            if slowing(i) || r[i].lane_change_flag {
                ended = true;
                break;
            }
            i += 1;
        }
        if ended {
            approach_minima.push(min_gap);
            // Skip the rest of this approach.
            while i < n && lead_ahead(i) {
                i += 1;
            }
        }
    }

    Ok(MetricSet {
        mean_velocity: r.iter().map(|x| x.ego.v).sum::<f64>() / n as f64,
        mean_headway_time: mean(&headway),
        distance_headway_merge_back: mean(&merge_gap),
        time_headway_merge_back: mean(&merge_time),
        lane_change_count: r.iter().filter(|x| x.lane_change_flag).count(),
        min_headway_distance: mean(&approach_minima),
        left_lane_fraction: r.iter().filter(|x| x.ego.lane == 1).count() as f64 / n as f64,
    })
}

/// Per-metric mimic accuracy `max(0, 1 − |av − user| / user)`; `None` when
/// the user value is zero or either value is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MimicAccuracy {
    pub mean_velocity: Option<f64>,
    pub mean_headway_time: Option<f64>,
    pub distance_headway_merge_back: Option<f64>,
    pub time_headway_merge_back: Option<f64>,
    pub lane_change_count: Option<f64>,
    pub min_headway_distance: Option<f64>,
    pub left_lane_fraction: Option<f64>,
}

fn accuracy(av: Option<f64>, user: Option<f64>) -> Option<f64> {
    let (a, u) = (av?, user?);
    (u != 0.0).then(|| (1.0 - (a - u).abs() / u.abs()).max(0.0))
}

pub fn mimic_accuracy(av: &MetricSet, user: &MetricSet) -> MimicAccuracy {
    MimicAccuracy {
        mean_velocity: accuracy(Some(av.mean_velocity), Some(user.mean_velocity)),
        mean_headway_time: accuracy(av.mean_headway_time, user.mean_headway_time),
        distance_headway_merge_back: accuracy(av.distance_headway_merge_back, user.distance_headway_merge_back),
        time_headway_merge_back: accuracy(av.time_headway_merge_back, user.time_headway_merge_back),
        lane_change_count: accuracy(Some(av.lane_change_count as f64), Some(user.lane_change_count as f64)),
        min_headway_distance: accuracy(av.min_headway_distance, user.min_headway_distance),
        left_lane_fraction: accuracy(Some(av.left_lane_fraction), Some(user.left_lane_fraction)),
    }
}
