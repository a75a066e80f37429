//! Training samples cut from demonstration traces.

use crate::config::Config;
use crate::error::{invalid, Result};
use crate::sim::{DemonstrationTrace, Frame};

/// One supervised example: the window ending at step `t` of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub trace: usize,
    pub t: usize,
    /// Index into the embedding table.
    pub persona: usize,
    /// Gap label, present only while steadily following a same-lane lead.
    pub follow: Option<f64>,
    /// Lane-change label; `None` while a maneuver is under way.
    pub lane: Option<bool>,
    pub velocity: f64,
    pub adb: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub window: usize,
    /// `(persona_id, adb_score)` in embedding-table order.
    pub personas: Vec<(String, f64)>,
    /// Frames of every trace, front-padded with `window − 1` copies of the
    /// first frame so that every step has a full window.
    padded: Vec<Vec<Frame>>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    /// Inverse frequency of positive lane labels in the training split.
    pub pos_weight: f64,
}

/// Per-step labels of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLabels {
    pub follow: Vec<Option<f64>>,
    pub lane: Vec<Option<bool>>,
    pub velocity: Vec<f64>,
}

/// Derives labels from a trace. A lane change is labeled positive on its
/// initiation step and for `label_smear_s` after it; the remaining steps until
/// the ego settles on the target centerline carry no lane label. Travel-lane
/// steps where the demonstrator evidently wanted to overtake but had to wait
/// for the other lane are positive too (see `PassIntent`). The gap is
/// labeled only while following steadily: a same-lane lead within the follow
/// range, matched speeds, and a gap that held over the last window.
pub fn trace_labels(trace: &DemonstrationTrace, cfg: &Config) -> TraceLabels {
    let n = trace.records.len();
    let dt = trace.meta.dt;
    let smear = (cfg.learn.label_smear_s / dt).round() as usize;
    let settle = cfg.controllers.settle_tolerance_m;
    let half_lane = 0.5 * cfg.sim.lane_width_m;
    let follow_limit = cfg.controllers.follow_switch_m;
    let tol = cfg.learn.follow_rel_speed_tol;
    let drift = cfg.learn.follow_gap_drift_m;

    let mut lane: Vec<Option<bool>> = vec![Some(false); n];
    let mut i = 0;
    while i < n {
        let r = &trace.records[i];
        if !r.lane_change_flag {
            i += 1;
            continue;
        }
        let target_y = cfg.sim.lane_center(1 - r.ego.lane.min(1));
        let mut j = i;
        while j < n {
            let in_label = j <= i + smear;
            let settled = (trace.records[j].ego.y - target_y).abs() < settle && j > i + smear;
            if settled || (j > i && trace.records[j].lane_change_flag) {
                break;
            }
            lane[j] = if in_label { Some(true) } else { None };
            j += 1;
        }
        i = j.max(i + 1);
    }

    let sentinel = cfg.sim.sentinel_gap_m;
    let frames: Vec<_> = trace.frames().collect();
    if let Some(intent) = PassIntent::infer(trace, &frames, cfg) {
        for (t, f) in frames.iter().enumerate() {
            if lane[t] == Some(false) && trace.records[t].ego.lane == 0 && intent.wants_to_pass(f) {
                lane[t] = Some(true);
            }
        }
    }

    let lag = cfg.sim.window_len().saturating_sub(1);
    let frames: Vec<_> = trace.frames().collect();
    let follow = (0..n)
        .map(|t| {
            let f = &frames[t];
            let before = &frames[t.saturating_sub(lag)];
            let steady = t >= lag
                && f.lead_is_ahead_in_lane(half_lane, sentinel)
                && before.lead_is_ahead_in_lane(half_lane, sentinel)
                && f.d_x < follow_limit
                && (f.v_ev - f.v_lv).abs() < tol
                && (f.d_x - before.d_x).abs() < drift;
            steady.then_some(f.d_x)
        })
        .collect();
    let velocity = trace.records.iter().map(|r| r.ego.v).collect();
    TraceLabels { follow, lane, velocity }
}

/// Overtaking preference revealed by a trace: the speed the demonstrator
/// holds on free road and the largest headway time at which it started an
/// overtake.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PassIntent {
    free_speed: f64,
    max_headway: f64,
    margin: f64,
    half_lane: f64,
    sentinel: f64,
}

impl PassIntent {
    fn infer(trace: &DemonstrationTrace, frames: &[Frame], cfg: &Config) -> Option<Self> {
        let half_lane = 0.5 * cfg.sim.lane_width_m;
        let sentinel = cfg.sim.sentinel_gap_m;
        let max_headway = trace
            .records
            .iter()
            .zip(frames)
            .filter(|(r, f)| r.lane_change_flag && r.ego.lane == 0 && f.lead_is_ahead_in_lane(half_lane, sentinel))
            .map(|(_, f)| f.d_x / f.v_ev.max(1.0))
            .fold(None, |m: Option<f64>, h| Some(m.map_or(h, |m| m.max(h))))?;
        let free: Vec<f64> = frames
            .iter()
            .filter(|f| !f.lead_is_ahead_in_lane(half_lane, sentinel) || f.d_x >= cfg.learn.free_road_gap_m)
            .map(|f| f.v_ev)
            .collect();
        let free_speed = if free.is_empty() {
            frames.iter().map(|f| f.v_ev).fold(0.0, f64::max)
        } else {
            free.iter().sum::<f64>() / free.len() as f64
        };
        Some(Self { free_speed, max_headway, margin: cfg.learn.intent_speed_margin_mps, half_lane, sentinel })
    }

    fn wants_to_pass(&self, f: &Frame) -> bool {
        f.lead_is_ahead_in_lane(self.half_lane, self.sentinel)
            && f.v_lv < self.free_speed - self.margin
            && f.d_x / f.v_ev.max(1.0) <= self.max_headway
    }
}

impl Dataset {
    /// Cuts samples every `sample_stride` steps plus every positive lane
    /// label, and holds out the final `val_fraction` of each trace.
    pub fn from_traces(traces: &[DemonstrationTrace], cfg: &Config) -> Result<Self> {
        let window = cfg.sim.window_len();
        let mut personas: Vec<(String, f64)> = Vec::new();
        let mut padded = Vec::with_capacity(traces.len());
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (ti, trace) in traces.iter().enumerate() {
            if trace.records.is_empty() {
                return Err(invalid(format!("trace of persona {} is empty", trace.meta.persona_id)));
            }
            let id = &trace.meta.persona_id;
            let persona = match personas.iter().position(|(p, _)| p == id) {
                Some(i) => i,
                None => {
                    personas.push((id.clone(), trace.meta.adb_score));
                    personas.len() - 1
                }
            };
            let frames: Vec<Frame> = trace.frames().collect();
            let mut pad = vec![frames[0]; window - 1];
            pad.extend(frames);
            padded.push(pad);

            let labels = trace_labels(trace, cfg);
            let n = trace.records.len();
            let split = ((1.0 - cfg.learn.val_fraction) * n as f64).round() as usize;
            for t in 0..n {
                let positive = labels.lane[t] == Some(true);
                if t % cfg.learn.sample_stride != 0 && !positive {
                    continue;
                }
                let sample = Sample {
                    trace: ti,
                    t,
                    persona,
                    follow: labels.follow[t],
                    lane: labels.lane[t],
                    velocity: labels.velocity[t],
                    adb: trace.meta.adb_score,
                };
                if t < split { train.push(sample) } else { val.push(sample) }
            }
        }
        if train.is_empty() {
            return Err(invalid("no training samples"));
        }
        let positives = train.iter().filter(|s| s.lane == Some(true)).count();
        let negatives = train.iter().filter(|s| s.lane == Some(false)).count();
        let pos_weight = if positives == 0 {
            1.0
        } else {
            (negatives as f64 / positives as f64).clamp(1.0, cfg.learn.pos_weight_cap)
        };
        Ok(Self { window, personas, padded, train, val, pos_weight })
    }

    /// The observation window of a sample, oldest first.
    pub fn window(&self, s: &Sample) -> &[Frame] {
        &self.padded[s.trace][s.t..s.t + self.window]
    }

    pub fn trace_count(&self) -> usize {
        self.padded.len()
    }
}
