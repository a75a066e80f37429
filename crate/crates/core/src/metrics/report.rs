use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{correlate, mimic_accuracy, Method, MetricSet, MimicAccuracy};
use crate::error::Result;

/// One row of the evaluation table: a rollout (or demonstration) of one
/// persona under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub persona_id: String,
    pub adb_score: f64,
    pub condition: String,
    pub seed: u64,
    /// Ellipse angle for perpendicular rollouts.
    pub angle_deg: Option<f64>,
    /// Predicted score of the embedding that drove the rollout.
    pub s_hat: Option<f64>,
    /// Coordinate of the embedding along the aggression gradient.
    pub projection: Option<f64>,
    pub mean_velocity: f64,
    pub mean_headway_time: Option<f64>,
    pub distance_headway_merge_back: Option<f64>,
    pub time_headway_merge_back: Option<f64>,
    pub lane_change_count: usize,
    pub min_headway_distance: Option<f64>,
    pub left_lane_fraction: f64,
    pub acc_mean_velocity: Option<f64>,
    pub acc_mean_headway_time: Option<f64>,
    pub acc_distance_headway_merge_back: Option<f64>,
    pub acc_time_headway_merge_back: Option<f64>,
    pub acc_lane_change_count: Option<f64>,
    pub acc_min_headway_distance: Option<f64>,
    pub acc_left_lane_fraction: Option<f64>,
    pub config_hash: String,
}

impl EvalRow {
    /// Row for `metrics`, scored against the demonstration `reference`.
    pub fn new(persona_id: &str, adb_score: f64, condition: &str, seed: u64, metrics: &MetricSet, reference: &MetricSet, config_hash: &str) -> Self {
        let acc: MimicAccuracy = mimic_accuracy(metrics, reference);
        Self {
            persona_id: persona_id.to_string(),
            adb_score,
            condition: condition.to_string(),
            seed,
            angle_deg: None,
            s_hat: None,
            projection: None,
            mean_velocity: metrics.mean_velocity,
            mean_headway_time: metrics.mean_headway_time,
            distance_headway_merge_back: metrics.distance_headway_merge_back,
            time_headway_merge_back: metrics.time_headway_merge_back,
            lane_change_count: metrics.lane_change_count,
            min_headway_distance: metrics.min_headway_distance,
            left_lane_fraction: metrics.left_lane_fraction,
            acc_mean_velocity: acc.mean_velocity,
            acc_mean_headway_time: acc.mean_headway_time,
            acc_distance_headway_merge_back: acc.distance_headway_merge_back,
            acc_time_headway_merge_back: acc.time_headway_merge_back,
            acc_lane_change_count: acc.lane_change_count,
            acc_min_headway_distance: acc.min_headway_distance,
            acc_left_lane_fraction: acc.left_lane_fraction,
            config_hash: config_hash.to_string(),
        }
    }

    fn accuracies(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("mean_velocity", self.acc_mean_velocity),
            ("mean_headway_time", self.acc_mean_headway_time),
            ("distance_headway_merge_back", self.acc_distance_headway_merge_back),
            ("time_headway_merge_back", self.acc_time_headway_merge_back),
            ("lane_change_count", self.acc_lane_change_count),
            ("min_headway_distance", self.acc_min_headway_distance),
            ("left_lane_fraction", self.acc_left_lane_fraction),
        ]
    }
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv<R: Read>(input: R) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub name: String,
    pub method: Method,
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
}

/// Fraction of matched cases satisfying an ordering, with the case count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub cases: usize,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    /// Mean mimic accuracy per metric over mimic rows where it is defined.
    pub mimic_accuracy: BTreeMap<String, f64>,
    /// aggressive > mimic > cautious in mean velocity.
    pub velocity_ordering: Ordering,
    /// aggressive ≥ mimic ≥ cautious in lane-change count, not all equal.
    pub lane_change_ordering: Ordering,
    pub correlations: Vec<CorrelationEntry>,
}

fn entry(name: &str, method: Method, xs: &[f64], ys: &[f64]) -> CorrelationEntry {
    let c = correlate(xs, ys, method).ok();
    CorrelationEntry { name: name.to_string(), method, n: xs.len(), r: c.map(|c| c.0), p: c.map(|c| c.1) }
}

impl Report {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let config_hash = rows.first().map(|r| r.config_hash.clone()).unwrap_or_default();
        let mimic: Vec<&EvalRow> = rows.iter().filter(|r| r.condition == "mimic").collect();

        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for row in &mimic {
            for (name, acc) in row.accuracies() {
                if let Some(a) = acc {
                    let e = sums.entry(name.to_string()).or_default();
                    e.0 += a;
                    e.1 += 1;
                }
            }
        }
        let mimic_accuracy = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();

        let find = |row: &EvalRow, condition: &str| {
            rows.iter().find(|r| r.persona_id == row.persona_id && r.seed == row.seed && r.condition == condition)
        };
        let (mut vel, mut lc, mut cases) = (0usize, 0usize, 0usize);
        for m in &mimic {
            let (Some(a), Some(c)) = (find(m, "aggressive"), find(m, "cautious")) else { continue };
            cases += 1;
            vel += usize::from(a.mean_velocity > m.mean_velocity && m.mean_velocity > c.mean_velocity);
            let (la, lm, lcau) = (a.lane_change_count, m.lane_change_count, c.lane_change_count);
            lc += usize::from(la >= lm && lm >= lcau && la > lcau);
        }
        let frac = |k: usize| (cases > 0).then(|| k as f64 / cases as f64);

        let mut correlations = Vec::new();
        let proj: Vec<(f64, f64)> = mimic.iter().filter_map(|r| Some((r.projection?, r.adb_score))).collect();
        if !proj.is_empty() {
            let (xs, ys): (Vec<f64>, Vec<f64>) = proj.into_iter().unzip();
            correlations.push(entry("projection_vs_adb", Method::Pearson, &xs, &ys));
        }
        let mut perp_personas: Vec<(&str, u64)> =
            rows.iter().filter(|r| r.condition == "perp").map(|r| (r.persona_id.as_str(), r.seed)).collect();
        perp_personas.sort();
        perp_personas.dedup();
        for (pid, seed) in perp_personas {
            let sweep: Vec<&EvalRow> =
                rows.iter().filter(|r| r.condition == "perp" && r.persona_id == pid && r.seed == seed).collect();
            let angles: Vec<f64> = sweep.iter().filter_map(|r| r.angle_deg).collect();
            if angles.len() != sweep.len() {
                continue;
            }
            let left: Vec<f64> = sweep.iter().map(|r| r.left_lane_fraction).collect();
            correlations.push(entry(&format!("{pid}/{seed}: left_lane_fraction_vs_angle"), Method::Spearman, &angles, &left));
            let pairs: Vec<(f64, f64)> = sweep.iter().filter_map(|r| Some((r.angle_deg?, r.min_headway_distance?))).collect();
            let (a, h): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            correlations.push(entry(&format!("{pid}/{seed}: min_headway_distance_vs_angle"), Method::Spearman, &a, &h));
        }

        Self {
            config_hash,
            mimic_accuracy,
            velocity_ordering: Ordering { cases, fraction: frac(vel) },
            lane_change_ordering: Ordering { cases, fraction: frac(lc) },
            correlations,
        }
    }
}
