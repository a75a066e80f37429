//! The experiment protocol shared by the command line, the acceptance suite
//! and the benchmarks: persona rosters, demonstrations, the four study
//! conditions and evaluation rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{invalid, Result};
use crate::learn::{fit_new_user, Model, NetworkPolicy, StyleEmbedding, EMBED_DIM};
use crate::metrics::{compute_metrics, EvalRow, TraceGeometry};
use crate::personas::{generate_demonstrations, make_persona, ADB_MAX, ADB_MIN};
use crate::rollout::{run_episode, Episode};
use crate::sim::{DemonstrationTrace, Scenario};
use crate::stylespace::{perpendicular_sample, project_on_gradient, shift_style};

/// Seed used for persona rosters, training and fitting unless overridden.
pub const DEFAULT_SEED: u64 = 1;

/// Length of every demonstration and rollout in the standard study.
pub const EPISODE_S: f64 = 600.0;

/// Scenario index of the first evaluation drive; training drives count up from 0.
pub const FIRST_TEST_DRIVE: u64 = 100;

/// A synthetic driver: an ADB score plus the seed that perturbs its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub persona_id: String,
    pub adb_score: f64,
    pub seed: u64,
}

impl PersonaSpec {
    /// Scenario of the `drive`-th demonstration of this persona.
    pub fn scenario(&self, drive: u64, cfg: &Config) -> Scenario {
        let seed = ChaCha8Rng::seed_from_u64(self.seed ^ drive.wrapping_mul(0x9e37_79b9_7f4a_7c15)).random();
        Scenario {
            posted_speed_mps: cfg.sim.posted_speed_mps,
            duration_s: EPISODE_S,
            seed,
            persona_id: self.persona_id.clone(),
            ego_target_speed_mps: None,
        }
    }

    pub fn demonstrate(&self, drive: u64, cfg: &Config) -> Result<DemonstrationTrace> {
        let params = make_persona(self.adb_score, self.seed, cfg)?;
        let mut trace = generate_demonstrations(&params, &self.scenario(drive, cfg), cfg)?;
        trace.meta.config_hash = cfg.hash();
        Ok(trace)
    }

    /// Demonstrations `first..first + count`.
    pub fn demonstrations(&self, first: u64, count: usize, cfg: &Config) -> Result<Vec<DemonstrationTrace>> {
        (first..first + count as u64).map(|d| self.demonstrate(d, cfg)).collect()
    }
}

/// `n` scores spread evenly over the ADB range, endpoints included.
pub fn evenly_spaced_scores(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (ADB_MIN + ADB_MAX)],
        _ => (0..n).map(|i| ADB_MIN + (ADB_MAX - ADB_MIN) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Personas for `scores`, named `{prefix}{index}`, with parameter seeds drawn
/// from one generator seeded by `seed`.
pub fn roster(scores: &[f64], seed: u64, prefix: &str) -> Result<Vec<PersonaSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scores
        .iter()
        .enumerate()
        .map(|(i, &adb_score)| {
            if !(ADB_MIN..=ADB_MAX).contains(&adb_score) {
                return Err(invalid(format!("ADB score {adb_score} outside [{ADB_MIN}, {ADB_MAX}]")));
            }
            Ok(PersonaSpec { persona_id: format!("{prefix}{i}"), adb_score, seed: rng.random() })
        })
        .collect()
}

/// Six training personas evenly spread over the ADB range and three held-out
/// personas midway between neighbouring training scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub train: Vec<PersonaSpec>,
    pub held_out: Vec<PersonaSpec>,
}

impl Study {
    pub fn standard(seed: u64) -> Result<Self> {
        let train_scores = evenly_spaced_scores(6);
        let held_scores: Vec<f64> = [0, 2, 4].iter().map(|&i| 0.5 * (train_scores[i] + train_scores[i + 1])).collect();
        Ok(Self { train: roster(&train_scores, seed, "train")?, held_out: roster(&held_scores, seed ^ 0xfeed, "heldout")? })
    }

    pub fn test_personas(&self) -> impl Iterator<Item = &PersonaSpec> {
        self.train.iter().chain(&self.held_out)
    }

    /// Drives `0..TRAIN_DRIVES` of every training persona.
    pub fn training_traces(&self, cfg: &Config) -> Result<Vec<DemonstrationTrace>> {
        let mut out = Vec::with_capacity(self.train.len() * TRAIN_DRIVES);
        for p in &self.train {
            out.extend(p.demonstrations(0, TRAIN_DRIVES, cfg)?);
        }
        Ok(out)
    }

    /// Refits every test persona on its first evaluation drive, replays all
    /// evaluation drives under mimic, aggressive and cautious, and sweeps
    /// `perp_angles` ellipse samples over the first drive.
    pub fn evaluate(&self, model: &Model, cfg: &Config, seed: u64, perp_angles: usize) -> Result<StudyRun> {
        let mut run = StudyRun::default();
        let base = Condition::study_set(0);
        let sweep: Vec<Condition> = Condition::study_set(perp_angles).split_off(base.len());
        for p in self.test_personas() {
            let demos = p.demonstrations(FIRST_TEST_DRIVE, TEST_DRIVES, cfg)?;
            let fit = fit_new_user(model, &demos[0], cfg, seed ^ p.seed)?;
            log::info!("{}: adb {:.1}, fitted score {:.1}", p.persona_id, p.adb_score, model.predict_style(&fit.w));
            run.rows.extend(evaluate_driver(model, &fit, &demos, &base, cfg)?);
            run.rows.extend(evaluate_driver(model, &fit, &demos[..1], &sweep, cfg)?);
            run.fits.push(fit);
        }
        Ok(run)
    }
}

/// Demonstrations per training persona.
pub const TRAIN_DRIVES: usize = 3;
/// Evaluation drives per test persona.
pub const TEST_DRIVES: usize = 3;

#[derive(Debug, Clone, Default)]
pub struct StudyRun {
    pub fits: Vec<StyleEmbedding>,
    pub rows: Vec<EvalRow>,
}

/// One of the four study conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Mimic,
    Aggressive,
    Cautious,
    /// Ellipse sample at the given angle in degrees.
    Perpendicular(f64),
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Mimic => "mimic",
            Condition::Aggressive => "aggressive",
            Condition::Cautious => "cautious",
            Condition::Perpendicular(_) => "perp",
        }
    }

    /// Name as recorded in trace metadata; perpendicular samples carry their
    /// angle, as in `perp:30`.
    pub fn label(&self) -> String {
        match self {
            Condition::Perpendicular(a) => format!("perp:{a}"),
            c => c.name().to_string(),
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label.split_once(':') {
            Some(("perp", a)) => {
                let a = a.parse().map_err(|_| invalid(format!("bad angle in condition `{label}`")))?;
                Ok(Condition::Perpendicular(a))
            }
            _ => Self::parse(label, None),
        }
    }

    pub fn parse(name: &str, angle_deg: Option<f64>) -> Result<Self> {
        match (name, angle_deg) {
            ("mimic", _) => Ok(Condition::Mimic),
            ("aggressive", _) => Ok(Condition::Aggressive),
            ("cautious", _) => Ok(Condition::Cautious),
            ("perp", Some(a)) => Ok(Condition::Perpendicular(a)),
            ("perp", None) => Err(invalid("condition perp needs an angle")),
            _ => Err(invalid(format!("unknown condition `{name}`"))),
        }
    }

    /// Mimic, aggressive, cautious and a sweep of `perp_angles` ellipse samples
    /// spaced evenly around the circle.
    pub fn study_set(perp_angles: usize) -> Vec<Condition> {
        let mut set = vec![Condition::Mimic, Condition::Aggressive, Condition::Cautious];
        set.extend((0..perp_angles).map(|i| Condition::Perpendicular(360.0 * i as f64 / perp_angles as f64)));
        set
    }

    pub fn angle_deg(&self) -> Option<f64> {
        match self {
            Condition::Perpendicular(a) => Some(*a),
            _ => None,
        }
    }
}

/// The embedding a condition drives with, starting from a driver's own `w`.
pub fn condition_embedding(
    model: &Model,
    w: &[f64; EMBED_DIM],
    condition: Condition,
    cfg: &Config,
) -> Result<[f64; EMBED_DIM]> {
    let delta = cfg.stylespace.condition_shift_adb;
    match condition {
        Condition::Mimic => Ok(*w),
        Condition::Aggressive => shift_style(model, w, delta),
        Condition::Cautious => shift_style(model, w, -delta),
        Condition::Perpendicular(deg) => perpendicular_sample(model, w, &model.embeddings, deg.to_radians()),
    }
}

/// Drives `w` through the scenario of `demo`: same seed, traffic and duration.
pub fn replay(
    model: &Model,
    w: &[f64; EMBED_DIM],
    demo: &DemonstrationTrace,
    condition: &str,
    cfg: &Config,
) -> Result<Episode> {
    let scenario = Scenario {
        posted_speed_mps: demo.meta.posted_speed_mps,
        duration_s: demo.meta.duration_s,
        seed: demo.meta.seed,
        persona_id: demo.meta.persona_id.clone(),
        ego_target_speed_mps: Some(demo.meta.ego_target_speed_mps),
    };
    let mut policy = NetworkPolicy::new(model, *w);
    let mut episode = run_episode(&mut policy, &scenario, cfg, demo.meta.adb_score, condition)?;
    episode.trace.meta.config_hash = cfg.hash();
    Ok(episode)
}

pub fn geometry(cfg: &Config) -> TraceGeometry {
    TraceGeometry { lane_half_width: 0.5 * cfg.sim.lane_width_m, sentinel_gap: cfg.sim.sentinel_gap_m }
}

/// Replays every demonstration under every condition and scores each rollout
/// against the demonstration it replays.
pub fn evaluate_driver(
    model: &Model,
    driver: &StyleEmbedding,
    demos: &[DemonstrationTrace],
    conditions: &[Condition],
    cfg: &Config,
) -> Result<Vec<EvalRow>> {
    let geo = geometry(cfg);
    let hash = cfg.hash();
    let mut rows = Vec::with_capacity(demos.len() * conditions.len());
    for demo in demos {
        let reference = compute_metrics(demo, &geo)?;
        for &condition in conditions {
            let w = condition_embedding(model, &driver.w, condition, cfg)?;
            let episode = replay(model, &w, demo, &condition.label(), cfg)?;
            let metrics = compute_metrics(&episode.trace, &geo)?;
            let mut row = EvalRow::new(
                &demo.meta.persona_id,
                demo.meta.adb_score,
                condition.name(),
                demo.meta.seed,
                &metrics,
                &reference,
                &hash,
            );
            row.angle_deg = condition.angle_deg();
            row.s_hat = Some(model.predict_style(&w));
            row.projection = Some(project_on_gradient(model, &w)?);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Scores saved rollouts against the demonstrations they replay, matched on
/// persona and scenario seed. Rollouts without a matching demonstration are
/// an error.
pub fn evaluate_rollouts(rollouts: &[DemonstrationTrace], demos: &[DemonstrationTrace], cfg: &Config) -> Result<Vec<EvalRow>> {
    let geo = geometry(cfg);
    let hash = cfg.hash();
    rollouts
        .iter()
        .map(|r| {
            let demo = demos
                .iter()
                .find(|d| d.meta.persona_id == r.meta.persona_id && d.meta.seed == r.meta.seed)
                .ok_or_else(|| invalid(format!("no demonstration for {} seed {}", r.meta.persona_id, r.meta.seed)))?;
            let condition = Condition::from_label(&r.meta.condition)?;
            let metrics = compute_metrics(r, &geo)?;
            let reference = compute_metrics(demo, &geo)?;
            let mut row =
                EvalRow::new(&r.meta.persona_id, r.meta.adb_score, condition.name(), r.meta.seed, &metrics, &reference, &hash);
            row.angle_deg = condition.angle_deg();
            Ok(row)
        })
        .collect()
}
