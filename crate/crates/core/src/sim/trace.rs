use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Frame, Lane, WorldState};
use crate::error::{Error, Result};

/// Per-episode settings shared by demonstrations and rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub posted_speed_mps: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub persona_id: String,
    /// Ego target speed that parameterizes the lead-speed schedule; defaults
    /// to the posted speed when absent.
    #[serde(default)]
    pub ego_target_speed_mps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub lane: Lane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadRecord {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

/// One line of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub ego: EgoRecord,
    pub lead: Option<LeadRecord>,
    pub d_x: f64,
    pub d_y: f64,
    /// True only on the step a lane change is initiated.
    pub lane_change_flag: bool,
}

impl TraceRecord {
    pub fn from_state(state: &WorldState, sentinel_gap: f64, lane_change_flag: bool) -> Self {
        let frame = state.frame(sentinel_gap);
        let lead = state
            .tracked_lead()
            .filter(|l| (l.state.x - state.ego.x).abs() <= sentinel_gap)
            .map(|l| LeadRecord { x: l.state.x, y: l.state.y, v: l.state.v });
        Self {
            t: state.time,
            ego: EgoRecord { x: state.ego.x, y: state.ego.y, v: state.ego.v, lane: state.ego.lane },
            lead,
            d_x: frame.d_x,
            d_y: frame.d_y,
            lane_change_flag,
        }
    }

    /// The observation this record carries.
    pub fn frame(&self, posted_speed: f64) -> Frame {
        Frame {
            v_ev: self.ego.v,
            v_lv: self.lead.map_or(posted_speed, |l| l.v),
            d_x: self.d_x,
            d_y: self.d_y,
        }
    }
}

/// Sidecar metadata written next to every trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub persona_id: String,
    pub adb_score: f64,
    pub seed: u64,
    /// `demo` for persona demonstrations, otherwise the rollout condition.
    pub condition: String,
    pub posted_speed_mps: f64,
    pub ego_target_speed_mps: f64,
    pub dt: f64,
    pub duration_s: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationTrace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

impl DemonstrationTrace {
    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        let posted = self.meta.posted_speed_mps;
        self.records.iter().map(move |r| r.frame(posted))
    }

    /// Path of the sidecar for a trace file: `foo.jsonl` → `foo.json`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(Self::sidecar_path(path), meta + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta_text = std::fs::read_to_string(Self::sidecar_path(path))?;
        let meta: TraceMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Parse(format!("{}: {e}", Self::sidecar_path(path).display())))?;
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        Ok(Self { meta, records })
    }

    /// All `*.jsonl` traces in a directory, sorted by file name.
    pub fn read_dir(dir: &Path) -> Result<Vec<Self>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::read(p)).collect()
    }
}
