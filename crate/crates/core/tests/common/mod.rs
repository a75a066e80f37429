//! The standard study, trained and evaluated once per test binary.

#![allow(dead_code)]

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use drivestyle_core::learn::{checkpoint, train, TrainOutcome};
use drivestyle_core::metrics::write_eval_csv;
use drivestyle_core::pipeline::{Study, StudyRun, DEFAULT_SEED};
use drivestyle_core::sim::DemonstrationTrace;
use drivestyle_core::Config;

pub const PERP_ANGLES: usize = 12;

pub struct Trained {
    pub cfg: Config,
    pub study: Study,
    pub traces: Vec<DemonstrationTrace>,
    pub outcome: TrainOutcome,
    pub checkpoint: String,
    pub elapsed: Duration,
}

pub struct Evaluated {
    pub run: StudyRun,
    pub csv: Vec<u8>,
    /// Data generation, training and evaluation together.
    pub elapsed: Duration,
}

pub fn train_study(cfg: &Config) -> Trained {
    let start = Instant::now();
    let study = Study::standard(DEFAULT_SEED).unwrap();
    let traces = study.training_traces(cfg).unwrap();
    let outcome = train(&traces, cfg, DEFAULT_SEED).unwrap();
    let checkpoint = checkpoint::to_json(&outcome.model, cfg).unwrap();
    Trained { cfg: cfg.clone(), study, traces, outcome, checkpoint, elapsed: start.elapsed() }
}

pub fn evaluate_study(t: &Trained) -> Evaluated {
    let start = Instant::now();
    let run = t.study.evaluate(&t.outcome.model, &t.cfg, DEFAULT_SEED, PERP_ANGLES).unwrap();
    let mut csv = Vec::new();
    write_eval_csv(&run.rows, &mut csv).unwrap();
    Evaluated { run, csv, elapsed: t.elapsed + start.elapsed() }
}

pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| train_study(&Config::default()))
}

pub fn evaluated() -> &'static Evaluated {
    static CELL: OnceLock<Evaluated> = OnceLock::new();
    CELL.get_or_init(|| evaluate_study(trained()))
}

/// Prints a verdict line past the test harness's output capture, then fails
/// the test if the criterion does not hold.
pub fn verdict(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}
