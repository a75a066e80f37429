//! End-to-end acceptance checks. Each test prints one PASS or FAIL line.
//!
//! Run with `cargo test --release -p drivestyle-core --test acceptance`.

mod common;

use std::time::Instant;

use common::{evaluate_study, evaluated, train_study, trained, verdict, PERP_ANGLES};
use drivestyle_core::learn::{checkpoint, total_loss, Dataset, Gradients, LossWeights, Model, Sample, EMBED_DIM};
use drivestyle_core::metrics::{compute_metrics, correlate, Method, MetricSet, Report, TraceGeometry};
use drivestyle_core::personas::{generate_demonstrations, make_persona, ADB_MAX, ADB_MIN};
use drivestyle_core::pipeline::{self, Condition};
use drivestyle_core::sim::{DemonstrationTrace, EgoRecord, LeadRecord, Scenario, TraceMeta, TraceRecord};
use drivestyle_core::stylespace::shift_style;
use drivestyle_core::Config;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Gradient correctness.

fn gradcheck_config() -> Config {
    Config::default().with_overrides(&["learn.hidden_width=8", "sim.window_s=0.5"]).unwrap()
}

fn gradcheck_dataset(cfg: &Config) -> Dataset {
    let traces: Vec<_> = [(15.0, 1), (50.0, 2)]
        .iter()
        .map(|&(adb, seed)| {
            let p = make_persona(adb, seed, cfg).unwrap();
            let scenario = Scenario {
                posted_speed_mps: cfg.sim.posted_speed_mps,
                duration_s: 120.0,
                seed,
                persona_id: format!("p{seed}"),
                ego_target_speed_mps: None,
            };
            generate_demonstrations(&p, &scenario, cfg).unwrap()
        })
        .collect();
    Dataset::from_traces(&traces, cfg).unwrap()
}

/// Ten samples per batch, mixing follow, lane and masked labels.
fn gradcheck_batch(data: &Dataset, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let mut out: Vec<Sample> = data.train.iter().filter(|s| s.lane == Some(true)).take(2).copied().collect();
    out.extend(data.train.iter().filter(|s| s.follow.is_some()).take(2).copied());
    let rest = 10 - out.len();
    out.extend(sample(rng, data.train.len(), rest).into_iter().map(|i| data.train[i]));
    out
}

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Shifts the follow and velocity output biases so the heads start centered
/// on the label means. Far from the labels the loss is large enough that
/// round-off in the central difference swamps small gradient entries.
fn center_heads(model: &mut Model, data: &Dataset) {
    let follow: Vec<f64> = data.train.iter().filter_map(|s| s.follow).collect();
    let mean_f = follow.iter().sum::<f64>() / follow.len() as f64;
    let mean_v = data.train.iter().map(|s| s.velocity).sum::<f64>() / data.train.len() as f64;
    let (fs, vs) = (model.norm.follow_out_scale, model.norm.velocity_out_scale);
    let (mut raw_f, mut raw_v) = (0.0, 0.0);
    for s in &data.train {
        let w = model.embeddings[s.persona].w;
        let t = model.control_targets(&w, data.window(s)).unwrap();
        raw_f += inverse_softplus(t.f_hat / fs);
        raw_v += inverse_softplus(t.v_hat / vs);
    }
    let n = data.train.len() as f64;
    *model.follow.params_mut().last_mut().unwrap() += inverse_softplus(mean_f / fs) - raw_f / n;
    *model.velocity.params_mut().last_mut().unwrap() += inverse_softplus(mean_v / vs) - raw_v / n;
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let cfg = gradcheck_config();
    let data = gradcheck_dataset(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weights = LossWeights::new(&cfg.learn, 3.0);
    let h = 1e-5;
    // The central difference cannot resolve a gradient below its own round-off
    // divided by the tolerance, so smaller entries are judged against that floor.
    let rel = |a: f64, n: f64, lp: f64, lm: f64| {
        let resolution = f64::EPSILON * (lp.abs() + lm.abs()) / (2.0 * h);
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6).max(resolution / 1e-4)
    };
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for trial in 0..10 {
        let mut model = Model::init(&cfg, &data.personas, trial).unwrap();
        // Move every head off its symmetric initialization.
        for net in model.nets_mut() {
            for p in net.params_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *p += 0.05 * n;
            }
        }
        center_heads(&mut model, &data);
        let table = model.embedding_table();
        let b = gradcheck_batch(&data, &mut rng);
        let eps: Vec<[f64; EMBED_DIM]> =
            (0..b.len()).map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng))).collect();
        let mut grads = Gradients::zeros(&model, table.len());
        total_loss(&model, &table, &data, &b, &eps, &weights, Some(&mut grads)).unwrap();

        let loss = |m: &Model, t: &[f64]| total_loss(m, t, &data, &b, &eps, &weights, None).unwrap().total;
        for k in 0..5 {
            let len = model.nets()[k].params().len();
            for i in sample(&mut rng, len, len.min(40)) {
                let mut plus = model.clone();
                plus.nets_mut()[k].params_mut()[i] += h;
                let mut minus = model.clone();
                minus.nets_mut()[k].params_mut()[i] -= h;
                let (lp, lm) = (loss(&plus, &table), loss(&minus, &table));
                worst = worst.max(rel(grads.nets[k][i], (lp - lm) / (2.0 * h), lp, lm));
                checked += 1;
            }
        }
        for i in 0..table.len() {
            let mut plus = table.clone();
            plus[i] += h;
            let mut minus = table.clone();
            minus[i] -= h;
            let (lp, lm) = (loss(&model, &plus), loss(&model, &minus));
            worst = worst.max(rel(grads.table[i], (lp - lm) / (2.0 * h), lp, lm));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradient correctness",
        worst < 1e-4 && secs < 10.0,
        &format!("max relative error {worst:.2e} over {checked} entries in 10 batches, {secs:.1} s"),
    );
}

// Mimicry.

#[test]
fn mimicry() {
    let e = evaluated();
    let report = Report::from_rows(&e.run.rows);
    let targets = [
        ("mean_velocity", 0.90),
        ("mean_headway_time", 0.75),
        ("distance_headway_merge_back", 0.75),
        ("lane_change_count", 0.75),
        ("time_headway_merge_back", 0.75),
    ];
    let mut pass = e.elapsed.as_secs_f64() < 1800.0;
    let mut parts = Vec::new();
    for (name, min) in targets {
        let acc = report.mimic_accuracy.get(name).copied();
        pass &= acc.is_some_and(|a| a >= min);
        parts.push(format!("{name} {} (min {min})", acc.map_or("n/a".into(), |a| format!("{a:.3}"))));
    }
    parts.push(format!("pipeline {:.0} s", e.elapsed.as_secs_f64()));
    verdict("mimicry", pass, &parts.join(", "));
}

// Style control exactness.

#[test]
fn style_control_exactness() {
    let t = trained();
    let model = &t.outcome.model;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut starts: Vec<[f64; EMBED_DIM]> = model.embeddings.iter().map(|e| e.w).collect();
    starts.extend((0..50).map(|_| std::array::from_fn(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))));
    let (mut worst_free, mut worst_clamped, mut free, mut clamped, mut idempotent) = (0.0f64, 0.0f64, 0, 0, true);
    for w in &starts {
        let s = model.predict_style(w);
        for _ in 0..20 {
            let delta = rng.random_range(-50.0..50.0);
            let shifted = shift_style(model, w, delta).unwrap();
            let got = model.predict_style(&shifted);
            let target = s + delta;
            if (ADB_MIN..=ADB_MAX).contains(&target) {
                worst_free = worst_free.max((got - s - delta).abs());
                free += 1;
            } else {
                let bound = target.clamp(ADB_MIN, ADB_MAX);
                worst_clamped = worst_clamped.max((got - bound).abs());
                clamped += 1;
                // Pushing further past the bound it sits on changes nothing.
                let outward = if bound == ADB_MAX { delta.abs() } else { -delta.abs() };
                let again = model.predict_style(&shift_style(model, &shifted, outward).unwrap());
                idempotent &= (again - got).abs() < 1e-9;
            }
        }
    }
    verdict(
        "style control exactness",
        worst_free < 1e-9 && worst_clamped < 1e-9 && idempotent && free > 0 && clamped > 0,
        &format!(
            "{free} unclamped shifts off by at most {worst_free:.1e}, {clamped} clamped shifts off by at most {worst_clamped:.1e}, clamp idempotent {idempotent}"
        ),
    );
}

// Behavioral ordering.

#[test]
fn behavioral_ordering() {
    let e = evaluated();
    let report = Report::from_rows(&e.run.rows);
    let personas = e.run.fits.len();
    let (v, l) = (report.velocity_ordering, report.lane_change_ordering);
    let frac = |f: Option<f64>| f.unwrap_or(0.0);
    verdict(
        "behavioral ordering",
        personas >= 9 && v.cases >= 27 && frac(v.fraction) >= 0.8 && frac(l.fraction) >= 0.7,
        &format!(
            "{personas} personas, {} cases: velocity ordered in {:.3} (min 0.8), lane changes in {:.3} (min 0.7)",
            v.cases,
            frac(v.fraction),
            frac(l.fraction)
        ),
    );
}

// Embedding-gradient correlation.

#[test]
fn embedding_gradient_correlation() {
    let t = trained();
    let e = evaluated();
    let model = &t.outcome.model;
    let xs: Vec<f64> =
        e.run.fits.iter().map(|f| drivestyle_core::stylespace::project_on_gradient(model, &f.w).unwrap()).collect();
    let ys: Vec<f64> = e.run.fits.iter().map(|f| f.adb_score).collect();
    let (r, p) = correlate(&xs, &ys, Method::Pearson).unwrap();
    verdict(
        "embedding-gradient correlation",
        xs.len() >= 9 && r >= 0.8,
        &format!("Pearson r {r:.3} (p {p:.2e}) over {} refit personas (min 0.8)", xs.len()),
    );
}

// Perpendicular preservation.

#[test]
fn perpendicular_preservation() {
    let t = trained();
    let e = evaluated();
    let model = &t.outcome.model;
    let mut worst = 0.0f64;
    let mut varying = 0;
    for fit in &e.run.fits {
        let s = model.predict_style(&fit.w);
        let sweep: Vec<_> = e.run.rows.iter().filter(|r| r.persona_id == fit.persona_id && r.condition == "perp").collect();
        assert_eq!(sweep.len(), PERP_ANGLES);
        for r in &sweep {
            worst = worst.max((r.s_hat.unwrap() - s).abs());
        }
        let angles: Vec<f64> = sweep.iter().map(|r| r.angle_deg.unwrap()).collect();
        let left: Vec<f64> = sweep.iter().map(|r| r.left_lane_fraction).collect();
        let (a_h, h): (Vec<f64>, Vec<f64>) =
            sweep.iter().filter_map(|r| Some((r.angle_deg?, r.min_headway_distance?))).unzip();
        let strong = |xs: &[f64], ys: &[f64]| correlate(xs, ys, Method::Spearman).is_ok_and(|(r, _)| r.abs() >= 0.4);
        if strong(&angles, &left) || strong(&a_h, &h) {
            varying += 1;
        }
    }
    let sweeps = e.run.fits.len();
    verdict(
        "perpendicular preservation",
        worst < 1e-9 && 2 * varying > sweeps,
        &format!(
            "max |change in predicted score| {worst:.1e} over {sweeps} sweeps of {PERP_ANGLES} angles; {varying}/{sweeps} sweeps with |Spearman r| >= 0.4"
        ),
    );
}

// Safety invariant.

#[test]
fn safety_invariant() {
    let t = trained();
    let e = evaluated();
    let (model, cfg) = (&t.outcome.model, &t.cfg);
    let f_min = cfg.controllers.f_min;
    let geo = pipeline::geometry(cfg);
    let (mut collisions, mut worst_gap, mut worst_dx, mut rollouts) = (0usize, f64::INFINITY, f64::INFINITY, 0);
    for seed in 0..100u64 {
        let fit = &e.run.fits[seed as usize % e.run.fits.len()];
        let scenario = DemonstrationTrace {
            meta: TraceMeta {
                persona_id: fit.persona_id.clone(),
                adb_score: fit.adb_score,
                seed: 50_000 + seed,
                condition: "demo".into(),
                posted_speed_mps: cfg.sim.posted_speed_mps,
                ego_target_speed_mps: cfg.sim.posted_speed_mps,
                dt: cfg.sim.dt,
                duration_s: pipeline::EPISODE_S,
                config_hash: cfg.hash(),
            },
            records: Vec::new(),
        };
        let angle = 30.0 * (seed % 12) as f64;
        for condition in [Condition::Mimic, Condition::Aggressive, Condition::Cautious, Condition::Perpendicular(angle)] {
            let w = pipeline::condition_embedding(model, &fit.w, condition, cfg).unwrap();
            let ep = pipeline::replay(model, &w, &scenario, &condition.label(), cfg).unwrap();
            collisions += ep.collisions;
            worst_gap = worst_gap.min(ep.min_gap_ahead);
            for r in &ep.trace.records {
                if r.lead.is_some() && r.d_x > 0.0 && r.d_x < geo.sentinel_gap && r.d_y.abs() < geo.lane_half_width {
                    worst_dx = worst_dx.min(r.d_x);
                }
            }
            rollouts += 1;
        }
    }
    verdict(
        "safety invariant",
        collisions == 0 && worst_gap >= f_min && worst_dx >= f_min,
        &format!(
            "{rollouts} rollouts, {collisions} collision steps, smallest gap ahead {worst_gap:.2} m, smallest same-lane lead d_x {worst_dx:.2} m (f_min {f_min} m)"
        ),
    );
}

// Oracle equivalence.

/// Straightforward recomputation of every metric: split the trace into runs
/// with a lead ahead, then score each run and each flagged step separately.
fn brute_force_metrics(t: &DemonstrationTrace, geo: &TraceGeometry) -> MetricSet {
    let r = &t.records;
    let n = r.len();
    let ahead: Vec<bool> =
        r.iter().map(|x| x.d_x > 0.0 && x.d_x < geo.sentinel_gap && x.d_y.abs() < geo.lane_half_width).collect();
    let avg = |v: Vec<f64>| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };

    let mut headway = Vec::new();
    let mut gaps = Vec::new();
    let mut times = Vec::new();
    for i in 0..n {
        if !r[i].lane_change_flag {
            continue;
        }
        if r[i].ego.lane == 0 && ahead[i] {
            headway.push(r[i].d_x / r[i].ego.v);
        }
        if r[i].ego.lane == 1 && r[i].lead.is_some() && r[i].d_x < 0.0 {
            gaps.push(-r[i].d_x);
            times.push(-r[i].d_x / r[i].ego.v);
        }
    }

    let lag = (1.0 / t.meta.dt).round() as usize;
    let mut runs = Vec::new();
    let mut start = None;
    for i in 0..=n {
        match (start, i < n && ahead[i]) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    let mut minima = Vec::new();
    for (s, e) in runs {
        let end = (s..e).find(|&i| r[i].lane_change_flag || (i >= lag && r[i].ego.v - r[i - lag].ego.v < -0.5));
        if let Some(end) = end {
            minima.push((s..=end).map(|i| r[i].d_x).fold(f64::INFINITY, f64::min));
        }
    }

    MetricSet {
        mean_velocity: r.iter().map(|x| x.ego.v).sum::<f64>() / n as f64,
        mean_headway_time: avg(headway),
        distance_headway_merge_back: avg(gaps),
        time_headway_merge_back: avg(times),
        lane_change_count: r.iter().filter(|x| x.lane_change_flag).count(),
        min_headway_distance: avg(minima),
        left_lane_fraction: r.iter().filter(|x| x.ego.lane == 1).count() as f64 / n as f64,
    }
}

fn random_trace(rng: &mut ChaCha8Rng) -> DemonstrationTrace {
    let n = rng.random_range(1..400);
    let dt = [0.05, 0.1, 0.2][rng.random_range(0..3)];
    let mut v: f64 = rng.random_range(5.0..35.0);
    let mut d_x: f64 = rng.random_range(-100.0..600.0);
    let mut lane = rng.random_range(0..2u8);
    let records = (0..n)
        .map(|i| {
            v = (v + rng.random_range(-1.5..1.0)).max(0.5);
            d_x = if rng.random_bool(0.03) { rng.random_range(-100.0..600.0) } else { d_x + rng.random_range(-3.0..2.0) };
            let flag = rng.random_bool(0.05);
            if flag && rng.random_bool(0.7) {
                lane = 1 - lane;
            }
            let d_y = if rng.random_bool(0.8) { -3.7 * f64::from(lane) + rng.random_range(-0.5..0.5) } else { rng.random_range(-5.0..5.0) };
            let lead = (d_x.abs() <= 500.0 && rng.random_bool(0.95)).then_some(LeadRecord { x: d_x, y: d_y, v: 20.0 });
            TraceRecord {
                t: i as f64 * dt,
                ego: EgoRecord { x: 0.0, y: 3.7 * f64::from(lane), v, lane },
                lead,
                d_x,
                d_y,
                lane_change_flag: flag,
            }
        })
        .collect();
    DemonstrationTrace {
        meta: TraceMeta {
            persona_id: "r".into(),
            adb_score: 30.0,
            seed: 0,
            condition: "demo".into(),
            posted_speed_mps: 24.5872,
            ego_target_speed_mps: 24.5872,
            dt,
            duration_s: n as f64 * dt,
            config_hash: String::new(),
        },
        records,
    }
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn oracle_equivalence() {
    let geo = TraceGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = Vec::new();
    let mut events = 0;
    for i in 0..100 {
        let t = random_trace(&mut rng);
        let (got, want) = (compute_metrics(&t, &geo).unwrap(), brute_force_metrics(&t, &geo));
        events += usize::from(want.min_headway_distance.is_some()) + usize::from(want.distance_headway_merge_back.is_some());
        let same = close(Some(got.mean_velocity), Some(want.mean_velocity))
            && close(got.mean_headway_time, want.mean_headway_time)
            && close(got.distance_headway_merge_back, want.distance_headway_merge_back)
            && close(got.time_headway_merge_back, want.time_headway_merge_back)
            && got.lane_change_count == want.lane_change_count
            && close(got.min_headway_distance, want.min_headway_distance)
            && close(Some(got.left_lane_fraction), Some(want.left_lane_fraction));
        if !same {
            mismatches.push(i);
        }
    }
    verdict(
        "oracle equivalence",
        mismatches.is_empty() && events > 50,
        &format!("100 random traces, {events} with approach or merge-back events, mismatches {mismatches:?}"),
    );
}

// Determinism and persistence.

#[test]
fn determinism_and_persistence() {
    let first = trained();
    let first_eval = evaluated();
    let second = train_study(&Config::default());
    let second_eval = evaluate_study(&second);
    let same_checkpoint = first.checkpoint == second.checkpoint;
    let same_csv = first_eval.csv == second_eval.csv;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    checkpoint::save(&first.outcome.model, &first.cfg, &path).unwrap();
    let saved = std::fs::read(&path).unwrap();
    let (model, cfg) = checkpoint::load(&path).unwrap();
    let resaved = checkpoint::to_json(&model, &cfg).unwrap();
    let round_trip = saved == resaved.as_bytes() && saved == first.checkpoint.as_bytes();

    verdict(
        "determinism and persistence",
        same_checkpoint && same_csv && round_trip,
        &format!(
            "rerun checkpoint identical {same_checkpoint}, rerun metric CSV identical {same_csv} ({} bytes), save/load round trip identical {round_trip}",
            first_eval.csv.len()
        ),
    );
}
