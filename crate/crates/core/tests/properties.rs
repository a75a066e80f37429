//! Simulator, persona and controller properties over randomized inputs.

use drivestyle_core::controllers::Mode;
use drivestyle_core::personas::{generate_demonstrations, make_persona, nominal_persona, PersonaPolicy};
use drivestyle_core::rollout::run_episode;
use drivestyle_core::sim::{spawn_lead_schedule, DemonstrationTrace, Scenario, World};
use drivestyle_core::Config;
use proptest::prelude::*;

fn scenario(seed: u64, duration_s: f64) -> Scenario {
    Scenario {
        posted_speed_mps: Config::default().sim.posted_speed_mps,
        duration_s,
        seed,
        persona_id: format!("p{seed}"),
        ego_target_speed_mps: None,
    }
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_is_the_six_speed_set(v_e in 5.0f64..45.0, s in 5.0f64..45.0, seed in any::<u64>()) {
        let schedule = spawn_lead_schedule(v_e, s, seed).unwrap();
        let expected = sorted(vec![0.85 * v_e, 0.9 * v_e, 0.97 * v_e, 0.9 * s, s, 1.1 * s]);
        prop_assert_eq!(sorted(schedule.clone()), expected);
        prop_assert_eq!(spawn_lead_schedule(v_e, s, seed).unwrap(), schedule);
    }

    #[test]
    fn straight_driving_keeps_lateral_position(
        v in 0.0f64..40.0,
        accels in prop::collection::vec(-8.0f64..6.0, 1..60),
        seed in any::<u64>(),
    ) {
        let mut cfg = Config::default().sim;
        cfg.initial_speed_mps = Some(v);
        let mut world = World::new(&cfg, 25.0, seed).unwrap();
        let y0 = world.state().ego.y;
        for a in accels {
            world = world.step(a, 0.0, cfg.dt).unwrap();
            prop_assert!((world.state().ego.y - y0).abs() < 1e-9);
        }
    }

    #[test]
    fn ego_never_teleports(
        commands in prop::collection::vec((-8.0f64..6.0, -0.6f64..0.6), 1..80),
        seed in any::<u64>(),
    ) {
        let cfg = Config::default().sim;
        let bound = cfg.v_max * cfg.dt + 0.5 * cfg.accel_max.max(-cfg.accel_min) * cfg.dt * cfg.dt;
        let mut world = World::new(&cfg, 25.0, seed).unwrap();
        for (a, steer) in commands {
            let next = world.step(a, steer, cfg.dt).unwrap();
            prop_assert!((next.state().ego.x - world.state().ego.x).abs() <= bound + 1e-12);
            world = next;
        }
    }

    #[test]
    fn persona_parameters_stay_within_ten_percent(adb in 11.0f64..=55.0, seed in any::<u64>()) {
        let cfg = Config::default();
        let nominal = nominal_persona(adb, &cfg.personas).unwrap();
        let p = make_persona(adb, seed, &cfg).unwrap();
        for (got, base) in [
            (p.target_speed, nominal.target_speed),
            (p.desired_follow, nominal.desired_follow),
            (p.pass_headway_time, nominal.pass_headway_time),
            (p.merge_back_gap, nominal.merge_back_gap),
        ] {
            prop_assert!((got - base).abs() <= 0.1 * base + 1e-12);
        }
    }
}

#[test]
fn same_seed_gives_identical_demonstrations() {
    let cfg = Config::default();
    let p = make_persona(40.0, 3, &cfg).unwrap();
    let a = generate_demonstrations(&p, &scenario(11, 120.0), &cfg).unwrap();
    let b = generate_demonstrations(&p, &scenario(11, 120.0), &cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.meta, b.meta);
}

#[test]
fn ten_minutes_gives_six_thousand_records() {
    let cfg = Config::default();
    let p = make_persona(30.0, 1, &cfg).unwrap();
    assert_eq!(generate_demonstrations(&p, &scenario(2, 600.0), &cfg).unwrap().records.len(), 6000);
}

#[test]
fn persona_that_never_passes_changes_no_lanes() {
    let cfg = Config::default();
    let mut p = make_persona(55.0, 1, &cfg).unwrap();
    p.pass_headway_time = 0.0;
    let t = generate_demonstrations(&p, &scenario(4, 300.0), &cfg).unwrap();
    assert_eq!(t.records.iter().filter(|r| r.lane_change_flag).count(), 0);
}

fn lane_changes(t: &DemonstrationTrace) -> usize {
    t.records.iter().filter(|r| r.lane_change_flag).count()
}

fn mean_velocity(t: &DemonstrationTrace) -> f64 {
    t.records.iter().map(|r| r.ego.v).sum::<f64>() / t.records.len() as f64
}

#[test]
fn aggressive_persona_outpaces_cautious_one() {
    let cfg = Config::default();
    for seed in 0..3 {
        let fast = generate_demonstrations(&nominal_persona(55.0, &cfg.personas).unwrap(), &scenario(seed, 600.0), &cfg).unwrap();
        let slow = generate_demonstrations(&nominal_persona(11.0, &cfg.personas).unwrap(), &scenario(seed, 600.0), &cfg).unwrap();
        assert!(mean_velocity(&fast) > mean_velocity(&slow));
        assert!(lane_changes(&fast) >= lane_changes(&slow));
    }
}

#[test]
fn behavior_is_monotone_in_score() {
    let cfg = Config::default();
    for seed in 0..3 {
        let traces: Vec<_> = [11.0, 22.0, 33.0, 44.0, 55.0]
            .iter()
            .map(|&adb| generate_demonstrations(&nominal_persona(adb, &cfg.personas).unwrap(), &scenario(seed, 600.0), &cfg).unwrap())
            .collect();
        for pair in traces.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            assert!(mean_velocity(hi) >= mean_velocity(lo), "seed {seed}: velocity drops from adb {} to {}", lo.meta.adb_score, hi.meta.adb_score);
            assert!(lane_changes(hi) >= lane_changes(lo), "seed {seed}: lane changes drop from adb {} to {}", lo.meta.adb_score, hi.meta.adb_score);
        }
    }
}

/// Persona rollouts over a spread of scores: the safety, completion and
/// labeling properties every episode must satisfy.
#[test]
fn persona_rollouts_are_safe_and_complete_their_lane_changes() {
    let cfg = Config::default();
    let settle = 0.1;
    let horizon = (15.0 / cfg.sim.dt).round() as usize;
    for (i, adb) in [11.0, 22.0, 33.0, 44.0, 55.0].into_iter().enumerate() {
        let seed = 100 + i as u64;
        let params = make_persona(adb, seed, &cfg).unwrap();
        let mut policy = PersonaPolicy::new(params, &cfg, seed);
        let mut sc = scenario(seed, 600.0);
        sc.ego_target_speed_mps = Some(policy.params().target_speed);
        let ep = run_episode(&mut policy, &sc, &cfg, adb, "demo").unwrap();
        assert_eq!(ep.collisions, 0, "adb {adb}");
        assert_eq!(ep.off_road_steps, 0, "adb {adb}");
        assert!(ep.min_gap_ahead >= cfg.controllers.f_min, "adb {adb}: gap {}", ep.min_gap_ahead);

        let r = &ep.trace.records;
        for (t, rec) in r.iter().enumerate().filter(|(_, x)| x.lane_change_flag) {
            let changed = r[t..(t + horizon).min(r.len())].iter().any(|x| x.ego.lane != rec.ego.lane);
            assert!(changed || t + horizon > r.len(), "adb {adb}: flag at step {t} without a lane change");
        }
        let mut t = 0;
        while t < ep.modes.len() {
            if ep.modes[t] != Mode::LaneChange {
                t += 1;
                continue;
            }
            let start = t;
            while t < ep.modes.len() && ep.modes[t] == Mode::LaneChange {
                t += 1;
            }
            if t < ep.modes.len() {
                let target = cfg.sim.lane_center(1 - r[start].ego.lane.min(1));
                let y = r[t].ego.y;
                assert!((y - target).abs() < settle, "adb {adb}: released {:.3} m off the centerline", y - target);
            }
        }
    }
}
