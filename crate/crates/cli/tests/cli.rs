use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_drivestyle");

/// Small settings so the whole pipeline runs in seconds.
const QUICK: [&str; 6] = [
    "--set",
    "learn.epochs=3",
    "--set",
    "learn.hidden_width=16",
    "--set",
    "learn.fit_steps=20",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("MAVERIC_LOG", "error").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(QUICK);
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config_hash(extra: &[&str]) -> String {
    let cfg = drivestyle_core::Config::default()
        .with_overrides(&extra.chunks(2).map(|c| c[1]).collect::<Vec<_>>())
        .unwrap();
    cfg.hash()
}

#[test]
fn gen_data_writes_traces_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&["gen-data", "--personas", "8", "--demos", "1", "--duration-s", "60", "--seed", "1", "--out", s(&out)]);
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".jsonl")).count(), 8);
    // One sidecar per trace plus the roster.
    assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 9);
    let sidecar = fs::read_to_string(out.join("p0_d000.json")).unwrap();
    assert!(sidecar.contains(&config_hash(&[])));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let hash = config_hash(&QUICK);

    ok(&with_quick(&["gen-data", "--adb", "11,33,55", "--demos", "1", "--duration-s", "90", "--out", s(&p("train"))]));
    ok(&with_quick(&["gen-data", "--adb", "25", "--prefix", "user", "--first-demo", "100", "--demos", "1", "--duration-s", "90", "--out", s(&p("user"))]));

    ok(&with_quick(&["train", "--data", s(&p("train")), "--out", s(&p("a.json")), "--seed", "1"]));
    ok(&with_quick(&["train", "--data", s(&p("train")), "--out", s(&p("b.json")), "--seed", "1"]));
    assert_eq!(fs::read(p("a.json")).unwrap(), fs::read(p("b.json")).unwrap());
    let log = fs::read_to_string(p("a.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().nth(1).unwrap().ends_with(&hash));

    let demo = p("user").join("user0_d100.jsonl");
    ok(&with_quick(&["fit-user", "--model", s(&p("a.json")), "--trace", s(&demo), "--out", s(&p("w.json"))]));
    let fitted: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("w.json")).unwrap()).unwrap();
    assert_eq!(fitted["config_hash"], hash.as_str());
    let s_hat = fitted["s_hat"].as_f64().unwrap();

    ok(&with_quick(&["shift", "--model", s(&p("a.json")), "--embedding", s(&p("w.json")), "--delta-adb", "-5", "--out", s(&p("w_down.json"))]));
    let shifted: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("w_down.json")).unwrap()).unwrap();
    let expected = (s_hat - 5.0).clamp(11.0, 55.0);
    assert!((shifted["s_hat"].as_f64().unwrap() - expected).abs() < 1e-9);

    ok(&with_quick(&["perp", "--model", s(&p("a.json")), "--embedding", s(&p("w.json")), "--angle-deg", "90", "--out", s(&p("w_perp.json"))]));
    let perp: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("w_perp.json")).unwrap()).unwrap();
    assert!((perp["s_hat"].as_f64().unwrap() - s_hat).abs() < 1e-9);

    fs::create_dir(p("rollouts")).unwrap();
    let (model, w) = (p("a.json"), p("w.json"));
    for (name, extra) in [("mimic", None), ("aggressive", None), ("cautious", None), ("perp", Some("30"))] {
        let out = p("rollouts").join(format!("{name}.jsonl"));
        let mut args = vec!["rollout", "--model", s(&model), "--embedding", s(&w), "--condition", name];
        if let Some(a) = extra {
            args.extend(["--angle-deg", a]);
        }
        args.extend(["--replay", s(&demo), "--out", s(&out)]);
        ok(&with_quick(&args));
        let meta = fs::read_to_string(out.with_extension("json")).unwrap();
        assert!(meta.contains(&hash));
    }

    ok(&with_quick(&["eval", "--rollouts", s(&p("rollouts")), "--demos", s(&p("user")), "--out", s(&p("eval.csv"))]));
    let csv = fs::read_to_string(p("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(&hash)));
    ok(&with_quick(&["report", "--eval", s(&p("eval.csv")), "--out", s(&p("report.json"))]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], hash.as_str());
    assert_eq!(report["velocity_ordering"]["cases"], 1);
}

#[test]
fn fresh_scenario_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&with_quick(&["gen-data", "--adb", "15,50", "--demos", "1", "--duration-s", "60", "--out", s(&p("train"))]));
    ok(&with_quick(&["train", "--data", s(&p("train")), "--out", s(&p("m.json"))]));
    let demo = p("train").join("p0_d000.jsonl");
    ok(&with_quick(&["fit-user", "--model", s(&p("m.json")), "--trace", s(&demo), "--out", s(&p("w.json"))]));
    ok(&with_quick(&[
        "rollout", "--model", s(&p("m.json")), "--embedding", s(&p("w.json")), "--condition", "aggressive",
        "--delta-adb", "10", "--duration-s", "20", "--seed", "4", "--out", s(&p("r.jsonl")),
    ]));
    assert_eq!(fs::read_to_string(p("r.jsonl")).unwrap().lines().count(), 200);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--data"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(run(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m.json"))]).status.code(), Some(3));
    assert_eq!(run(&["gen-data", "--adb", "70", "--out", s(&dir.path().join("d"))]).status.code(), Some(3));
    assert_eq!(run(&["--set", "learn.no_such_field=1", "report", "--eval", "x", "--out", "y"]).status.code(), Some(3));

    let data = dir.path().join("data");
    ok(&["gen-data", "--adb", "15,50", "--demos", "1", "--duration-s", "60", "--out", s(&data)]);
    let out = run(&["train", "--data", s(&data), "--out", s(&dir.path().join("m.json")), "--set", "learn.learning_rate=1e300"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("m.diverged.json").exists());
}
