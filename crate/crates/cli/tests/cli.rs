use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopmanip"))
        .args(args)
        .output()
        .expect("spawn coopmanip")
}

fn run_on(cmd: &str, scenario: &Path, out: &Path) -> Output {
    run(&[
        cmd,
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a modified copy of a bundled scenario.
fn variant(dir: &Path, base: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(scenario(base)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("variant.json");
    fs::write(&path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    path
}

const PLAN_FILES: [&str; 5] = [
    "waypoints.json",
    "trajectory.json",
    "trajectory.csv",
    "footprint.json",
    "footprint.csv",
];

#[test]
fn pipeline_on_open_floor_passes_and_writes_everything() {
    let out = tempfile::tempdir().unwrap();
    let o = run_on("pipeline", &scenario("straightline.json"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in PLAN_FILES.iter().chain(&["simlog.json", "simlog.csv", "metrics.json"]) {
        let p = out.path().join(f);
        assert!(p.is_file(), "missing {f}");
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("scenario_hash"), "{f} lacks the scenario hash");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("verdict          PASS"), "{stdout}");

    // evaluation is a pure function of the log
    let first = fs::read(out.path().join("metrics.json")).unwrap();
    let o = run_on("evaluate", &scenario("straightline.json"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(first, fs::read(out.path().join("metrics.json")).unwrap());

    // a log cut short no longer covers the formula horizon
    let path = out.path().join("simlog.json");
    let mut log: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let rows = log["log"]["rows"].as_array_mut().expect("rows array");
    let keep = rows.len() / 3;
    rows.truncate(keep);
    fs::write(&path, serde_json::to_vec(&log).unwrap()).unwrap();
    let o = run_on("evaluate", &scenario("straightline.json"), out.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn plan_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&[
            "plan",
            "--scenario",
            scenario("straightline.json").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--seed",
            "11",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in PLAN_FILES {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let head = fs::read_to_string(a.path().join("footprint.csv")).unwrap();
    assert!(head.starts_with("# scenario=straightline"), "{head}");
    assert!(head.lines().next().unwrap().ends_with("seed=11"));
}

#[test]
fn simulate_without_plan_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let o = run_on("simulate", &scenario("straightline.json"), out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[simulate]"), "{}", stderr(&o));
}

#[test]
fn artifacts_from_another_seed_are_rejected() {
    let out = tempfile::tempdir().unwrap();
    let o = run_on("plan", &scenario("straightline.json"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&[
        "simulate",
        "--scenario",
        scenario("straightline.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn nonpositive_tolerances_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(dir.path(), "straightline.json", |v| {
        v["footprint"]["centroid_tol"] = 0.0.into()
    });
    let o = run_on("plan", &path, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("footprint.centroid_tol"), "{}", stderr(&o));

    let path = variant(dir.path(), "straightline.json", |v| {
        v["task"]["formula"] = "G[9,10](ball(2,0,0.6; -0.15))".into()
    });
    let o = run_on("plan", &path, dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("task.formula") && err.contains("radius"), "{err}");
}

#[test]
fn formula_syntax_errors_report_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(dir.path(), "straightline.json", |v| {
        v["task"]["formula"] = "G[9,10](ball(2,0,0.6; 0.15)) & F[1,](avoid(obs; 0.5))".into()
    });
    let o = run_on("plan", &path, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("position 35"), "{}", stderr(&o));
}

#[test]
fn schema_violations_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(dir.path(), "straightline.json", |v| {
        v["control"]["arm_kp"] = "stiff".into()
    });
    let o = run_on("plan", &path, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("control.arm_kp"), "{}", stderr(&o));

    let path = variant(dir.path(), "straightline.json", |v| v["version"] = 7.into());
    let o = run_on("plan", &path, dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_rates_flag_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "plan",
        "--scenario",
        scenario("straightline.json").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--rates",
        "1000",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
