use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BALL: &str = r#"
[domain]
kind = "interval"
lo = 0.0
hi = 10.0

[force]
kind = "gravity"
g = [-1.0]

[initial]
positions = [[1.0]]
velocities = [[0.0]]

[run]
t_end = 3.0
solver = "both"
k = 1e6
ks = [1e2, 1e3, 1e4, 1e5, 1e6]

[analysis]
energy_windows = [[0.0, 3.0], [1.0, 2.0]]
measure = true
weak_form = true
speed_tol = 1e-8
compare = "sup_pos"
compare_tol = 1e-2
penetration_slope = [-0.55, -0.45]
require_monotone = true
"#;

const DISK: &str = r#"
[domain]
kind = "ball"
center = [0.0, 0.0]
radius = 1.0

[force]
kind = "zero"

[initial]
positions = [[0.2, 0.1], [POS]]
velocities = [[1.0, 0.3], [0.0, -1.0]]

[run]
t_end = 2.0

[validate]
samples = 2000
"#;

const ELLIPSE: &str = r#"
[domain]
kind = "ellipse"
center = [0.0, 0.0]
semi_axes = [2.0, 1.0]
GRADIENT

[force]
kind = "zero"

[initial]
positions = [[0.0, 0.0]]
velocities = [[1.0, 0.0]]

[run]
t_end = 1.0

[validate]
samples = 300
seed = 7
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reflectsim"));
    cmd.env_remove("REFLECTSIM_THREADS");
    cmd
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--quiet").arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn summary(out: &Path) -> Value {
    let text = std::fs::read_to_string(out.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn check<'a>(s: &'a Value, name: &str) -> &'a Value {
    s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check {name} in {s}"))
}

#[test]
fn simulate_bouncing_ball_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ball.toml", BALL);
    let out = dir.path().join("out");
    let res = run(&["simulate"], Some(&cfg), &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["trajectory.csv", "events.json", "energy.json", "weak_form.json", "penalty.json", "comparison.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let s = summary(&out);
    assert_eq!(s["status"], "pass");
    assert_eq!(s["details"]["events"], 1);
    // one bounce at sqrt(2) with speed sqrt(2)
    assert!((s["details"]["measure_mass"].as_f64().unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-9);
    assert!(check(&s, "energy_residual")["value"].as_f64().unwrap() < 1e-8);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,particle,x0,v0,mode\n"));
}

#[test]
fn penalty_sweep_reports_half_order_penetration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ball.toml", BALL);
    let out = dir.path().join("sweep");
    let res = run(&["penalty-sweep"], Some(&cfg), &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let s = summary(&out);
    let slope = s["details"]["penetration_slope"].as_f64().unwrap();
    assert!((-0.55..=-0.45).contains(&slope), "slope {slope}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("k,valid,max_penetration"));
}

#[test]
fn counterexample_certificate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ce");
    let res = run(&["counterexample", "--L", "2", "--n-max", "10"], None, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let cert: Value = serde_json::from_str(&std::fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["pass"], true);
    assert_eq!(cert["n_max"], 10);
    let csv = std::fs::read_to_string(out.join("counterexample.csv")).unwrap();
    assert!(csv.starts_with("t,F,x,v,n_interval\n"));
}

#[test]
fn validate_accepts_a_valid_ball() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "disk.toml", &DISK.replace("POS", "-0.5, 0.5"));
    let out = dir.path().join("v");
    let res = run(&["validate"], Some(&cfg), &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let s = summary(&out);
    assert_eq!(check(&s, "geometry.weingarten")["pass"], true);
    assert!(out.join("validation.json").exists());
}

#[test]
fn validate_lists_particles_outside_the_domain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "disk.toml", &DISK.replace("POS", "1.5, 0.0"));
    let out = dir.path().join("v");
    let res = run(&["validate"], Some(&cfg), &out);
    assert_eq!(res.status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["status"], "fail");
    assert_eq!(s["details"]["offending_particles"], serde_json::json!([1]));
    assert_eq!(check(&s, "initial_admissible")["pass"], false);

    // simulate refuses the same config at load time
    let res = run(&["simulate"], Some(&cfg), &dir.path().join("s"));
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(summary(&dir.path().join("s"))["error"]["kind"], "usage");
}

#[test]
fn validate_flags_inconsistent_implicit_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.toml", &ELLIPSE.replace("GRADIENT", ""));
    let bad = write_config(
        dir.path(),
        "bad.toml",
        &ELLIPSE.replace("GRADIENT", "gradient_semi_axes = [2.0, 1.01]"),
    );
    let res = run(&["validate"], Some(&good), &dir.path().join("good"));
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let res = run(&["validate"], Some(&bad), &dir.path().join("bad"));
    assert_eq!(res.status.code(), Some(1));
    let s = summary(&dir.path().join("bad"));
    let w = check(&s, "geometry.weingarten");
    assert_eq!(w["pass"], false);
    assert!(w["value"].as_f64().unwrap() > 1e-3);
    // the centre of the ellipse is admissible even though d_s is undefined there
    assert_eq!(check(&s, "initial_admissible")["pass"], true);
}

#[test]
fn schema_errors_exit_two_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown_key.toml", format!("{BALL}\n[output]\nformat = \"x\"\n")),
        ("descending.toml", BALL.replace("ks = [1e2, 1e3, 1e4, 1e5, 1e6]", "ks = [1e3, 1e2]")),
        ("bad_tol.toml", BALL.replace("speed_tol = 1e-8", "speed_tol = -1.0")),
        ("bad_kind.toml", BALL.replace("kind = \"interval\"", "kind = \"torus\"")),
        ("wrong_dim.toml", BALL.replace("positions = [[1.0]]", "positions = [[1.0, 2.0]]")),
    ];
    for (name, text) in cases {
        let cfg = write_config(dir.path(), name, &text);
        let out = dir.path().join(name.trim_end_matches(".toml"));
        let res = run(&["simulate"], Some(&cfg), &out);
        assert_eq!(res.status.code(), Some(2), "{name}");
        let s = summary(&out);
        assert_eq!(s["status"], "error", "{name}");
        assert_eq!(s["error"]["kind"], "usage", "{name}");
    }
    let out = dir.path().join("missing");
    let res = run(&["simulate"], Some(&dir.path().join("nope.toml")), &out);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(summary(&out)["exit_code"], 2);
}

#[test]
fn failed_checks_and_solver_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let strict = BALL.replace("measure = true", "measure = true\nenergy_tol = 1e-30");
    let cfg = write_config(dir.path(), "strict.toml", &strict);
    let out = dir.path().join("strict");
    assert_eq!(run(&["simulate"], Some(&cfg), &out).status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["status"], "fail");
    assert_eq!(check(&s, "energy_residual")["pass"], false);

    // k so soft that the penalty run leaves the tube
    let soft = BALL.replace("k = 1e6", "k = 1e-2").replace("t_end = 3.0", "t_end = 8.0");
    let cfg = write_config(dir.path(), "soft.toml", &soft);
    let out = dir.path().join("soft");
    assert_eq!(run(&["simulate"], Some(&cfg), &out).status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["status"], "error");
    assert_eq!(s["error"]["kind"], "invalid_run");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ball.toml", BALL);
    for cmd in ["simulate", "penalty-sweep"] {
        let (a, b) = (dir.path().join(format!("{cmd}-a")), dir.path().join(format!("{cmd}-b")));
        assert_eq!(run(&[cmd], Some(&cfg), &a).status.code(), Some(0));
        assert_eq!(run(&[cmd], Some(&cfg), &b).status.code(), Some(0));
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 3);
        for name in names {
            let fa = std::fs::read(a.join(&name)).unwrap();
            let fb = std::fs::read(b.join(&name)).unwrap();
            assert!(fa == fb, "{cmd}: {name:?} differs");
        }
    }
}

#[test]
fn compare_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ball.toml", BALL);
    let sim = dir.path().join("sim");
    assert_eq!(run(&["simulate"], Some(&cfg), &sim).status.code(), Some(0));
    let a = sim.join("trajectory.csv");
    let b = sim.join("penalty_trajectory.csv");
    let out = dir.path().join("cmp");
    let args = ["compare", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()];

    let mut with_tol = args.to_vec();
    with_tol.extend(["--tol", "1e-2"]);
    assert_eq!(run(&with_tol, None, &out).status.code(), Some(0));
    let gap = summary(&out)["details"]["gap"].as_f64().unwrap();
    assert!(gap > 1e-4 && gap < 1e-2, "gap {gap}");

    let mut tight = args.to_vec();
    tight.extend(["--tol", "1e-6"]);
    assert_eq!(run(&tight, None, &out).status.code(), Some(1));

    let mut bad_norm = args.to_vec();
    bad_norm.extend(["--norm", "l7"]);
    assert_eq!(run(&bad_norm, None, &out).status.code(), Some(2));

    let self_args = ["compare", "--a", a.to_str().unwrap(), "--b", a.to_str().unwrap(), "--norm", "l1_vel"];
    assert_eq!(run(&self_args, None, &out).status.code(), Some(0));
    assert_eq!(summary(&out)["details"]["gap"].as_f64().unwrap(), 0.0);
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ball.toml", BALL);
    let out = dir.path().join("t");
    let status = bin()
        .args(["penalty-sweep", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("REFLECTSIM_THREADS", "2")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let status = bin()
        .args(["counterexample", "--quiet", "--out"])
        .arg(dir.path().join("z"))
        .env("REFLECTSIM_THREADS", "0")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u");
    assert_eq!(run(&["simulate"], None, &out).status.code(), Some(2));
    assert_eq!(summary(&out)["error"]["kind"], "usage");
    assert_eq!(bin().arg("no-such-command").status().unwrap().code(), Some(2));
    assert_eq!(run(&["counterexample", "--L", "0"], None, &out).status.code(), Some(2));
}

#[test]
fn summary_goes_to_stdout_unless_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ce");
    let res = bin()
        .args(["counterexample", "--n-max", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.starts_with("counterexample: pass (exit 0)"), "{text}");
    assert!(text.contains("ode_residual"));
    let quiet = run(&["counterexample", "--n-max", "3"], None, &out);
    assert!(quiet.stdout.is_empty());
}
