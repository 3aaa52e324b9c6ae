use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hetforce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetforce")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SWEEP: &str = r#"
[sweep]
backend = "model"
task = "classify"
nu = 0.05
seed = 11
n_iter = 1000
n_transient = 200

[[sweep.axes]]
param = "omega"
min = 1.0
max = 30.0
count = 5
scale = "log"

[[sweep.axes]]
param = "mu"
min = 0.2
max = 0.8
count = 2
"#;

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"], &["sweep", "--help"]] {
        let out = hetforce(args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&hetforce(&[])), 1);
    assert_eq!(code(&hetforce(&["no-such-command"])), 1);
    assert_eq!(code(&hetforce(&["omega0", "--bogus"])), 1);
    assert_eq!(code(&hetforce(&["integrate", "--x0", "1"])), 1);
}

#[test]
fn validation_errors_exit_one() {
    let out = hetforce(&["equilibria", "--mu", "0.5"]);
    assert_eq!(code(&out), 1);
    assert!(out.stdout.is_empty());
    assert_eq!(code(&hetforce(&["lyapunov", "--iterations", "10"])), 1);
    assert_eq!(code(&hetforce(&["classify", "--omega", "-1"])), 1);
    assert_eq!(code(&hetforce(&["omega0", "--eps-v", "0.5"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[system]\nnuu = 0.1\n");
    assert_eq!(code(&hetforce(&["equilibria", "--config", &bad])), 1);
    let missing = dir.path().join("missing.toml").display().to_string();
    assert_eq!(code(&hetforce(&["equilibria", "--config", &missing])), 1);
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("orbit.csv").display().to_string();
    let res = hetforce(&["model-return-map", "--phi", "0", "--r", "1.039", "--iterations", "3", "--out", &out]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("isolating block"));
}

#[test]
fn verification_failure_exits_three() {
    let out = hetforce(&["horseshoe-verify", "--omega", "6.5"]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("passed = false"));
}

#[test]
fn flagship_horseshoe_passes() {
    let dir = tempfile::tempdir().unwrap();
    let strips = dir.path().join("strips.csv");
    let out = hetforce(&["horseshoe-verify", "--depth", "4", "--word", "1221", "--strips-out", &strips.display().to_string()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("passed = true"));
    assert!(text.contains("counts = [2, 4, 8, 16]"));
    assert!(text.contains("shadow[1221]"));
    assert!(fs::read_to_string(strips).unwrap().starts_with("strip,kind,abscissa,lower,upper\n"));
}

#[test]
fn command_line_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "slow.toml", "[model]\nomega = 6.5\n");
    assert_eq!(code(&hetforce(&["horseshoe-verify", "--config", &cfg])), 3);
    assert_eq!(code(&hetforce(&["horseshoe-verify", "--config", &cfg, "--omega", "65"])), 0);
    // Values absent from both fall back to the built-in defaults.
    let out = hetforce(&["omega0", "--config", &cfg]);
    assert!(stdout(&out).contains("omega0 = 64.9020"));
}

#[test]
fn equilibria_table() {
    let out = hetforce(&["equilibria"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "kind,x1,x2,x3,eigenvalues,class");
    assert_eq!(rows.len(), 8);
}

#[test]
fn periodic_saddle_orbit() {
    let out = hetforce(&["periodic", "--q", "1", "--x0", "0", "0", "1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("stability = Saddle"));
    assert!(text.contains("period = 3.14159265358979"));
}

#[test]
fn strobe_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = hetforce(&["strobe", "--nu", "0.1", "--omega", "1", "--seed", "2", "--iterations", "20", "--out", &p.display().to_string()]);
        assert_eq!(code(&out), 0);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next(), Some("n,x1,x2,x3,theta"));
    assert_eq!(text.lines().count(), 22);
}

#[test]
fn sweep_is_independent_of_worker_count_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.toml", SWEEP);
    let run = |name: &str, workers: &str, extra: &[&str]| {
        let out = dir.path().join(name).display().to_string();
        let mut args = vec!["sweep", "--config", &cfg, "--out", &out];
        args.extend_from_slice(extra);
        let res = Command::new(env!("CARGO_BIN_EXE_hetforce")).args(&args).env("HETFORCE_WORKERS", workers).output().unwrap();
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        fs::read_to_string(&out).unwrap()
    };
    let one = run("one.csv", "1", &[]);
    let three = run("three.csv", "3", &[]);
    assert_eq!(one, three);
    assert_eq!(one.lines().count(), 11);

    let manifest = fs::read_to_string(dir.path().join("one.csv.manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"sweep\""));
    assert!(manifest.contains("one.csv"));

    let lines: Vec<&str> = one.split_inclusive('\n').collect();
    fs::write(dir.path().join("part.csv"), lines[..4].concat()).unwrap();
    assert_eq!(run("part.csv", "2", &["--resume"]), one);
}

#[test]
fn invalid_worker_count_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.toml", SWEEP);
    let out = dir.path().join("s.csv").display().to_string();
    let res = Command::new(env!("CARGO_BIN_EXE_hetforce"))
        .args(["sweep", "--config", &cfg, "--out", &out])
        .env("HETFORCE_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&res), 1);
}

#[test]
fn sweep_needs_a_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "");
    let out = dir.path().join("s.csv").display().to_string();
    assert_eq!(code(&hetforce(&["sweep", "--config", &cfg, "--out", &out])), 1);
}

#[test]
fn plot_from_sweep_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.toml", SWEEP);
    let csv = dir.path().join("s.csv").display().to_string();
    assert_eq!(code(&hetforce(&["sweep", "--config", &cfg, "--out", &csv])), 0);
    let svg = dir.path().join("s.svg");
    let args = ["plot", "--csv", &csv, "--x", "omega", "--y", "mu", "--value", "lambda1", "--out", &svg.display().to_string()];
    assert_eq!(code(&hetforce(&args)), 0);
    assert!(fs::read_to_string(&svg).unwrap().trim_end().ends_with("</svg>"));
    let bad = ["plot", "--csv", &csv, "--x", "omega", "--y", "mu", "--value", "nope", "--out", &svg.display().to_string()];
    assert_eq!(code(&hetforce(&bad)), 1);
}

#[test]
fn route_report_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "route.toml", "[route]\ncount = 3\nn_iter = 1000\nn_transient = 300\ngrid = 1024\n");
    let out_dir = dir.path().join("route");
    let res = hetforce(&["route-report", "--config", &cfg, "--out-dir", &out_dir.display().to_string()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let summary = fs::read_to_string(out_dir.join("route_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    for k in 0..3 {
        assert!(out_dir.join(format!("route_panel_{k:03}.svg")).exists());
    }
    assert!(out_dir.join("manifest.toml").exists());
}
