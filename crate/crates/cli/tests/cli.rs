use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const QUICK: &str = "[training]\nepisodes = 2\nhorizon = 40\n";
const UNTRAINED: &str = "[training]\nepisodes = 0\nhorizon = 40\n";

fn avlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avlab")).args(args).env_remove("AVLAB_LOG").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, contents).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
        .to_string()
}

fn train(dir: &TempDir, config: &Path, name: &str) -> PathBuf {
    let out = dir.path().join(name);
    let o = avlab(&["train", s(config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("nope.toml");
    let o = avlab(&["baseline", s(&path)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", "[detector]\nwindw = 3\n");
    let o = avlab(&["baseline", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("windw"), "{}", stderr(&o));
}

#[test]
fn bad_log_level_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_avlab")).args(["--help"]).env("AVLAB_LOG", "loud").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_algorithm_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", QUICK);
    let out = dir.path().join("p.bin");
    let o = avlab(&["train", s(&cfg), "--algo", "dqn", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn training_writes_tagged_checkpoint_and_identical_curves() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", QUICK);
    let a = train(&dir, &cfg, "a.bin");
    let b = train(&dir, &cfg, "b.bin");
    let bytes = fs::read(&a).unwrap();
    assert_eq!(&bytes[..8], b"AVLABPOL");
    assert!(bytes.windows(3).any(|w| w == b"ppo"));
    assert_eq!(bytes, fs::read(&b).unwrap());

    let curve_a = fs::read_to_string(dir.path().join("a.curve.csv")).unwrap();
    let curve_b = fs::read_to_string(dir.path().join("b.curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b);
    assert_eq!(curve_a.lines().count(), 3);
    assert!(curve_a.starts_with("episode,reward\n"));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", QUICK);
    let a = train(&dir, &cfg, "a.bin");
    let b = dir.path().join("b.bin");
    assert!(avlab(&["train", s(&cfg), "--seed", "7", "--out", s(&b)]).status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn untrained_policy_evaluates_to_finite_metrics() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let pol = train(&dir, &cfg, "p.bin");
    let trace = dir.path().join("t.csv");
    let report = dir.path().join("r.txt");
    let o = avlab(&[
        "eval", s(&cfg), "--policy", s(&pol), "--episodes", "3", "--trace", s(&trace), "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(fs::read_to_string(&report).unwrap(), text);
    for key in ["recall", "energy", "tracking_error"] {
        let v: f64 = field(&text, key).parse().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{key} = {v}");
    }
    assert_eq!(field(&text, "episodes"), "3");

    let svg = dir.path().join("t.svg");
    let o = avlab(&["plot", "--trace", s(&trace), "--out", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&svg).unwrap().contains("<svg"));
}

#[test]
fn zero_episode_eval_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let pol = train(&dir, &cfg, "p.bin");
    let o = avlab(&["eval", s(&cfg), "--policy", s(&pol), "--episodes", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_refuses_a_checkpoint_from_another_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let other = write(&dir, "d.toml", "[training]\nepisodes = 0\nhorizon = 41\n");
    let pol = train(&dir, &cfg, "p.bin");
    let o = avlab(&["eval", s(&other), "--policy", s(&pol), "--episodes", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p.bin"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let pol = write(&dir, "p.bin", "not a checkpoint");
    let o = avlab(&["eval", s(&cfg), "--policy", s(&pol), "--episodes", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parallel_eval_matches_serial() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let pol = train(&dir, &cfg, "p.bin");
    let run = |jobs: &str| {
        let o = avlab(&["eval", s(&cfg), "--policy", s(&pol), "--episodes", "6", "--stochastic", "--jobs", jobs]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn baseline_reports_hash_and_flag_rate() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", QUICK);
    let report = dir.path().join("b.txt");
    let o = avlab(&["baseline", s(&cfg), "--episodes", "3", "--report", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(field(&text, "config_hash").len(), 16);
    let rate: f64 = field(&text, "flag_rate").parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert_eq!(field(&text, "steps"), "120");
}

#[test]
fn noiseless_baseline_never_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "z.toml",
        "[noise]\nprocess_cov = [0.0, 0.0, 0.0]\nmeas_cov = [0.0, 0.0]\n[estimator]\ninitial_variance = 0.0\n[training]\nhorizon = 60\n",
    );
    let o = avlab(&["baseline", s(&cfg), "--episodes", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "flag_rate"), "0.000000");
}

#[test]
fn config_hash_tracks_file_bytes() {
    let dir = TempDir::new().unwrap();
    let hash = |text: &str| {
        let cfg = write(&dir, "h.toml", text);
        field(&stdout(&avlab(&["baseline", s(&cfg), "--episodes", "1"])), "config_hash")
    };
    let a = hash(QUICK);
    assert_eq!(a, hash(QUICK));
    assert_ne!(a, hash(&format!("{QUICK}\n")));
    assert_ne!(a, hash("[training]\nepisodes = 2\nhorizon = 40\n# note\n"));
}

#[test]
fn malformed_trace_names_the_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let pol = train(&dir, &cfg, "p.bin");
    let trace = dir.path().join("t.csv");
    assert!(avlab(&["eval", s(&cfg), "--policy", s(&pol), "--episodes", "1", "--trace", s(&trace)]).status.success());

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[3] = lines[3].replacen(',', ",x", 1);
    let broken = write(&dir, "broken.csv", &(lines.join("\n") + "\n"));
    let o = avlab(&["plot", "--trace", s(&broken), "--out", s(&dir.path().join("o.svg"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));
}

#[test]
fn inputs_are_not_modified() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", UNTRAINED);
    let pol = train(&dir, &cfg, "p.bin");
    let before = (fs::read(&cfg).unwrap(), fs::read(&pol).unwrap());
    let o = avlab(&["eval", s(&cfg), "--policy", s(&pol), "--episodes", "2", "--scenario", "short"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "scenario"), "short");
    assert_eq!(before, (fs::read(&cfg).unwrap(), fs::read(&pol).unwrap()));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", QUICK);
    let out = dir.path().join("missing").join("p.bin");
    let o = avlab(&["train", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
}
