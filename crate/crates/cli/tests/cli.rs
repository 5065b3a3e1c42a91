use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn das(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das"))
        .args(args)
        .env("DAS_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root).map(|d| d.map(|e| e.unwrap().path()).collect()).unwrap_or_default();
    v.sort();
    v
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn artifact_dir(o: &Output) -> PathBuf {
    let line = stdout(o).lines().find_map(|l| l.strip_prefix("artifacts: ").map(str::to_string)).expect("artifact line");
    PathBuf::from(line)
}

const REQUIRED: [&str; 5] = ["config.toml", "samples.csv", "metrics.json", "trace.csv", "scatter.svg"];

fn assert_artifacts(dir: &Path) {
    for f in REQUIRED {
        let body = fs::read_to_string(dir.join(f)).unwrap_or_else(|_| panic!("{f} missing in {}", dir.display()));
        assert!(!body.is_empty(), "{f} is empty");
    }
}

#[test]
fn list_suites_names_at_least_nine_unique_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let o = das(tmp.path(), &["list-suites"]);
    assert!(o.status.success());
    let mut names: Vec<String> = stdout(&o).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    for expected in ["fig1-top", "fig1-bottom", "swiss-roll", "ablate-tempering", "convergence", "variance", "scaling", "online", "train-score"] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing");
    }
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}

#[test]
fn dry_run_echoes_config_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let o = das(&out, &["run", "fig1-bottom", "--dry-run", "--seed", "9", "--particles", "8", "--alpha", "0.5", "--gamma", "0.02"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo: toml::Table = toml::from_str(&stdout(&o)).unwrap();
    assert_eq!(echo["suite"].as_str(), Some("fig1-bottom"));
    assert_eq!(echo["seed"].as_integer(), Some(9));
    assert_eq!(echo["smc"]["particles"].as_integer(), Some(8));
    assert_eq!(echo["smc"]["alpha"].as_float(), Some(0.5));
    assert_eq!(echo["smc"]["gamma"].as_float(), Some(0.02));
    assert_eq!(echo["experiment"]["reward"].as_str(), Some("bottom"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let bad = write_config(tmp.path(), "bad.toml", "[smc\nparticles = 4\n");
    let o = das(&out, &["run", "fig1-top", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let json = write_config(tmp.path(), "bad.json", "{\"smc\": ");
    assert_eq!(das(&out, &["run", "fig1-top", "--config", &json]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "seeds = 3\n[smc]\nparticle = 4\n[plot]\nwidth = 2\n");
    let o = das(tmp.path(), &["run", "fig1-top", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["seeds", "smc.particle", "plot"] {
        assert!(err.contains(key), "{key} not reported: {err}");
    }
}

#[test]
fn bad_values_and_unknown_suites_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(das(tmp.path(), &["run", "no-such-suite"]).status.code(), Some(2));
    assert_eq!(das(tmp.path(), &["run", "fig1-top", "--particles", "0"]).status.code(), Some(2));
    assert_eq!(das(tmp.path(), &["run", "fig1-top", "--alpha", "-1"]).status.code(), Some(2));
    assert_eq!(das(tmp.path(), &["run"]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "c.toml", "smc.tempering = \"lukewarm\"\n");
    assert_eq!(das(tmp.path(), &["run", "variance", "--config", &cfg]).status.code(), Some(2));
    assert!(run_dirs(tmp.path()).iter().all(|p| p.is_file()));
}

#[test]
fn runtime_failure_exits_3_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[experiment]\nscore_net = \"/nonexistent/net.json\"\n");
    let o = das(&tmp.path().join("runs"), &["run", "swiss-roll", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("swiss-roll") && err.contains("net.json"), "{err}");
}

#[test]
fn fig1_top_writes_every_panel_and_reruns_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), "c.toml", "experiment.pooled = 64\nexperiment.repeats = 2\n");
    let first = das(&out, &["run", "fig1-top", "--config", &cfg, "--seed", "3"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let dir = artifact_dir(&first);
    assert!(dir.starts_with(&out));
    assert_artifacts(&dir);

    let samples = fs::read_to_string(dir.join("samples.csv")).unwrap();
    assert!(samples.starts_with("method,sweep,particle,x0,x1\n"));
    for method in ["pretrained", "target-oracle", "guidance", "smc-no-temper", "das"] {
        assert_eq!(samples.lines().filter(|l| l.starts_with(&format!("{method},"))).count(), 64, "{method}");
    }
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["methods"].as_array().unwrap().len(), 5);
    assert_eq!(metrics["emd_by_seed"].as_array().unwrap().len(), 2);
    assert!(metrics["methods"][4]["emd"].as_f64().unwrap() > 0.0);
    assert!(fs::read_to_string(dir.join("trace.csv")).unwrap().starts_with("run,sweep,step,t,lambda,ess"));
    assert!(fs::read_to_string(dir.join("scatter.svg")).unwrap().contains("smc-no-temper"));

    // the echoed config alone reproduces the run, whatever the worker count
    let echoed = dir.join("config.toml");
    let again = das(&out, &["run", "--config", echoed.to_str().unwrap(), "--workers", "2"]);
    assert!(again.status.success(), "{}", stderr(&again));
    let dir2 = artifact_dir(&again);
    assert_ne!(dir, dir2);
    assert_eq!(samples, fs::read_to_string(dir2.join("samples.csv")).unwrap());
    assert_eq!(fs::read_to_string(dir.join("trace.csv")).unwrap(), fs::read_to_string(dir2.join("trace.csv")).unwrap());
}

#[test]
fn out_dir_env_wins_over_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("env");
    let flag_dir = tmp.path().join("flag");
    let cfg = write_config(tmp.path(), "c.json", r#"{"online": {"rounds": 2, "budget": 64, "holdout": 32}}"#);
    let o = das(&env_dir, &["online", "--config", &cfg, "--out", flag_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!flag_dir.exists());
    let dirs = run_dirs(&env_dir);
    assert_eq!(dirs.len(), 1);
    assert_artifacts(&dirs[0]);
    assert!(dirs[0].join("surrogate.json").exists());
    let history = fs::read_to_string(dirs[0].join("trace.csv")).unwrap();
    assert!(history.starts_with("round,queries_used,mean_true_reward,surrogate_rmse\n"));
    assert_eq!(history.lines().count(), 3);
}

/// Every suite on a reduced configuration.
#[test]
fn every_suite_runs_small() {
    let tmp = tempfile::tempdir().unwrap();
    let small = [
        ("fig1-bottom", "experiment.pooled = 32\n"),
        ("swiss-roll", "experiment.pooled = 32\nexperiment.reference_pool = 2000\ntrain.samples = 256\ntrain.epochs = 2\ntrain.hidden = 16\n"),
        ("ablate-tempering", "experiment.pooled = 32\nexperiment.repeats = 2\nexperiment.particle_grid = [2, 4]\n"),
        ("convergence", "experiment.repeats = 4\nexperiment.particle_grid = [4, 8]\n"),
        ("variance", "experiment.repeats = 4\nexperiment.pooled = 32\n"),
        ("scaling", "experiment.pooled = 32\nexperiment.particle_grid = [1, 2]\n"),
        ("train-score", "experiment.pooled = 32\ntrain.samples = 256\ntrain.epochs = 2\ntrain.hidden = 16\ntrain.data = \"swiss-roll\"\n"),
    ];
    for (suite, text) in small {
        let cfg = write_config(tmp.path(), &format!("{suite}.toml"), text);
        let out = tmp.path().join(suite);
        let o = das(&out, &["run", suite, "--config", &cfg]);
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
        let dirs = run_dirs(&out);
        assert_eq!(dirs.len(), 1, "{suite}");
        assert_artifacts(&dirs[0]);
        let metrics: Value = serde_json::from_str(&fs::read_to_string(dirs[0].join("metrics.json")).unwrap()).unwrap();
        assert_eq!(metrics["suite"].as_str(), Some(suite));
    }
    // a trained net can be handed back to the 3D suite
    let net = run_dirs(&tmp.path().join("train-score"))[0].join("net.json");
    let cfg = write_config(
        tmp.path(),
        "reuse.toml",
        &format!("experiment.pooled = 32\nexperiment.reference_pool = 2000\nexperiment.score_net = {:?}\n", net.to_str().unwrap()),
    );
    let o = das(&tmp.path().join("reuse"), &["run", "swiss-roll", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!run_dirs(&tmp.path().join("reuse"))[0].join("net.json").exists());
}

/// Timing harness: each suite with its defaults must finish in under ten
/// minutes. Slow, so opt-in with `--ignored`.
#[test]
#[ignore]
fn every_suite_finishes_with_defaults_in_ten_minutes() {
    let tmp = tempfile::tempdir().unwrap();
    let list = das(tmp.path(), &["list-suites"]);
    for line in stdout(&list).lines() {
        let suite = line.split_whitespace().next().unwrap();
        let start = Instant::now();
        let o = das(&tmp.path().join(suite), &["run", suite]);
        let took = start.elapsed();
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
        println!("{suite}: {:.1}s", took.as_secs_f64());
        assert!(took < Duration::from_secs(600), "{suite} took {took:?}");
    }
}
