use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "seed = 4\n[workload]\nduration = 0.2\n[bootstrap]\ntraining_size = 1000\nheldout_size = 500\n";

fn hybridchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridchain"))
        .args(args)
        .env_remove("HYBRIDCHAIN_SEED")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = dir.path().join("out");
    let res = hybridchain(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["events.jsonl", "workload.jsonl", "metrics.csv", "summary.json", "weights.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("seed,4,1,"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(hybridchain(&["run", "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap()]).status.success());
    }
    for f in ["events.jsonl", "metrics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn f_above_the_bound_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[protocol]\nm = 10\nf = 5\n");
    let res = hybridchain(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("floor(M/2) - 1"));
}

#[test]
fn unknown_keys_and_presets_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[protocol]\nlambda = 2\n");
    assert_eq!(hybridchain(&["run", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(hybridchain(&["run", "--preset", "huge"]).status.code(), Some(1));
    assert_eq!(hybridchain(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn trained_weights_reload_into_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let res = hybridchain(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    let acc: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(acc >= 0.9, "heldout accuracy {acc}");

    let weights = dir.path().join("weights.json");
    let reuse = write(
        dir.path(),
        "reuse.toml",
        &format!("{SMALL}weights = {:?}\n", weights.to_str().unwrap()),
    );
    let out = dir.path().join("reuse");
    let res = hybridchain(&["run", "--config", &reuse, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read(&weights).unwrap(), fs::read(out.join("weights.json")).unwrap());
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert!(!events.lines().next().unwrap().contains("heldout_accuracy"));
}

#[test]
fn train_rejects_an_empty_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[bootstrap]\ntraining_size = 0\n");
    assert_eq!(hybridchain(&["train", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn report_reproduces_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let run = dir.path().join("run");
    assert!(hybridchain(&["run", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());
    let rep = dir.path().join("rep");
    let events = run.join("events.jsonl");
    let res = hybridchain(&["report", "--events", events.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(res.status.success());
    assert_eq!(fs::read(run.join("summary.json")).unwrap(), fs::read(rep.join("summary.json")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "sweep.toml",
        "axis = \"gamma\"\npoints = [300.0, 600.0]\nrepeats = 2\n[base]\nseed = 2\n[base.workload]\nduration = 0.1\n[base.bootstrap]\ntraining_size = 500\nheldout_size = 100\n",
    );
    let out = dir.path().join("out");
    let res = hybridchain(&["sweep", "--config", &spec, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("gamma,300,2,"));
    assert!(rows[2].starts_with("gamma,600,2,"));
}

#[test]
fn sweep_with_a_bad_axis_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "sweep.toml", "axis = \"latency\"\npoints = [1.0]\nrepeats = 1\n");
    assert_eq!(hybridchain(&["sweep", "--config", &spec]).status.code(), Some(1));
}
