use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = ["--set", "system.n_tps=2", "--set", "system.n_channels=2", "--set", "system.n_power_levels=3"];
const QUICK: [&str; 8] = ["--set", "train.epochs_ct=1", "--set", "train.epochs_ft=1", "--set", "train.n_units=2", "--set", "train.hidden_width=8"];

fn d2dra(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2dra")).current_dir(dir).args(args).output().expect("binary runs")
}

fn small(dir: &Path, args: &[&str]) -> Output {
    let all: Vec<&str> = SMALL.iter().chain(QUICK.iter()).chain(args).copied().collect();
    d2dra(dir, &all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small(dir.path(), &["gen-data", "--count", "120", "--out", "d.bin"])), 0);
    assert_eq!(code(&small(dir.path(), &["label", "--data", "d.bin", "--out", "l.bin"])), 0);
    dir
}

#[test]
fn help_lists_defaults_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = d2dra(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("[system]") && text.contains("[train]") && text.contains("[eval]"));
    assert!(text.contains("Exit codes"));
}

#[test]
fn gen_data_writes_dataset_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let o = small(dir.path(), &["gen-data", "--count", "50", "--out", "d.bin"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("samples 50"));
    assert!(dir.path().join("d.bin").exists() && dir.path().join("d.stats").exists());
    let again = small(dir.path(), &["gen-data", "--count", "50", "--out", "e.bin", "--stats-out", "custom.stats"]);
    assert_eq!(stdout(&o).lines().nth(1), stdout(&again).lines().nth(1), "same seed, same checksum");
    assert_eq!(fs::read(dir.path().join("d.bin")).unwrap(), fs::read(dir.path().join("e.bin")).unwrap());
    assert!(dir.path().join("custom.stats").exists());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[system]\nn_tps = 3\nn_channels = 1\nn_power_levels = 2\nmaster_seed = 9\n").unwrap();
    let from_file = d2dra(dir.path(), &["--config", "run.toml", "gen-data", "--count", "10", "--out", "a.bin"]);
    assert_eq!(code(&from_file), 0);
    let overridden = d2dra(dir.path(), &["--config", "run.toml", "--set", "system.master_seed=10", "gen-data", "--count", "10", "--out", "b.bin"]);
    assert_eq!(code(&overridden), 0);
    assert_ne!(fs::read(dir.path().join("a.bin")).unwrap(), fs::read(dir.path().join("b.bin")).unwrap());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&d2dra(p, &["gen-data", "--count", "0", "--out", "x.bin"])), 2);
    assert_eq!(code(&d2dra(p, &["--set", "system.n_tpz=2", "gen-data", "--count", "5", "--out", "x.bin"])), 2);
    assert_eq!(code(&d2dra(p, &["--set", "n_tps=2", "gen-data", "--count", "5", "--out", "x.bin"])), 2);
    assert_eq!(code(&d2dra(p, &["--set", "train.zeta_ct=1.5", "gen-data", "--count", "5", "--out", "x.bin"])), 2);
    assert_eq!(code(&d2dra(p, &["--config", "missing.toml", "gen-data", "--count", "5", "--out", "x.bin"])), 2);
    fs::write(p.join("bad.toml"), "[system\n").unwrap();
    assert_eq!(code(&d2dra(p, &["--config", "bad.toml", "gen-data", "--count", "5", "--out", "x.bin"])), 2);
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let dir = prepared();
    let o = d2dra(dir.path(), &["--set", "system.n_tps=3", "label", "--data", "d.bin", "--out", "l3.bin"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = prepared();
    let p = dir.path();
    assert_eq!(code(&small(p, &["label", "--data", "nope.bin", "--out", "l.bin"])), 3);
    // CT is on by default and needs labels
    assert_eq!(code(&small(p, &["train", "--data", "d.bin", "--out-dir", "run"])), 3);
    assert_eq!(code(&small(p, &["eval", "--data", "d.bin", "--out-dir", "ev", "--schemes", "centralized"])), 3);
    assert_eq!(code(&small(p, &["eval", "--data", "d.bin", "--out-dir", "ev", "--schemes", "naive", "--centralized", "nowhere"])), 3);
}

#[test]
fn budget_exceeded_exits_4() {
    let dir = prepared();
    let o = small(dir.path(), &["--set", "eval.oracle_budget=5", "label", "--data", "d.bin", "--out", "l2.bin"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn train_then_eval() {
    let dir = prepared();
    let p = dir.path();
    let t = small(p, &["train", "--data", "d.bin", "--labels", "l.bin", "--out-dir", "run"]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    for f in ["config.toml", "loss.csv", "model.params", "model.manifest", "stats.bin"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(p.join("run/loss.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,phase,"));
    // the snapshot reproduces the run configuration
    let snapshot = fs::read_to_string(p.join("run/config.toml")).unwrap();
    assert!(snapshot.contains("hidden_width = 8"));

    let e = small(p, &["eval", "--data", "d.bin", "--out-dir", "ev", "--centralized", "run", "--schemes", "oracle,centralized,naive,random"]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let summary = fs::read_to_string(p.join("ev/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    for scheme in ["oracle", "centralized", "naive", "random"] {
        for kind in ["se_cdf", "ee_cdf", "cue_cdf", "binerr_cdf", "timing"] {
            assert!(p.join(format!("ev/{scheme}_sum-se_thr0_{kind}.csv")).exists(), "{scheme} {kind}");
        }
    }
    assert!(stdout(&e).contains("centralized"));
}

#[test]
fn ft_only_training_needs_no_labels() {
    let dir = prepared();
    let o = small(dir.path(), &["--set", "train.epochs_ct=0", "train", "--data", "d.bin", "--out-dir", "run", "--mode", "distributed", "--objective", "sum-ee"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(dir.path().join("run/model.manifest")).unwrap();
    assert!(manifest.contains("kind = distributed") && manifest.contains("objective = sum-ee"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = d2dra(dir.path(), &["--set", "train.n_units=2", "--set", "train.hidden_width=8", "bench", "--n-list", "1,2", "--out", "b.csv", "--samples", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n_tps,candidates,centralized_s,distributed_s,oracle_s");
    assert_eq!(csv.lines().count(), 3);
}
