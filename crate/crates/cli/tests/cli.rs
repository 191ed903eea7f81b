//! Runs the `fedguard` binary on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
rng_seed = 3
rounds = 2
byz_fraction = 0.5
sweep_byz_fractions = [0.0, 0.5]

[dataset]
kind = "synthetic"
classes = 3
train_per_class = 10
test_per_class = 4
shape = { channels = 1, height = 4, width = 4 }

[model]
kind = "mlp"
hidden = [6]

[partition]
mode = "dirichlet"
alpha = 0.5
clients = 4

[training]
epochs = 1
batch_size = 8
learning_rate = 0.1

[public]
seed_fraction = 0.1
replication = 3

[defense]
shadows = 14
shadow_training = { epochs = 2, batch_size = 8, learning_rate = 0.1 }
"#;

fn fedguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedguard")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn offline_then_run_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let o = fedguard(&["offline", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("defense.ckpt");
    assert!(ckpt.exists());

    let o = fedguard(&["run", "--config", &cfg, "--out", out_s, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let with_ckpt = fs::read_to_string(out.join("fedguard_byz0.5_alpha0.5.csv")).unwrap();
    assert_eq!(with_ckpt.lines().count(), 1 + 2 + 1);

    let fresh = dir.path().join("fresh");
    let o = fedguard(&["run", "--config", &cfg, "--out", fresh.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(fresh.join("fedguard_byz0.5_alpha0.5.csv")).unwrap(), with_ckpt);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = fedguard(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--aggregator",
        "median",
        "--byz-fraction",
        "0.25",
        "--alpha",
        "2",
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("median_byz0.25_alpha2.csv")).unwrap();
    let summary = csv.lines().last().unwrap();
    assert!(summary.starts_with("-1,median,0.25,2,"), "{summary}");
}

#[test]
fn sweep_writes_every_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = fedguard(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--aggregator", "bulyan"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["0", "0.5"] {
        assert!(out.join(format!("bulyan_byz{f}_alpha0.5.csv")).exists());
    }
}

#[test]
fn unknown_config_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}\n[attacks]\nstrength = 3\n"));
    let o = fedguard(&["offline", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("strength"), "{}", stderr(&o));
}

#[test]
fn invalid_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let d = dir.path().to_str().unwrap();
    assert!(!fedguard(&["run", "--config", &cfg, "--out", d, "--aggregator", "krum"]).status.success());
    let o = fedguard(&["run", "--config", &cfg, "--out", d, "--byz-fraction", "1.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("byz_fraction"), "{}", stderr(&o));
}

#[test]
fn checkpoint_for_another_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    assert!(fedguard(&["offline", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let other = dir.path().join("other.toml");
    fs::write(&other, TINY.replace("hidden = [6]", "hidden = [7]")).unwrap();
    let o = fedguard(&[
        "run",
        "--config",
        other.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--checkpoint",
        out.join("defense.ckpt").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}
