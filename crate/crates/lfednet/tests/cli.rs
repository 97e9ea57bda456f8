use std::path::Path;
use std::process::{Command, Output};

use lfednet::fsio::sha256_hex;
use lfednet::manifest::RunManifest;

fn lfednet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfednet"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Reference system, toy training config and two years of data in `dir`.
fn workspace(dir: &Path) {
    let system = serde_json::to_vec(&lfednet_core::grid::reference_3bus_document()).unwrap();
    std::fs::write(dir.join("system.json"), system).unwrap();
    std::fs::write(
        dir.join("train.json"),
        r#"{"n_train": 1, "pretrain_epochs": 3, "hidden_width": 8, "hidden_layers": 1}"#,
    )
    .unwrap();
    let out = lfednet(dir, &["gen-data", "--seed", "3", "--years", "2", "--out", "data.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = lfednet(dir.path(), &["gen-data", "--bogus"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(code(&lfednet(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&lfednet(dir.path(), &[])), 1);
    assert_eq!(code(&lfednet(dir.path(), &["dispatch", "--date", "not-a-date"])), 1);
    let out = lfednet(dir.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("compare"));
    assert_eq!(code(&lfednet(dir.path(), &["--version"])), 0);
}

#[test]
fn gen_data_is_deterministic_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.csv", "b.csv"] {
        assert_eq!(code(&lfednet(d, &["gen-data", "--seed", "7", "--years", "1", "--out", out])), 0);
    }
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    let m: RunManifest = serde_json::from_slice(&std::fs::read(d.join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "gen-data");
    assert_eq!(m.seed, Some(7));
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.outputs[0].sha256, sha256_hex(&a));
    assert_eq!(code(&lfednet(d, &["gen-data", "--seed", "8", "--years", "1", "--out", "c.csv"])), 0);
    assert_ne!(a, std::fs::read(d.join("c.csv")).unwrap());
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    workspace(d);
    let pretrain = |data: &str| {
        lfednet(
            d,
            &["pretrain", "--data", data, "--system", "system.json", "--train-config", "train.json", "--out-model", "m.json"],
        )
    };
    let out = pretrain("missing.csv");
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.csv"));

    let mut text = std::fs::read_to_string(d.join("data.csv")).unwrap();
    let third = text.match_indices('\n').nth(2).unwrap().0;
    text.replace_range(third + 1..third + 2, "x");
    std::fs::write(d.join("broken.csv"), text).unwrap();
    let out = pretrain("broken.csv");
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("broken.csv:4:"), "{}", stderr(&out));
    assert!(!d.join("m.json").exists());

    std::fs::write(d.join("bad_system.json"), r#"{"buses": ["A"], "generators": [], "load_factors": 1.0}"#).unwrap();
    let out = lfednet(
        d,
        &["pretrain", "--data", "data.csv", "--system", "bad_system.json", "--train-config", "train.json", "--out-model", "m.json"],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn config_errors_exit_one_and_divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    workspace(d);
    std::fs::write(d.join("zero.json"), r#"{"n_train": 0}"#).unwrap();
    let run = |cfg: &str| {
        lfednet(
            d,
            &["pretrain", "--data", "data.csv", "--system", "system.json", "--train-config", cfg, "--out-model", "m.json", "--quiet"],
        )
    };
    assert_eq!(code(&run("zero.json")), 1);
    std::fs::write(
        d.join("wild.json"),
        r#"{"pretrain_epochs": 50, "pretrain_lr": 1e9, "optimizer": {"kind": "sgd", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}, "hidden_width": 8, "hidden_layers": 1}"#,
    )
    .unwrap();
    let out = run("wild.json");
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn pipeline_leaves_inputs_untouched_and_writes_feasible_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    workspace(d);
    let before: Vec<Vec<u8>> = ["data.csv", "system.json", "train.json"]
        .iter()
        .map(|f| std::fs::read(d.join(f)).unwrap())
        .collect();
    let ok = |args: &[&str]| {
        let out = lfednet(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    };
    let io = ["--data", "data.csv", "--system", "system.json"];
    ok(&[&["pretrain"][..], &io, &["--train-config", "train.json", "--out-model", "pre.json", "--quiet"]].concat());
    let pre = std::fs::read(d.join("pre.json")).unwrap();
    ok(&[&["train"][..], &io, &["--in-model", "pre.json", "--out-model", "task.json", "--quiet"]].concat());
    assert_eq!(pre, std::fs::read(d.join("pre.json")).unwrap());
    ok(&["dispatch", "--system", "system.json", "--model", "task.json", "--data", "data.csv", "--date", "2013-02-10", "--out", "s.csv"]);
    for (f, b) in ["data.csv", "system.json", "train.json"].iter().zip(&before) {
        assert_eq!(&std::fs::read(d.join(f)).unwrap(), b, "{f} changed");
    }

    let sys = lfednet_core::grid::SystemConfig::reference_3bus();
    let text = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut flat = Vec::new();
    for row in rdr.records() {
        flat.push(row.unwrap()[2].parse::<f64>().unwrap());
    }
    assert_eq!(flat.len(), 72);
    let cs = lfednet_core::grid::build_constraints(&sys);
    assert!(cs.is_satisfied(&flat, 1e-8));
    let forecast = std::fs::read_to_string(d.join("s.forecast.csv")).unwrap();
    assert!(forecast.starts_with("hour,mu_mw,sigma2\n"));
    assert_eq!(forecast.lines().count(), 25);

    let out = lfednet(
        d,
        &["dispatch", "--system", "system.json", "--model", "task.json", "--data", "data.csv", "--date", "2030-01-01", "--out", "t.csv"],
    );
    assert_eq!(code(&out), 2);
    assert!(!d.join("t.csv").exists());
}
