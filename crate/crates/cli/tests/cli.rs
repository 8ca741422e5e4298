use std::path::Path;
use std::process::{Command, Output};

fn rresnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rresnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sir_round_trip_through_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sir");
    let out = stdout(&rresnet(&[
        "gen-data",
        "sir",
        "--out",
        path(&data),
        "--nodes",
        "63",
        "--seed",
        "2",
    ]));
    assert!(out.contains("63 nodes"), "{out}");

    let delta = stdout(&rresnet(&["diagnose", "delta", "--data", path(&data)]));
    assert_eq!(delta.trim(), "delta = 0");

    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
        name = "cli"
        seeds = [0, 1]
        output_dir = "out"
        [dataset]
        source = "graph_dir"
        path = "sir"
        [manifold]
        name = "poincare"
        dim = 4
        [model]
        num_features = 8
        [optimizer]
        epochs = 15
        eval_every = 5
        "#,
    )
    .unwrap();
    let out = stdout(&rresnet(&["train", "--config", path(&config)]));
    assert!(out.contains("cli: f1 = "), "{out}");
    let run = dir.path().join("out");
    for file in [
        "report.json",
        "metrics_seed0.csv",
        "metrics_seed1.csv",
        "checkpoint_seed1.toml",
    ] {
        assert!(run.join(file).exists(), "missing {file}");
    }

    let report: String = std::fs::read_to_string(run.join("report.json")).unwrap();
    let seed1 = report.split("\"seed\": 1").nth(1).unwrap();
    let reported: f64 = seed1
        .split("\"test_metric\": ")
        .nth(1)
        .unwrap()
        .split([',', '\n'])
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let ckpt = run.join("checkpoint_seed1.toml");
    let out = stdout(&rresnet(&[
        "evaluate",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&data),
    ]));
    let value: f64 = out.trim().strip_prefix("f1 = ").unwrap().parse().unwrap();
    assert_eq!(value, reported);
}

#[test]
fn spd_data_generation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("spd");
    let out = stdout(&rresnet(&[
        "gen-data",
        "spd",
        "--out",
        path(&data),
        "--samples",
        "12",
        "--dim",
        "4",
        "--correlation",
    ]));
    assert!(out.contains("wrote 12 SPD matrices (0 dropped)"), "{out}");
    assert!(data.join("matrices").join("00011.txt").exists());
    assert!(data.join("labels.csv").exists());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "bogus = 1\n").unwrap();
    let out = rresnet(&["train", "--config", path(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = rresnet(&[
        "diagnose",
        "delta",
        "--data",
        path(&dir.path().join("missing")),
    ]);
    assert!(!out.status.success());
}
