//! CLI surface checks beyond the acceptance suite: the cost-model table
//! subcommand and environment-variable output rooting.

use std::process::Command;

#[test]
fn bench_runtime_emits_full_table() {
    let out = Command::new(env!("CARGO_BIN_EXE_tngd"))
        .args([
            "bench-runtime",
            "--n-list",
            "10000,100000",
            "--dz-list",
            "20",
            "--batch",
            "32",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "optimizer,n,b,d_z,c,t,build_seconds,transfer_seconds,analog_seconds,total_seconds,memory_bytes"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 5); // two N values, five backends
    for label in ["first-order", "ngd", "ngd-cg", "ngd-woodbury", "tngd"] {
        assert!(rows.iter().any(|r| r.starts_with(label)), "missing {label}");
    }
    // The thermodynamic estimate undercuts Woodbury at N = 1e4.
    let total = |label: &str, n: &str| -> f64 {
        rows.iter()
            .find(|r| r.starts_with(label) && r.split(',').nth(1) == Some(n))
            .unwrap()
            .split(',')
            .nth(9)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(total("tngd", "10000") < total("ngd-woodbury", "10000"));
}

#[test]
fn output_root_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.conf");
    std::fs::write(
        &config,
        "\
schema = 1
[dataset]
kind = blobs
train_size = 30
test_size = 12
seed = 1
[model]
hidden = 4
[optimizer]
rule = sgd
source = raw-gradient
[run]
epochs = 1
batch_size = 10
seeds = 0
output = from-env
",
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tngd"))
        .args(["train", "--config"])
        .arg(&config)
        .env("TNGD_OUTPUT_ROOT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("from-env/run_seed0.csv").exists());
}
