use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn geotkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geotkg")).args(args).env("RUST_LOG", "warn").output().expect("spawn geotkg")
}

fn ok(args: &[&str]) -> Output {
    let out = geotkg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero_for_every_command() {
    ok(&["--help"]);
    for cmd in ["generate", "train", "eval", "diagnose", "bench-geometry"] {
        let out = ok(&[cmd, "--help"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("--out"));
    }
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--seed", "7", "--n-bins", "6", "--out", p(&a)]);
    ok(&["generate", "--seed", "7", "--n-bins", "6", "--out", p(&b)]);
    for f in ["events.tsv", "bins.json", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn smoke_pipeline_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    ok(&["generate", "--seed", "3", "--n-bins", "10", "--out", p(&data)]);
    ok(&["train", "--data", p(&data), "--epochs", "3", "--seed", "3", "--out", p(&model)]);
    for f in ["model.json", "model.bin", "trace.csv", "trace.json", "config.json"] {
        assert!(model.join(f).exists(), "{f} missing");
    }

    let eval_dir = dir.path().join("eval");
    let out = ok(&["eval", "--data", p(&data), "--model", p(&model), "--out", p(&eval_dir)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("MRR"));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let mrr = metrics["metrics"]["mrr"].as_f64().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);

    let diag = dir.path().join("diag");
    ok(&["diagnose", "--data", p(&data), "--model", p(&model), "--out", p(&diag)]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(diag.join("diagnostics.json")).unwrap()).unwrap();
    assert!(report["lipschitz"]["l_e"].as_f64().unwrap() > 0.0);

    // Re-running training from the echoed config reproduces the checkpoint.
    let rerun = dir.path().join("rerun");
    let echo = model.join("config.json");
    ok(&["train", "--config", p(&echo), "--out", p(&rerun)]);
    assert_eq!(fs::read(model.join("model.bin")).unwrap(), fs::read(rerun.join("model.bin")).unwrap());
    assert_eq!(fs::read(model.join("model.json")).unwrap(), fs::read(rerun.join("model.json")).unwrap());
}

#[test]
fn bench_geometry_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bench-geometry", "--depth", "3", "--dims", "2,3", "--out", p(dir.path())]);
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("depth,dim,geometry"));
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn errors_map_to_category_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotkg(&["bench-geometry", "--depth", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(5));

    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("events.tsv"), "0\t0\tx\t1\n").unwrap();
    let out = geotkg(&["train", "--data", p(&bad), "--out", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(4));

    let out = geotkg(&["train", "--data", p(&dir.path().join("missing")), "--out", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));

    assert_eq!(geotkg(&["train", "--no-such-flag"]).status.code(), Some(2));
}
