use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--seed",
    "5",
    "--set",
    "dataset.samples=24",
    "--set",
    "fusion.epochs=2",
    "--set",
    "fusion.train_samples=8",
    "--set",
    "depth.epochs=2",
    "--set",
    "depth.train_samples=8",
];

fn even(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_even"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("EVEN_NUM_WORKERS", "1")
        .output()
        .expect("spawn even")
}

fn small(out: &Path, cmd: &str) -> Output {
    let mut args = vec![cmd];
    args.extend_from_slice(SMALL);
    even(out, &args)
}

fn run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(out).unwrap().flatten().map(|e| e.path()).collect();
    assert_eq!(dirs.len(), 1, "expected one run dir in {}", out.display());
    dirs[0].clone()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = even(tmp.path(), &["sharpen"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_key_lists_valid_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let out = even(tmp.path(), &["gen-data", "--set", "fusion.chanels=8"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("fusion.chanels") && err.contains("fusion.channels"),
        "{err}"
    );
}

#[test]
fn config_file_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "# desk\ndataset.samples = 0\n").unwrap();
    let out = even(tmp.path(), &["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_require_upstream_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = small(tmp.path(), "train-enhance");
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gen-data"), "{err}");

    assert_eq!(small(tmp.path(), "gen-data").status.code(), Some(0));
    let out = small(tmp.path(), "train-fusion");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-enhance"));
    let out = small(tmp.path(), "eval");
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn staged_commands_match_all_and_reruns_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let staged = tmp.path().join("staged");
    for cmd in [
        "gen-data",
        "train-enhance",
        "train-fusion",
        "export-fusion",
        "train-depth",
        "eval",
    ] {
        let out = small(&staged, cmd);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let whole = tmp.path().join("whole");
    let out = small(&whole, "all");
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("abs_rel") && stdout.contains("even"), "{stdout}");

    let (a, b) = (run_dir(&staged), run_dir(&whole));
    assert_eq!(a.file_name(), b.file_name(), "same config, same run id");
    for f in [
        "models/enhancer.evnp",
        "models/fusion-even.evnp",
        "models/depth-even.evnp",
        "data/manifest.txt",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let eval_metrics = fs::read(a.join("reports/006-eval/metrics.txt")).unwrap();
    assert_eq!(eval_metrics, fs::read(b.join("reports/001-all/metrics.txt")).unwrap());

    // rerunning eval reuses everything and reproduces the report
    let params_before = fs::read(a.join("models/depth-even.evnp")).unwrap();
    assert_eq!(small(&staged, "eval").status.code(), Some(0));
    assert_eq!(fs::read(a.join("reports/007-eval/metrics.txt")).unwrap(), eval_metrics);
    assert_eq!(fs::read(a.join("models/depth-even.evnp")).unwrap(), params_before);
    let artifacts = fs::read_to_string(a.join("reports/007-eval/artifacts.txt")).unwrap();
    assert!(!artifacts.contains("created"), "{artifacts}");
    for f in ["config.txt", "table.txt", "abs_rel.png"] {
        assert!(a.join("reports/007-eval").join(f).exists(), "{f}");
    }
}

#[test]
fn seed_changes_run_id() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        even(tmp.path(), &["gen-data", "--set", "dataset.samples=8", "--seed", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        even(tmp.path(), &["gen-data", "--set", "dataset.samples=8", "--seed", "2"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 2);
}
