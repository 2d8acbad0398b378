use std::path::Path;
use std::process::{Command, Output};

use ris_cnnar::scenario::ConfigFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-cnnar"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        code(&run(&["eval", "--experiment", "overhead", "--bogus"])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["eval"])), 2);
    assert_eq!(code(&run(&["eval", "--experiment", "fig7"])), 2);
    assert_eq!(code(&run(&[])), 2);
    let o = run(&["train", "--nope"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn overhead_from_shipped_config_is_reproducible() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/table1.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[
        "eval",
        "--experiment",
        "overhead",
        "--config",
        cfg,
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(dir.path().join("overhead.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.contains("\n225,15,12,2,20,20,216960,7680,28.25\n"));
    assert_eq!(code(&run(&["overhead", "--config", cfg, "--out", out])), 0);
    assert_eq!(
        std::fs::read(dir.path().join("overhead.csv")).unwrap(),
        first
    );
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["eval", "--experiment", "nmse-vs-horizon", "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("classifier.ckpt"));
    let o = run(&["overhead", "--config", "/does/not/exist.toml", "--out", out]);
    assert_eq!(code(&o), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[system]\nn_bs_antennas = 0\n").unwrap();
    assert_eq!(
        code(&run(&[
            "overhead",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            out
        ])),
        1
    );
}

fn files_equal(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn end_to_end_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let trace = dir.path().join("trace.bin");
    let o = run(&[
        "gen-data",
        "--per-class",
        "8",
        "--seed",
        "3",
        "--out",
        out,
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.ds", "val.ds", "test.ds"] {
        assert!(dir.path().join(f).exists());
    }
    let t =
        ris_cnnar::channel::ChannelTrace::read_from(std::fs::File::open(&trace).unwrap()).unwrap();
    assert_eq!(t.n_intervals(), 45);

    let o = run(&["train", "--epochs", "2", "--seed", "3", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("classifier.ckpt").exists());
    assert!(dir.path().join("training.csv").exists());

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = run(&[
            "eval",
            "--experiment",
            "nmse-vs-horizon",
            "--trials",
            "3",
            "--seed",
            "7",
            "--out",
            d.to_str().unwrap(),
            "--checkpoint",
            dir.path().join("classifier.ckpt").to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(files_equal(
        &a.join("nmse-vs-horizon.csv"),
        &b.join("nmse-vs-horizon.csv")
    ));
}

#[test]
fn shipped_default_config_matches_builtin() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let file = ConfigFile::load(Path::new(path)).unwrap();
    assert_eq!(file, ConfigFile::default());
}
