//! Process-level checks of the installed binary.
//!
//! The command behavior itself is tested in-process in `src/cli.rs`;
//! these tests only confirm that the compiled binary wires `main` to the
//! same dispatch: argument parsing, exit codes across the process
//! boundary, and on-disk artifacts. Workloads are kept tiny because the
//! test binary runs unoptimized.

use std::path::Path;
use std::process::{Command, Output};

fn r2unet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2unet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary should spawn")
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = r2unet(&["--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["synth", "train", "eval", "gradcheck", "benchmark"] {
        assert!(text.contains(name), "--help is missing {name}:\n{text}");
    }
}

#[test]
fn synth_writes_a_dataset_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = r2unet(&["synth", "--n", "2", "--size", "8", "--seed", "0", "--out", "d"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("d/images/synth_0000.pgm").exists());
    assert!(dir.path().join("d/masks/synth_0001_mask.pgm").exists());
    assert!(dir.path().join("d/split.json").exists());
}

#[test]
fn gradcheck_of_one_block_exits_zero_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = r2unet(&["gradcheck", "--block", "conv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("conv/"), "per-parameter lines missing:\n{text}");
    assert!(text.contains("PASS"), "verdict line missing:\n{text}");
}

#[test]
fn config_and_data_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"model": {"depht": 2}}"#).unwrap();
    let out = r2unet(
        &["train", "--model", "unet", "--data", "d", "--config", "bad.json", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "unknown config key is a usage error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("depht"));

    let out = r2unet(
        &["eval", "--checkpoint", "missing.ckpt", "--data", "d", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "missing checkpoint is a data error");
}
