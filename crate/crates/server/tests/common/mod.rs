#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_handpilot"));
    c.env_remove("HANDPILOT_LOG");
    c
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Trains a small model through the CLI and returns its path.
pub fn quick_model(dir: &Path) -> PathBuf {
    let o = run_in(dir, &["gen-data", "--out", "small.csv", "--per-class", "400", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run_in(
        dir,
        &[
            "train", "--data", "small.csv", "--out", "m.bin", "--hidden", "64", "--epochs", "40", "--learning-rate",
            "5e-3", "--seed", "1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("m.bin")
}

/// `key value` lines of a metrics block.
pub fn block_value(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(key)).then(|| it.collect::<Vec<_>>().join(" "))
        })
        .unwrap_or_else(|| panic!("no {key} in\n{out}"))
}
