//! Helpers shared by the CLI integration tests and the acceptance harness.

#![allow(dead_code)]

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub const REPRO: &str = env!("CARGO_BIN_EXE_repro");
pub const TOY: &str = env!("CARGO_BIN_EXE_repro-toy-enm");

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/enm")
}

pub fn scan_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/scan")
}

/// `PATH` with the toy interpreter's directory first.
fn search_path() -> OsString {
    let bins = Path::new(TOY).parent().expect("binary has a directory").to_path_buf();
    let rest = std::env::var_os("PATH").unwrap_or_default();
    std::env::join_paths(std::iter::once(bins).chain(std::env::split_paths(&rest))).unwrap()
}

#[derive(Debug)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.stdout)
            .unwrap_or_else(|e| panic!("stdout is not JSON ({e}):\n{}\nstderr:\n{}", self.stdout, self.stderr))
    }

    /// Parsed `--json` output, after checking it is already canonical.
    pub fn canonical_json(&self) -> serde_json::Value {
        let again = repro_core::canonical::canonicalize_str(&self.stdout).expect("stdout is JSON");
        assert_eq!(again, self.stdout, "--json output is not canonical");
        self.json()
    }
}

pub fn repro(cwd: &Path, args: &[&str]) -> Output {
    repro_env(cwd, args, &[])
}

pub fn repro_env(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let out = Command::new(REPRO)
        .args(args)
        .current_dir(cwd)
        .env("PATH", search_path())
        .envs(env.iter().copied())
        .output()
        .expect("repro binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Run and insist on `code`, with both streams in the panic message.
pub fn expect(code: i32, cwd: &Path, args: &[&str]) -> Output {
    let out = repro(cwd, args);
    assert_eq!(
        out.code, code,
        "repro {args:?}\nstdout:\n{}\nstderr:\n{}",
        out.stdout, out.stderr
    );
    out
}

/// Recursive copy; entries are created in the order `order` puts them.
pub fn copy_tree_ordered(src: &Path, dst: &Path, order: &dyn Fn(&mut Vec<PathBuf>)) {
    fs::create_dir_all(dst).unwrap();
    let mut entries: Vec<PathBuf> = fs::read_dir(src).unwrap().map(|e| e.unwrap().path()).collect();
    order(&mut entries);
    for path in entries {
        let target = dst.join(path.file_name().unwrap());
        if path.is_dir() {
            copy_tree_ordered(&path, &target, order);
        } else {
            fs::copy(&path, &target).unwrap();
        }
    }
}

pub fn copy_tree(src: &Path, dst: &Path) {
    copy_tree_ordered(src, dst, &|v| v.sort());
}

/// Fresh copy of the ENM fixture, initialised as an experiment.
pub fn initialised_fixture(root: &Path) -> PathBuf {
    let dir = root.join("experiment");
    copy_tree(&fixture(), &dir);
    expect(
        0,
        &dir,
        &["init", "--script", "setup.R", "--user", "Ana Example", "--input", "data/occurrences.csv", "--param", "seed=512"],
    );
    dir
}

pub fn trial_id(out: &Output) -> String {
    out.json()["trial_id"].as_str().expect("trial id in run output").to_owned()
}
