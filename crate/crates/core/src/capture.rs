//! Black-box execution capture.
//!
//! A run is observed from the outside: the experiment directory is
//! snapshotted, the command executes with that directory as its working
//! directory, and a second snapshot is diffed against the first. New or
//! changed files become produce edges. Reads are not traced, so inputs are
//! whatever the configuration declares plus the manifest's own inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;
use std::time::SystemTime;

use globset::{Glob, GlobSet, GlobSetBuilder};
use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::canonical;
use crate::config::ProjectConfig;
use crate::digest::ContentHash;
use crate::envspec::{resolve_script_packages, Runtime};
use crate::model::{
    ArtifactRole, DataArtifact, Ecosystem, ExperimentManifest, HardwareInfo, ModelError,
    OperatingSystemInfo, OsPackage, Parameter, MANIFEST_FILE,
};
use crate::relpath;
use crate::scan::lockfile::LOCKFILE_NAME;
use crate::scan::{read_lockfile, scan_script, LockfileError, LockfileFormat};
use crate::store::{ConsumeEdge, StoreError, StoreHandle, TrialId, TrialRecord};
use crate::timestamp::Timestamp;

pub const PENDING_FILE: &str = "trial.pending.json";

/// Always excluded from snapshots so the tool never captures its own files.
pub const DEFAULT_IGNORES: &[&str] = &[
    "provenance.db",
    "provenance.db-journal",
    "provenance.db-wal",
    "provenance.db-shm",
    "provenance.db.lock",
    "experiment.bundle.tar",
    "experiment.bundle.manifest.json",
    PENDING_FILE,
];

const SENTINEL: &str = "unknown";

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] ModelError),
    #[error("{path}: {source}")]
    Lockfile {
        path: PathBuf,
        source: LockfileError,
    },
    #[error("declared input {0:?} does not exist in the experiment directory")]
    MissingInput(String),
    #[error("command is empty")]
    EmptyCommand,
    #[error("cannot start {program:?}: {source}")]
    Spawn {
        program: String,
        source: std::io::Error,
    },
    #[error("recording the trial failed ({source}); it was saved to {}", rescue.display())]
    Store {
        source: StoreError,
        rescue: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaptureError + '_ {
    move |source| CaptureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One file as seen by a snapshot. Equality ignores `mtime`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    /// `None` when the file could not be read.
    pub content_hash: Option<ContentHash>,
    pub size_bytes: u64,
    pub mtime: Timestamp,
    /// Full-precision modification time, kept only in memory. A change marks
    /// a file the run rewrote, even with identical content.
    #[serde(skip)]
    pub modified: Option<SystemTime>,
    /// Set for symlinks, which are hashed by their target text and never followed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symlink_target: Option<String>,
}

impl PartialEq for FileEntry {
    fn eq(&self, other: &Self) -> bool {
        self.content_hash == other.content_hash
            && self.size_bytes == other.size_bytes
            && self.symlink_target == other.symlink_target
    }
}

impl Eq for FileEntry {}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSnapshot {
    /// Relative forward-slash paths.
    pub entries: BTreeMap<String, FileEntry>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

fn build_ignore(patterns: &[String]) -> Result<GlobSet, CaptureError> {
    let mut builder = GlobSetBuilder::new();
    for p in DEFAULT_IGNORES.iter().copied().chain(patterns.iter().map(String::as_str)) {
        let glob = Glob::new(p).map_err(|e| CaptureError::Config(format!("ignore pattern {p:?}: {e}")))?;
        builder.add(glob);
    }
    builder
        .build()
        .map_err(|e| CaptureError::Config(format!("ignore patterns: {e}")))
}

fn mtime_of(meta: &fs::Metadata) -> Timestamp {
    meta.modified()
        .ok()
        .map(|t| Timestamp::from_datetime(t.into()))
        .unwrap_or_else(|| Timestamp::from_unix(0).expect("epoch is representable"))
}

/// Hash every file under `dir` that no ignore pattern matches.
///
/// Patterns are matched against the relative path; a matching directory is
/// skipped entirely.
pub fn snapshot_tree(dir: &Path, ignore: &[String]) -> Result<FileSnapshot, CaptureError> {
    let meta = fs::metadata(dir).map_err(io_err(dir))?;
    if !meta.is_dir() {
        return Err(CaptureError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        });
    }
    let globs = build_ignore(ignore)?;
    let mut snap = FileSnapshot::default();
    let rel = |p: &Path| relpath::relative_to(dir, p).ok();
    let walker = WalkDir::new(dir)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || rel(e.path()).is_none_or(|r| !globs.is_match(&r)));
    for item in walker {
        let entry = match item {
            Ok(e) => e,
            Err(e) => {
                snap.diagnostics.push(format!("skipped unreadable entry: {e}"));
                continue;
            }
        };
        if entry.depth() == 0 || entry.file_type().is_dir() {
            continue;
        }
        let Some(path) = rel(entry.path()) else {
            snap.diagnostics
                .push(format!("skipped {}: not representable as a relative path", entry.path().display()));
            continue;
        };
        let meta = match entry.path().symlink_metadata() {
            Ok(m) => m,
            Err(e) => {
                snap.diagnostics.push(format!("skipped {path}: {e}"));
                continue;
            }
        };
        let file_type = entry.file_type();
        let file = if file_type.is_symlink() {
            match fs::read_link(entry.path()) {
                Ok(target) => {
                    let target = relpath::to_forward_slashes(&target.to_string_lossy());
                    FileEntry {
                        content_hash: Some(ContentHash::of_bytes(target.as_bytes())),
                        size_bytes: target.len() as u64,
                        mtime: mtime_of(&meta),
                        modified: meta.modified().ok(),
                        symlink_target: Some(target),
                    }
                }
                Err(e) => {
                    snap.diagnostics.push(format!("unreadable symlink {path}: {e}"));
                    FileEntry {
                        content_hash: None,
                        size_bytes: 0,
                        mtime: mtime_of(&meta),
                        modified: meta.modified().ok(),
                        symlink_target: None,
                    }
                }
            }
        } else if file_type.is_file() {
            match ContentHash::of_file(entry.path()) {
                Ok((hash, len)) => FileEntry {
                    content_hash: Some(hash),
                    size_bytes: len,
                    mtime: mtime_of(&meta),
                    modified: meta.modified().ok(),
                    symlink_target: None,
                },
                Err(e) => {
                    snap.diagnostics.push(format!("unreadable file {path}: {e}"));
                    FileEntry {
                        content_hash: None,
                        size_bytes: meta.len(),
                        mtime: mtime_of(&meta),
                        modified: meta.modified().ok(),
                        symlink_target: None,
                    }
                }
            }
        } else {
            snap.diagnostics.push(format!("skipped {path}: not a regular file"));
            continue;
        };
        snap.entries.insert(path, file);
    }
    Ok(snap)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentFingerprint {
    pub os: OperatingSystemInfo,
    pub hardware: HardwareInfo,
    pub runtimes: BTreeSet<Runtime>,
    pub env_vars: BTreeMap<String, String>,
}

static VERSION_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+\.\d+(?:\.\d+)*").expect("valid regex"));

/// First `N.N[.N...]` token in interpreter output.
pub fn parse_version(output: &str) -> Option<String> {
    VERSION_TOKEN.find(output).map(|m| m.as_str().to_owned())
}

fn os_release_field(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let value = line.strip_prefix(key)?.strip_prefix('=')?;
        let value = value.trim().trim_matches('"').trim_matches('\'');
        (!value.is_empty()).then(|| value.to_owned())
    })
}

fn probe_os(diagnostics: &mut Vec<String>) -> OperatingSystemInfo {
    let release = fs::read_to_string("/etc/os-release")
        .or_else(|_| fs::read_to_string("/usr/lib/os-release"))
        .ok();
    let name = release.as_deref().and_then(|r| os_release_field(r, "NAME"));
    let version = release.as_deref().and_then(|r| os_release_field(r, "VERSION_ID"));
    let kernel = fs::read_to_string("/proc/sys/kernel/osrelease")
        .ok()
        .map(|k| k.trim().to_owned())
        .filter(|k| !k.is_empty());
    let name = name.unwrap_or_else(|| std::env::consts::OS.to_owned());
    let version = version.unwrap_or_else(|| {
        diagnostics.push("OS version unavailable; recorded as \"unknown\"".into());
        SENTINEL.to_owned()
    });
    OperatingSystemInfo { name, version, kernel }
}

fn probe_hardware(diagnostics: &mut Vec<String>) -> HardwareInfo {
    let cpuinfo = fs::read_to_string("/proc/cpuinfo").unwrap_or_default();
    let cpu_model = cpuinfo
        .lines()
        .find_map(|l| {
            let (key, value) = l.split_once(':')?;
            matches!(key.trim(), "model name" | "Hardware" | "cpu model" | "Model")
                .then(|| value.trim().to_owned())
                .filter(|v| !v.is_empty())
        })
        .unwrap_or_else(|| {
            diagnostics.push("CPU model unavailable; recorded as \"unknown\"".into());
            SENTINEL.to_owned()
        });
    let logical_cores = std::thread::available_parallelism()
        .map(|n| n.get() as u32)
        .unwrap_or_else(|_| {
            diagnostics.push("core count unavailable; recorded as 1".into());
            1
        });
    let total_memory_bytes = fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|m| {
            m.lines().find_map(|l| {
                let kb = l.strip_prefix("MemTotal:")?.trim().strip_suffix("kB")?.trim();
                kb.parse::<u64>().ok().map(|kb| kb * 1024)
            })
        })
        .unwrap_or_else(|| {
            diagnostics.push("total memory unavailable; recorded as 0".into());
            0
        });
    HardwareInfo {
        cpu_model,
        logical_cores,
        total_memory_bytes,
        architecture: std::env::consts::ARCH.to_owned(),
    }
}

fn probe_runtime(ecosystem: Ecosystem, command: &str, diagnostics: &mut Vec<String>) -> Option<Runtime> {
    let mut words = command.split_whitespace();
    let program = words.next()?;
    let output = match Command::new(program).args(words).arg("--version").output() {
        Ok(o) => o,
        Err(e) => {
            diagnostics.push(format!("{ecosystem} interpreter {program:?} unavailable: {e}"));
            return None;
        }
    };
    let mut text = String::from_utf8_lossy(&output.stdout).into_owned();
    text.push('\n');
    text.push_str(&String::from_utf8_lossy(&output.stderr));
    match parse_version(&text) {
        Some(version) => Some(Runtime { ecosystem, version }),
        None => {
            diagnostics.push(format!("{ecosystem} interpreter {program:?} printed no version"));
            None
        }
    }
}

/// Fingerprint this machine. Missing facts become sentinels plus a diagnostic.
pub fn probe_environment(
    allowlist: &[String],
    interpreters: &BTreeMap<Ecosystem, String>,
) -> (EnvironmentFingerprint, Vec<String>) {
    let mut diagnostics = Vec::new();
    let os = probe_os(&mut diagnostics);
    let hardware = probe_hardware(&mut diagnostics);
    let runtimes = interpreters
        .iter()
        .filter_map(|(eco, cmd)| probe_runtime(*eco, cmd, &mut diagnostics))
        .collect();
    let env_vars = allowlist
        .iter()
        .filter_map(|name| std::env::var(name).ok().map(|v| (name.clone(), v)))
        .collect();
    (
        EnvironmentFingerprint {
            os,
            hardware,
            runtimes,
            env_vars,
        },
        diagnostics,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureOutcome {
    pub trial: TrialRecord,
    pub diagnostics: Vec<String>,
}

/// Replace runtime entries in `packages` with the probed runtimes.
fn with_runtimes(packages: &BTreeSet<OsPackage>, runtimes: &BTreeSet<Runtime>) -> BTreeSet<OsPackage> {
    packages
        .iter()
        .filter(|p| !Ecosystem::ALL.iter().any(|l| l.as_str() == p.name))
        .cloned()
        .chain(runtimes.iter().map(|r| OsPackage::new(r.ecosystem.as_str(), &r.version)))
        .collect()
}

fn artifact(path: &str, entry: &FileEntry, role: ArtifactRole) -> Option<DataArtifact> {
    Some(DataArtifact {
        path: path.to_owned(),
        role,
        content_hash: entry.content_hash.clone()?,
        size_bytes: entry.size_bytes,
    })
}

/// Run `command` in `workdir` and record the observed trial.
///
/// The store's write lock is held for the whole capture, so captures sharing
/// a store never interleave.
pub fn run_captured(
    workdir: &Path,
    command: &[String],
    declared_inputs: &[String],
    parameters: &BTreeSet<Parameter>,
    store: &mut StoreHandle,
    config: &ProjectConfig,
) -> Result<CaptureOutcome, CaptureError> {
    let program = command.first().ok_or(CaptureError::EmptyCommand)?;
    let mut diagnostics = Vec::new();
    let mut manifest = ExperimentManifest::load(&workdir.join(MANIFEST_FILE))?;
    let declared: BTreeSet<String> = declared_inputs
        .iter()
        .map(|p| relpath::normalize(p).map_err(|e| CaptureError::Config(e.to_string())))
        .collect::<Result<_, _>>()?;

    let script_path = workdir.join(&manifest.script.path);
    let source = fs::read(&script_path).map_err(io_err(&script_path))?;
    let scan = scan_script(&String::from_utf8_lossy(&source), manifest.script.language);
    for d in &scan.diagnostics {
        diagnostics.push(format!("{}:{}: {}", manifest.script.path, d.line, d.message));
    }
    manifest.script.content_hash = ContentHash::of_bytes(&source);
    manifest.functions = scan.functions();
    let lock_path = workdir.join(LOCKFILE_NAME);
    if lock_path.is_file() {
        let text = fs::read_to_string(&lock_path).map_err(io_err(&lock_path))?;
        let lockfile = read_lockfile(&text, LockfileFormat::Canonical).map_err(|source| {
            CaptureError::Lockfile {
                path: lock_path.clone(),
                source,
            }
        })?;
        let (packages, unpinned) =
            resolve_script_packages(manifest.script.language, &scan.dependencies, &lockfile);
        manifest.script_packages = packages;
        diagnostics.extend(unpinned);
    }

    let language = manifest.script.language;
    let interpreters: BTreeMap<Ecosystem, String> = config
        .interpreters
        .iter()
        .filter(|(eco, _)| **eco == language)
        .map(|(e, c)| (*e, c.clone()))
        .collect();
    let (fingerprint, probe_diags) = probe_environment(&config.env_allowlist, &interpreters);
    diagnostics.extend(probe_diags);
    manifest.os = fingerprint.os;
    manifest.hardware = fingerprint.hardware;
    manifest.os_packages = with_runtimes(&manifest.os_packages, &fingerprint.runtimes);

    let _lock = store.write_lock().map_err(|source| CaptureError::Store {
        source,
        rescue: PathBuf::new(),
    })?;
    let before = snapshot_tree(workdir, &config.ignore)?;
    diagnostics.extend(before.diagnostics.iter().cloned());
    for path in &declared {
        if !before.entries.contains_key(path) {
            return Err(CaptureError::MissingInput(path.clone()));
        }
    }

    let started_at = Timestamp::now();
    let status = Command::new(program)
        .args(&command[1..])
        .current_dir(workdir)
        .status()
        .map_err(|source| CaptureError::Spawn {
            program: program.clone(),
            source,
        })?;
    let finished_at = Timestamp::now().max(started_at);
    let exit_code = exit_code_of(&status);

    let after = snapshot_tree(workdir, &config.ignore)?;
    diagnostics.extend(after.diagnostics.iter().cloned());

    let manifest_inputs: BTreeSet<&str> = manifest.inputs.iter().map(|a| a.path.as_str()).collect();
    let mut consumed_paths: BTreeSet<String> = declared.clone();
    for path in manifest_inputs {
        if before.entries.contains_key(path) && after.entries.contains_key(path) {
            consumed_paths.insert(path.to_owned());
        }
    }
    let mut consume_edges = Vec::new();
    for path in &consumed_paths {
        match artifact(path, &before.entries[path], ArtifactRole::Input) {
            Some(a) => consume_edges.push(ConsumeEdge {
                artifact: a,
                parameters: parameters.clone(),
            }),
            None => diagnostics.push(format!("input {path} was unreadable and is not recorded")),
        }
    }

    let mut produce_edges = Vec::new();
    for (path, entry) in &after.entries {
        let rewritten = |prev: &FileEntry| prev != entry || prev.modified != entry.modified;
        if !before.entries.get(path).is_none_or(rewritten) {
            continue;
        }
        let role = if consumed_paths.contains(path) {
            diagnostics.push(format!("input {path} was modified by the run; recorded as intermediate"));
            ArtifactRole::Intermediate
        } else {
            ArtifactRole::Output
        };
        match artifact(path, entry, role) {
            Some(a) => produce_edges.push(a),
            None => diagnostics.push(format!("output {path} was unreadable and is not recorded")),
        }
    }
    for path in before.entries.keys().filter(|p| !after.entries.contains_key(*p)) {
        diagnostics.push(format!("{path} was deleted by the run"));
    }

    manifest.inputs = consume_edges.iter().map(|e| e.artifact.clone()).collect();
    manifest.parameters = parameters.clone();
    let trial = TrialRecord {
        trial_id: TrialId::generate(),
        manifest,
        command: command.to_vec(),
        started_at,
        finished_at,
        exit_code,
        consume_edges,
        produce_edges,
        env_vars: fingerprint.env_vars,
        notes: String::new(),
    };
    if let Err(source) = store.record_trial(&trial) {
        let rescue = workdir.join(PENDING_FILE);
        canonical::write_canonical_file(&rescue, &trial).map_err(io_err(&rescue))?;
        return Err(CaptureError::Store { source, rescue });
    }
    Ok(CaptureOutcome { trial, diagnostics })
}

#[cfg(unix)]
fn exit_code_of(status: &std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

#[cfg(not(unix))]
fn exit_code_of(status: &std::process::ExitStatus) -> i32 {
    status.code().unwrap_or(-1)
}
