//! Declarative environment specification with an append-only modification log.
//!
//! An [`EnvSpec`] lists what a fresh machine needs to run the experiment: a
//! base OS, OS packages, language runtimes and script packages. Changes made
//! after the fact (installing GDAL by hand, bumping a runtime) are appended to
//! the log rather than edited into the base, so the rendered provisioning
//! steps replay history in order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::model::{Ecosystem, ExperimentManifest, Language, OsPackage, ScriptPackage};
use crate::scan::ScanResult;
use crate::timestamp::Timestamp;

pub const ENVSPEC_FILE: &str = "envspec.json";
pub const PROVISION_FILE: &str = "provision.steps";
/// Version recorded for a dependency the lockfile does not pin.
pub const UNPINNED: &str = "unpinned";

#[derive(Debug, thiserror::Error)]
pub enum EnvSpecError {
    #[error("manifest script hash {manifest} does not match scanned source hash {scan}")]
    Consistency { manifest: String, scan: String },
    #[error("invalid envspec: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseOs {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Runtime {
    pub ecosystem: Ecosystem,
    pub version: String,
}

/// What a modification changes. Serialized as `{"action": ..., "payload": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload")]
pub enum Change {
    AddOsPackage(OsPackage),
    AddScriptPackage(ScriptPackage),
    SetRuntime(Runtime),
    Note(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modification {
    /// 1-based, contiguous.
    pub seq: u32,
    #[serde(flatten)]
    pub change: Change,
    pub recorded_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub base_os: BaseOs,
    pub os_packages: BTreeSet<OsPackage>,
    pub runtimes: BTreeSet<Runtime>,
    pub script_packages: BTreeSet<ScriptPackage>,
    #[serde(default)]
    pub modification_log: Vec<Modification>,
}

/// Python distribution names compare case-insensitively with `-`, `_`, `.` equivalent.
fn package_key(language: Language, name: &str) -> String {
    match language {
        Language::R => name.to_owned(),
        Language::Python => name
            .chars()
            .map(|c| match c {
                '_' | '.' => '-',
                c => c.to_ascii_lowercase(),
            })
            .collect(),
    }
}

/// Keep the lockfile entries the script actually uses; unpinned dependencies get
/// [`UNPINNED`] and a diagnostic each.
pub fn resolve_script_packages(
    language: Language,
    dependencies: &BTreeSet<String>,
    lockfile: &BTreeSet<ScriptPackage>,
) -> (BTreeSet<ScriptPackage>, Vec<String>) {
    let mut out = BTreeSet::new();
    let mut diagnostics = Vec::new();
    for dep in dependencies {
        let key = package_key(language, dep);
        let pinned: Vec<&ScriptPackage> = lockfile
            .iter()
            .filter(|p| p.ecosystem == language && package_key(language, &p.name) == key)
            .collect();
        if pinned.is_empty() {
            diagnostics.push(format!("{language} package {dep} is not pinned in the lockfile"));
            out.insert(ScriptPackage::new(language, dep.clone(), UNPINNED));
        } else {
            out.extend(pinned.into_iter().cloned());
        }
    }
    (out, diagnostics)
}

/// Split runtime entries (OS packages named after a language) from ordinary OS packages.
pub fn split_runtimes(packages: &BTreeSet<OsPackage>) -> (BTreeSet<OsPackage>, BTreeSet<Runtime>) {
    let mut plain = BTreeSet::new();
    let mut runtimes = BTreeSet::new();
    for p in packages {
        match Language::ALL.iter().find(|l| l.as_str() == p.name) {
            Some(&ecosystem) => {
                runtimes.insert(Runtime {
                    ecosystem,
                    version: p.version.clone(),
                });
            }
            None => {
                plain.insert(p.clone());
            }
        }
    }
    (plain, runtimes)
}

/// Build the base spec. The scan must be of the manifest's script.
pub fn generate_envspec(
    manifest: &ExperimentManifest,
    scan: &ScanResult,
    lockfile: &BTreeSet<ScriptPackage>,
) -> Result<(EnvSpec, Vec<String>), EnvSpecError> {
    if scan.source_hash != manifest.script.content_hash {
        return Err(EnvSpecError::Consistency {
            manifest: manifest.script.content_hash.to_string(),
            scan: scan.source_hash.to_string(),
        });
    }
    let (script_packages, diagnostics) =
        resolve_script_packages(scan.language, &scan.dependencies, lockfile);
    let (os_packages, runtimes) = split_runtimes(&manifest.os_packages);
    let spec = EnvSpec {
        base_os: BaseOs {
            name: manifest.os.name.clone(),
            version: manifest.os.version.clone(),
        },
        os_packages,
        runtimes,
        script_packages,
        modification_log: Vec::new(),
    };
    Ok((spec, diagnostics))
}

/// Return a copy of `spec` with `change` appended to the log.
pub fn record_modification(spec: &EnvSpec, change: Change, recorded_at: Timestamp) -> EnvSpec {
    let mut next = spec.clone();
    let seq = spec.modification_log.last().map_or(1, |m| m.seq + 1);
    next.modification_log.push(Modification {
        seq,
        change,
        recorded_at,
    });
    next
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvSpecError> {
        if self.base_os.name.trim().is_empty() {
            return Err(EnvSpecError::Invalid("base_os.name must be non-empty".into()));
        }
        for (i, m) in self.modification_log.iter().enumerate() {
            if m.seq as usize != i + 1 {
                return Err(EnvSpecError::Invalid(format!(
                    "modification_log[{i}] has seq {}, expected {}",
                    m.seq,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EnvSpecError> {
        let spec: EnvSpec =
            serde_json::from_str(text).map_err(|e| EnvSpecError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, EnvSpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvSpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_string(self).expect("envspec serialization is infallible")
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvSpecError> {
        canonical::write_atomic(path, self.to_canonical_json().as_bytes()).map_err(|source| {
            EnvSpecError::Io {
                path: path.display().to_string(),
                source,
            }
        })
    }
}

/// Quote a word only when it would not survive whitespace splitting.
fn word(s: &str) -> String {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '"' || c == '#') {
        serde_json::to_string(s).expect("strings serialize")
    } else {
        s.to_owned()
    }
}

fn package_kind(ecosystem: Ecosystem) -> &'static str {
    match ecosystem {
        Language::R => "r-package",
        Language::Python => "python-package",
    }
}

fn push_install(lines: &mut Vec<String>, kind: &str, name: &str, version: &str) {
    if version == UNPINNED {
        lines.push(format!("# warning: {kind} {} has no pinned version", word(name)));
        lines.push(format!("install {kind} {} *", word(name)));
    } else {
        lines.push(format!("install {kind} {} {}", word(name), word(version)));
    }
}

fn push_change(lines: &mut Vec<String>, change: &Change) {
    match change {
        Change::AddOsPackage(p) => push_install(lines, "os-package", &p.name, &p.version),
        Change::AddScriptPackage(p) => {
            push_install(lines, package_kind(p.ecosystem), &p.name, &p.version)
        }
        Change::SetRuntime(r) => push_install(lines, "runtime", r.ecosystem.as_str(), &r.version),
        Change::Note(text) => lines.push(format!("note {}", serde_json::to_string(text).expect("strings serialize"))),
    }
}

/// Provisioning steps: base OS pin, OS packages, runtimes, script packages, then the log.
pub fn render_provision_script(spec: &EnvSpec) -> Vec<String> {
    let mut lines = vec![format!(
        "pin os {} {}",
        word(&spec.base_os.name),
        word(&spec.base_os.version)
    )];
    // BTreeSet order is already (name, version) / (ecosystem, ...) order.
    for p in &spec.os_packages {
        push_install(&mut lines, "os-package", &p.name, &p.version);
    }
    for r in &spec.runtimes {
        push_install(&mut lines, "runtime", r.ecosystem.as_str(), &r.version);
    }
    for p in &spec.script_packages {
        push_install(&mut lines, package_kind(p.ecosystem), &p.name, &p.version);
    }
    for m in &spec.modification_log {
        push_change(&mut lines, &m.change);
    }
    lines
}

/// The rendered steps as file text (LF line endings, trailing newline).
pub fn render_to_string(spec: &EnvSpec) -> String {
    let mut out = String::new();
    for line in render_provision_script(spec) {
        writeln!(out, "{line}").expect("writing to a String cannot fail");
    }
    out
}
