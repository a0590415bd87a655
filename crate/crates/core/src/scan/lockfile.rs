//! Pinned script-package lists.
//!
//! Three input dialects are understood:
//!
//! * canonical `repro.lock`: `ecosystem<TAB>name<TAB>version` per line;
//! * requirements style: `name==version` (Python);
//! * packrat style: DCF record blocks with `Package:` and `Version:` fields (R).
//!
//! Output is always canonical: one line per package, sorted, LF-terminated.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use std::sync::LazyLock;

use crate::model::{Ecosystem, Language, ScriptPackage};

pub const LOCKFILE_NAME: &str = "repro.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockfileFormat {
    Canonical,
    RequirementsStyle,
    PackratStyle,
}

impl LockfileFormat {
    /// Infer the dialect from a file name.
    pub fn detect(path: &Path) -> LockfileFormat {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if name.starts_with("requirements") || name.ends_with(".txt") {
            LockfileFormat::RequirementsStyle
        } else if name.starts_with("packrat") || name.ends_with(".dcf") {
            LockfileFormat::PackratStyle
        } else {
            LockfileFormat::Canonical
        }
    }
}

impl FromStr for LockfileFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(LockfileFormat::Canonical),
            "requirements" => Ok(LockfileFormat::RequirementsStyle),
            "packrat" => Ok(LockfileFormat::PackratStyle),
            other => Err(format!(
                "unknown lockfile format {other:?} (expected canonical, requirements or packrat)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LockfileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("conflicting versions for {ecosystem} package {package}: {first} vs {second}")]
    Conflict {
        ecosystem: Ecosystem,
        package: String,
        first: String,
        second: String,
    },
}

fn parse_err(line: usize, message: impl Into<String>) -> LockfileError {
    LockfileError::Parse {
        line,
        message: message.into(),
    }
}

static REQUIREMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([A-Za-z0-9][A-Za-z0-9._-]*)\s*==\s*([^\s;#]+)(?:\s+#.*)?$").unwrap()
});
static DCF_FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z][A-Za-z0-9._-]*):\s*(.*)$").unwrap());

#[derive(Default)]
struct Collector {
    seen: BTreeMap<(Ecosystem, String), String>,
}

impl Collector {
    fn add(&mut self, ecosystem: Ecosystem, name: &str, version: &str) -> Result<(), LockfileError> {
        match self.seen.get(&(ecosystem, name.to_owned())) {
            Some(existing) if existing != version => Err(LockfileError::Conflict {
                ecosystem,
                package: name.to_owned(),
                first: existing.clone(),
                second: version.to_owned(),
            }),
            Some(_) => Ok(()),
            None => {
                self.seen
                    .insert((ecosystem, name.to_owned()), version.to_owned());
                Ok(())
            }
        }
    }

    fn finish(self) -> BTreeSet<ScriptPackage> {
        self.seen
            .into_iter()
            .map(|((eco, name), version)| ScriptPackage::new(eco, name, version))
            .collect()
    }
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

pub fn read_lockfile(
    content: &str,
    format: LockfileFormat,
) -> Result<BTreeSet<ScriptPackage>, LockfileError> {
    match format {
        LockfileFormat::Canonical => read_canonical(content),
        LockfileFormat::RequirementsStyle => read_requirements(content),
        LockfileFormat::PackratStyle => read_packrat(content),
    }
}

fn read_canonical(content: &str) -> Result<BTreeSet<ScriptPackage>, LockfileError> {
    let mut out = Collector::default();
    for (idx, line) in content.lines().enumerate() {
        let n = idx + 1;
        if is_skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [eco, name, version] = fields[..] else {
            return Err(parse_err(n, "expected `ecosystem<TAB>name<TAB>version`"));
        };
        let eco: Language = eco.parse().map_err(|e| parse_err(n, format!("{e}")))?;
        if !valid_token(name) || !valid_token(version) {
            return Err(parse_err(n, "empty or whitespace-containing name/version"));
        }
        out.add(eco, name, version)?;
    }
    Ok(out.finish())
}

fn read_requirements(content: &str) -> Result<BTreeSet<ScriptPackage>, LockfileError> {
    let mut out = Collector::default();
    for (idx, line) in content.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let caps = REQUIREMENT
            .captures(line.trim())
            .ok_or_else(|| parse_err(idx + 1, "expected `name==version`"))?;
        out.add(Language::Python, &caps[1], &caps[2])?;
    }
    Ok(out.finish())
}

fn read_packrat(content: &str) -> Result<BTreeSet<ScriptPackage>, LockfileError> {
    struct Block {
        start: usize,
        package: Option<String>,
        version: Option<String>,
    }

    let mut out = Collector::default();
    let mut block: Option<Block> = None;
    let flush = |block: Option<Block>, out: &mut Collector| -> Result<(), LockfileError> {
        let Some(b) = block else { return Ok(()) };
        match (b.package, b.version) {
            (Some(p), Some(v)) => out.add(Language::R, &p, &v),
            (Some(p), None) => Err(parse_err(b.start, format!("package {p} has no Version field"))),
            // Header blocks (PackratFormat, RVersion, Repos) carry no package.
            (None, _) => Ok(()),
        }
    };

    for (idx, line) in content.lines().enumerate() {
        let n = idx + 1;
        if line.trim().is_empty() {
            flush(block.take(), &mut out)?;
            continue;
        }
        if line.trim_start().starts_with('#') {
            continue;
        }
        if line.starts_with([' ', '\t']) {
            if block.is_none() {
                return Err(parse_err(n, "continuation line outside a record"));
            }
            continue;
        }
        let caps = DCF_FIELD
            .captures(line)
            .ok_or_else(|| parse_err(n, "expected a `Field: value` line"))?;
        let b = block.get_or_insert(Block {
            start: n,
            package: None,
            version: None,
        });
        let value = caps[2].trim().to_owned();
        match &caps[1] {
            "Package" => b.package = Some(value),
            "Version" => b.version = Some(value),
            _ => {}
        }
    }
    flush(block, &mut out)?;
    Ok(out.finish())
}

/// Canonical `repro.lock` text: sorted lines, LF endings.
pub fn write_canonical_lockfile(packages: &BTreeSet<ScriptPackage>) -> String {
    let mut lines: Vec<String> = packages
        .iter()
        .map(|p| format!("{}\t{}\t{}", p.ecosystem, p.name, p.version))
        .collect();
    lines.sort();
    lines.into_iter().map(|l| l + "\n").collect()
}
