//! Experiment entities, manifest comparison and the reproducibility-level calculus.
//!
//! An [`ExperimentManifest`] records every entity that can influence the
//! result of a scripted experiment: who ran it, on which hardware and
//! operating system, with which OS packages, which script (and the functions
//! it defines or calls), which script packages, and which inputs and
//! parameters it consumed.
//!
//! Two manifests are compared entity by entity with [`entity_diff`], giving
//! the set of entities that were *preserved* between the original run and a
//! reproduction. [`classify_levels`] then maps that set, together with
//! whether the script and its functions are accessible, onto the five
//! reproducibility levels. Levels are a set because several can hold at once.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::digest::ContentHash;
use crate::relpath;

/// File name of the canonical manifest inside an experiment directory.
pub const MANIFEST_FILE: &str = "experiment.manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid manifest field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Scripting language, doubling as the package ecosystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    R,
    Python,
}

pub type Ecosystem = Language;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language {0:?} (expected R or Python)")]
pub struct UnknownLanguage(pub String);

impl Language {
    pub const ALL: [Language; 2] = [Language::R, Language::Python];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::R => "R",
            Language::Python => "Python",
        }
    }

    /// Guess from a script file extension (`.R`, `.r`, `.py`).
    pub fn from_path(path: &Path) -> Option<Language> {
        match path.extension()?.to_str()? {
            "R" | "r" => Some(Language::R),
            "py" => Some(Language::Python),
            _ => None,
        }
    }
}

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R" | "r" => Ok(Language::R),
            "Python" | "python" | "py" => Ok(Language::Python),
            other => Err(UnknownLanguage(other.to_owned())),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserInfo {
    pub name: String,
    /// ORCID-style identifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identifier: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HardwareInfo {
    pub cpu_model: String,
    pub logical_cores: u32,
    pub total_memory_bytes: u64,
    pub architecture: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatingSystemInfo {
    pub name: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OsPackage {
    pub name: String,
    pub version: String,
}

impl OsPackage {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        OsPackage {
            name: name.into(),
            version: version.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScriptPackage {
    pub ecosystem: Ecosystem,
    pub name: String,
    pub version: String,
}

impl ScriptPackage {
    pub fn new(ecosystem: Ecosystem, name: impl Into<String>, version: impl Into<String>) -> Self {
        ScriptPackage {
            ecosystem,
            name: name.into(),
            version: version.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScriptInfo {
    pub path: String,
    pub language: Language,
    pub content_hash: ContentHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Defined,
    Called,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub name: String,
    pub kind: FunctionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_package: Option<String>,
}

impl FunctionInfo {
    pub fn defined(name: impl Into<String>) -> Self {
        FunctionInfo {
            name: name.into(),
            kind: FunctionKind::Defined,
            source_package: None,
        }
    }

    pub fn called(name: impl Into<String>, source_package: Option<String>) -> Self {
        FunctionInfo {
            name: name.into(),
            kind: FunctionKind::Called,
            source_package,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactRole {
    Input,
    Output,
    Intermediate,
}

impl ArtifactRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactRole::Input => "input",
            ArtifactRole::Output => "output",
            ArtifactRole::Intermediate => "intermediate",
        }
    }
}

impl FromStr for ArtifactRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "input" => Ok(ArtifactRole::Input),
            "output" => Ok(ArtifactRole::Output),
            "intermediate" => Ok(ArtifactRole::Intermediate),
            other => Err(format!("unknown artifact role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataArtifact {
    pub path: String,
    pub role: ArtifactRole,
    pub content_hash: ContentHash,
    pub size_bytes: u64,
}

impl DataArtifact {
    pub fn validate(&self, field: &str) -> Result<(), ModelError> {
        relpath::check(&self.path).map_err(|e| invalid(format!("{field}.path"), e.reason))
    }
}

/// A named parameter with its canonical string rendering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: String,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Parameter {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// Parameter names must be unique within one set.
pub fn check_parameter_names(params: &BTreeSet<Parameter>, field: &str) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for p in params {
        if p.name.is_empty() {
            return Err(invalid(field, "parameter with empty name"));
        }
        if !seen.insert(p.name.as_str()) {
            return Err(invalid(field, format!("duplicate parameter name {:?}", p.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub user: UserInfo,
    pub hardware: HardwareInfo,
    pub os: OperatingSystemInfo,
    #[serde(default)]
    pub os_packages: BTreeSet<OsPackage>,
    pub script: ScriptInfo,
    #[serde(default)]
    pub functions: BTreeSet<FunctionInfo>,
    #[serde(default)]
    pub script_packages: BTreeSet<ScriptPackage>,
    #[serde(default)]
    pub inputs: BTreeSet<DataArtifact>,
    #[serde(default)]
    pub parameters: BTreeSet<Parameter>,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.user.name.trim().is_empty() {
            return Err(invalid("user.name", "must be non-empty"));
        }
        if self.hardware.logical_cores < 1 {
            return Err(invalid("hardware.logical_cores", "must be at least 1"));
        }
        if self.os.name.trim().is_empty() {
            return Err(invalid("os.name", "must be non-empty"));
        }
        relpath::check(&self.script.path).map_err(|e| invalid("script.path", e.reason))?;
        for f in &self.functions {
            if f.name.is_empty() {
                return Err(invalid("functions", "function with empty name"));
            }
            if f.kind == FunctionKind::Defined && f.source_package.is_some() {
                return Err(invalid(
                    "functions",
                    format!("defined function {:?} must not carry a source package", f.name),
                ));
            }
        }
        for (i, input) in self.inputs.iter().enumerate() {
            let field = format!("inputs[{i}]");
            if input.role != ArtifactRole::Input {
                return Err(invalid(format!("{field}.role"), "must be `input`"));
            }
            input.validate(&field)?;
        }
        check_parameter_names(&self.parameters, "parameters")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let manifest: ExperimentManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_string(self).expect("manifest serialization is infallible")
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn canonical_hash(&self) -> ContentHash {
        ContentHash::of_bytes(self.to_canonical_json().as_bytes())
    }

    fn input_keys(&self) -> BTreeSet<(&str, &ContentHash)> {
        self.inputs
            .iter()
            .map(|a| (a.path.as_str(), &a.content_hash))
            .collect()
    }
}

/// The eight comparable entities. The user is recorded but never compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Hardware,
    Os,
    OsPackages,
    Script,
    Functions,
    ScriptPackages,
    Inputs,
    Parameters,
}

impl EntityKind {
    pub const ALL: [EntityKind; 8] = [
        EntityKind::Hardware,
        EntityKind::Os,
        EntityKind::OsPackages,
        EntityKind::Script,
        EntityKind::Functions,
        EntityKind::ScriptPackages,
        EntityKind::Inputs,
        EntityKind::Parameters,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EntityKind::Hardware => "hardware",
            EntityKind::Os => "operating system",
            EntityKind::OsPackages => "OS packages",
            EntityKind::Script => "script",
            EntityKind::Functions => "functions",
            EntityKind::ScriptPackages => "script packages",
            EntityKind::Inputs => "inputs",
            EntityKind::Parameters => "parameters",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreservationSet {
    pub preserved: BTreeSet<EntityKind>,
}

impl PreservationSet {
    pub fn all() -> Self {
        EntityKind::ALL.into_iter().collect()
    }

    pub fn contains(&self, kind: EntityKind) -> bool {
        self.preserved.contains(&kind)
    }

    pub fn contains_all(&self, kinds: &[EntityKind]) -> bool {
        kinds.iter().all(|k| self.preserved.contains(k))
    }

    pub fn without(mut self, kind: EntityKind) -> Self {
        self.preserved.remove(&kind);
        self
    }
}

impl FromIterator<EntityKind> for PreservationSet {
    fn from_iter<I: IntoIterator<Item = EntityKind>>(iter: I) -> Self {
        PreservationSet {
            preserved: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessFlags {
    pub script_accessible: bool,
    pub functions_accessible: bool,
}

impl AccessFlags {
    pub const FULL: AccessFlags = AccessFlags {
        script_accessible: true,
        functions_accessible: true,
    };
    pub const NONE: AccessFlags = AccessFlags {
        script_accessible: false,
        functions_accessible: false,
    };

    fn has_code(self) -> bool {
        self.script_accessible && self.functions_accessible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReproLevel {
    Repeatable,
    ReRunnable,
    Portable,
    Extendable,
    Modifiable,
}

impl ReproLevel {
    pub const ALL: [ReproLevel; 5] = [
        ReproLevel::Repeatable,
        ReproLevel::ReRunnable,
        ReproLevel::Portable,
        ReproLevel::Extendable,
        ReproLevel::Modifiable,
    ];

    /// Entities that must be preserved for this level to hold.
    pub fn required_entities(self) -> &'static [EntityKind] {
        use EntityKind::*;
        match self {
            ReproLevel::Repeatable => &EntityKind::ALL,
            ReproLevel::ReRunnable => &[Hardware, Os, OsPackages, Script, Functions, ScriptPackages],
            ReproLevel::Portable => &[Inputs, Script, Functions, Parameters, ScriptPackages],
            ReproLevel::Extendable => &[Os, OsPackages, ScriptPackages],
            ReproLevel::Modifiable => &[],
        }
    }

    /// Whether the level additionally needs access to the script and its functions.
    pub fn requires_access(self) -> bool {
        matches!(self, ReproLevel::Extendable | ReproLevel::Modifiable)
    }

    pub fn label(self) -> &'static str {
        match self {
            ReproLevel::Repeatable => "Repeatable",
            ReproLevel::ReRunnable => "Re-runnable",
            ReproLevel::Portable => "Portable",
            ReproLevel::Extendable => "Extendable",
            ReproLevel::Modifiable => "Modifiable",
        }
    }
}

impl fmt::Display for ReproLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which entities compare equal between two manifests.
///
/// Sets compare as sets; inputs compare by `(path, content_hash)`; the
/// script compares by content hash only, so renaming it does not break
/// preservation.
pub fn entity_diff(
    original: &ExperimentManifest,
    candidate: &ExperimentManifest,
) -> Result<PreservationSet, ModelError> {
    original.validate()?;
    candidate.validate()?;
    let (a, b) = (original, candidate);
    Ok(EntityKind::ALL
        .into_iter()
        .filter(|kind| match kind {
            EntityKind::Hardware => a.hardware == b.hardware,
            EntityKind::Os => a.os == b.os,
            EntityKind::OsPackages => a.os_packages == b.os_packages,
            EntityKind::Script => a.script.content_hash == b.script.content_hash,
            EntityKind::Functions => a.functions == b.functions,
            EntityKind::ScriptPackages => a.script_packages == b.script_packages,
            EntityKind::Inputs => a.input_keys() == b.input_keys(),
            EntityKind::Parameters => a.parameters == b.parameters,
        })
        .collect())
}

pub fn classify_levels(preserved: &PreservationSet, access: AccessFlags) -> BTreeSet<ReproLevel> {
    ReproLevel::ALL
        .into_iter()
        .filter(|level| {
            (!level.requires_access() || access.has_code())
                && preserved.contains_all(level.required_entities())
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn hash_of(s: &str) -> ContentHash {
        ContentHash::of_bytes(s.as_bytes())
    }

    pub fn sample_manifest() -> ExperimentManifest {
        ExperimentManifest {
            user: UserInfo {
                name: "Ana".into(),
                identifier: Some("0000-0002-1825-0097".into()),
            },
            hardware: HardwareInfo {
                cpu_model: "Test CPU".into(),
                logical_cores: 4,
                total_memory_bytes: 8 << 30,
                architecture: "x86_64".into(),
            },
            os: OperatingSystemInfo {
                name: "Ubuntu".into(),
                version: "18.04".into(),
                kernel: Some("4.15.0".into()),
            },
            os_packages: [OsPackage::new("R", "3.6.0")].into(),
            script: ScriptInfo {
                path: "setup.R".into(),
                language: Language::R,
                content_hash: hash_of("script"),
            },
            functions: [FunctionInfo::defined("setup")].into(),
            script_packages: [ScriptPackage::new(Language::R, "raster", "2.9")].into(),
            inputs: [DataArtifact {
                path: "data/occ.csv".into(),
                role: ArtifactRole::Input,
                content_hash: hash_of("occ"),
                size_bytes: 3,
            }]
            .into(),
            parameters: [Parameter::new("seed", "512")].into(),
        }
    }

    fn set(kinds: &[EntityKind]) -> PreservationSet {
        kinds.iter().copied().collect()
    }

    fn levels(ls: &[ReproLevel]) -> BTreeSet<ReproLevel> {
        ls.iter().copied().collect()
    }

    #[test]
    fn identical_manifests_preserve_everything() {
        let m = sample_manifest();
        assert_eq!(entity_diff(&m, &m).unwrap(), PreservationSet::all());
    }

    #[test]
    fn os_version_change_only_breaks_os() {
        let a = sample_manifest();
        let mut b = a.clone();
        b.os.version = "20.04".into();
        assert_eq!(
            entity_diff(&a, &b).unwrap(),
            PreservationSet::all().without(EntityKind::Os)
        );
    }

    #[test]
    fn input_hash_change_only_breaks_inputs() {
        let a = sample_manifest();
        let mut b = a.clone();
        let mut input = b.inputs.pop_first().unwrap();
        input.content_hash = hash_of("other");
        b.inputs.insert(input);
        assert_eq!(
            entity_diff(&a, &b).unwrap(),
            PreservationSet::all().without(EntityKind::Inputs)
        );
    }

    #[test]
    fn script_rename_keeps_script_preserved() {
        let a = sample_manifest();
        let mut b = a.clone();
        b.script.path = "renamed/setup.R".into();
        assert!(entity_diff(&a, &b).unwrap().contains(EntityKind::Script));
    }

    #[test]
    fn input_size_is_not_part_of_equality() {
        let a = sample_manifest();
        let mut b = a.clone();
        let mut input = b.inputs.pop_first().unwrap();
        input.size_bytes += 1;
        b.inputs.insert(input);
        assert_eq!(entity_diff(&a, &b).unwrap(), PreservationSet::all());
    }

    #[test]
    fn malformed_manifest_names_the_field() {
        let a = sample_manifest();
        let mut b = a.clone();
        b.hardware.logical_cores = 0;
        let err = entity_diff(&a, &b).unwrap_err();
        assert!(err.to_string().contains("hardware.logical_cores"), "{err}");

        let mut c = a.clone();
        c.functions.insert(FunctionInfo {
            name: "f".into(),
            kind: FunctionKind::Defined,
            source_package: Some("pkg".into()),
        });
        assert!(entity_diff(&a, &c).unwrap_err().to_string().contains("functions"));
    }

    #[test]
    fn level_table_canonical_cases() {
        use EntityKind::*;
        use ReproLevel::*;
        assert_eq!(
            classify_levels(&PreservationSet::all(), AccessFlags::FULL),
            levels(&ReproLevel::ALL)
        );
        assert_eq!(
            classify_levels(
                &PreservationSet::all().without(Inputs).without(Parameters),
                AccessFlags::FULL
            ),
            levels(&[ReRunnable, Extendable, Modifiable])
        );
        assert_eq!(
            classify_levels(
                &set(&[Inputs, Script, Functions, Parameters, ScriptPackages]),
                AccessFlags::FULL
            ),
            levels(&[Portable, Modifiable])
        );
        assert!(classify_levels(&PreservationSet::default(), AccessFlags::NONE).is_empty());
    }

    #[test]
    fn access_gates_extendable_and_modifiable() {
        let partial = AccessFlags {
            script_accessible: true,
            functions_accessible: false,
        };
        let got = classify_levels(&PreservationSet::all(), partial);
        assert_eq!(
            got,
            levels(&[ReproLevel::Repeatable, ReproLevel::ReRunnable, ReproLevel::Portable])
        );
    }

    #[test]
    fn manifest_json_round_trip_is_canonical() {
        let m = sample_manifest();
        let text = m.to_canonical_json();
        let back = ExperimentManifest::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_canonical_json(), text);
        assert!(text.ends_with("}\n"));
        assert!(!text.contains(": "));
    }

    fn preservation_strategy() -> impl Strategy<Value = PreservationSet> {
        proptest::collection::btree_set(proptest::sample::select(EntityKind::ALL.to_vec()), 0..=8)
            .prop_map(|preserved| PreservationSet { preserved })
    }

    fn access_strategy() -> impl Strategy<Value = AccessFlags> {
        (any::<bool>(), any::<bool>()).prop_map(|(s, f)| AccessFlags {
            script_accessible: s,
            functions_accessible: f,
        })
    }

    fn perturbed_manifest() -> impl Strategy<Value = ExperimentManifest> {
        (
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(hw, os, osp, sc, fun, sp, inp, par)| {
                let mut m = sample_manifest();
                if hw {
                    m.hardware.logical_cores = 8;
                }
                if os {
                    m.os.kernel = None;
                }
                if osp {
                    m.os_packages.insert(OsPackage::new("gdal", "2.4"));
                }
                if sc {
                    m.script.content_hash = hash_of("edited");
                }
                if fun {
                    m.functions.insert(FunctionInfo::called("rnorm", Some("stats".into())));
                }
                if sp {
                    m.script_packages = [ScriptPackage::new(Language::R, "raster", "3.0")].into();
                }
                if inp {
                    m.inputs.clear();
                }
                if par {
                    m.parameters = [Parameter::new("seed", "7")].into();
                }
                m
            })
    }

    proptest! {
        #[test]
        fn monotone_in_preserved_set(p1 in preservation_strategy(), extra in preservation_strategy(), a in access_strategy()) {
            let mut p2 = p1.clone();
            p2.preserved.extend(extra.preserved);
            let l1 = classify_levels(&p1, a);
            let l2 = classify_levels(&p2, a);
            prop_assert!(l1.is_subset(&l2));
        }

        #[test]
        fn repeatable_implies_rerunnable_and_portable(p in preservation_strategy(), a in access_strategy()) {
            let l = classify_levels(&p, a);
            if l.contains(&ReproLevel::Repeatable) {
                prop_assert!(l.contains(&ReproLevel::ReRunnable));
                prop_assert!(l.contains(&ReproLevel::Portable));
            }
            if l.contains(&ReproLevel::Extendable) {
                prop_assert!(l.contains(&ReproLevel::Modifiable));
            }
        }

        #[test]
        fn diff_is_reflexive_and_symmetric(a in perturbed_manifest(), b in perturbed_manifest()) {
            prop_assert_eq!(entity_diff(&a, &a).unwrap(), PreservationSet::all());
            prop_assert_eq!(entity_diff(&a, &b).unwrap(), entity_diff(&b, &a).unwrap());
        }
    }
}
