use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize};

use crate::digest::ContentHash;
use crate::model::{
    check_parameter_names, ArtifactRole, DataArtifact, ExperimentManifest, HardwareInfo,
    ModelError, OperatingSystemInfo, Parameter, ScriptInfo, ScriptPackage,
};
use crate::timestamp::Timestamp;

const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

/// Lexicographically sortable trial identifier in ULID form
/// (26 Crockford base32 characters: 48-bit millisecond time, 80 random bits).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TrialId(String);

impl TrialId {
    pub fn generate() -> Self {
        let millis = chrono::Utc::now().timestamp_millis().max(0) as u128;
        let mut random = [0u8; 10];
        rand::thread_rng().fill_bytes(&mut random);
        let mut value = (millis & ((1 << 48) - 1)) << 80;
        for (i, b) in random.iter().enumerate() {
            value |= (*b as u128) << (8 * (9 - i));
        }
        Self::encode(value)
    }

    fn encode(mut value: u128) -> Self {
        let mut out = [0u8; 26];
        for slot in out.iter_mut().rev() {
            *slot = CROCKFORD[(value & 31) as usize];
            value >>= 5;
        }
        TrialId(String::from_utf8(out.to_vec()).expect("alphabet is ASCII"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid trial id {0:?}: expected 26 Crockford base32 characters")]
pub struct InvalidTrialId(pub String);

impl FromStr for TrialId {
    type Err = InvalidTrialId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 26
            && s.bytes().all(|b| CROCKFORD.contains(&b))
            // 26 * 5 = 130 bits; the top character may only carry 3.
            && s.as_bytes()[0] <= b'7';
        if ok {
            Ok(TrialId(s.to_owned()))
        } else {
            Err(InvalidTrialId(s.to_owned()))
        }
    }
}

impl<'de> Deserialize<'de> for TrialId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumeEdge {
    pub artifact: DataArtifact,
    #[serde(default)]
    pub parameters: BTreeSet<Parameter>,
}

/// One captured execution of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: TrialId,
    pub manifest: ExperimentManifest,
    pub command: Vec<String>,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    pub exit_code: i32,
    #[serde(default)]
    pub consume_edges: Vec<ConsumeEdge>,
    #[serde(default)]
    pub produce_edges: Vec<DataArtifact>,
    /// Allow-listed environment variables seen by the run.
    #[serde(default)]
    pub env_vars: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: String,
}

impl TrialRecord {
    /// Check the record before it touches the store. The error names the entity.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let model = |e: ModelError| match e {
            ModelError::Invalid { field, reason } => (field, reason),
            other => ("manifest".to_owned(), other.to_string()),
        };
        self.manifest.validate().map_err(model)?;
        let m = &self.manifest;
        if m.user.identifier.as_deref() == Some("") {
            return Err(("user.identifier".into(), "must be non-empty when present".into()));
        }
        if m.os.kernel.as_deref() == Some("") {
            return Err(("os.kernel".into(), "must be non-empty when present".into()));
        }
        if m.functions.iter().any(|f| f.source_package.as_deref() == Some("")) {
            return Err(("functions".into(), "empty source package".into()));
        }
        if self.finished_at < self.started_at {
            return Err(("trial".into(), "finished_at precedes started_at".into()));
        }
        for (i, edge) in self.consume_edges.iter().enumerate() {
            let field = format!("consume_edges[{i}]");
            edge.artifact.validate(&field).map_err(model)?;
            check_parameter_names(&edge.parameters, &format!("{field}.parameters")).map_err(model)?;
        }
        let mut produced = BTreeSet::new();
        for (i, artifact) in self.produce_edges.iter().enumerate() {
            let field = format!("produce_edges[{i}]");
            artifact.validate(&field).map_err(model)?;
            if artifact.role == ArtifactRole::Input {
                return Err((format!("{field}.role"), "must be output or intermediate".into()));
            }
            if !produced.insert(artifact.path.as_str()) {
                return Err((field, format!("duplicate produced path {:?}", artifact.path)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: TrialId,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    pub exit_code: i32,
    pub command: Vec<String>,
    pub script_path: String,
    pub script_hash: ContentHash,
    pub consumed: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialFilter {
    pub script_hash: Option<ContentHash>,
    pub since: Option<Timestamp>,
    pub until: Option<Timestamp>,
}

impl TrialFilter {
    /// Build a filter from command-line text, rejecting malformed values.
    pub fn parse(
        script_hash: Option<&str>,
        since: Option<&str>,
        until: Option<&str>,
    ) -> Result<Self, String> {
        let filter = TrialFilter {
            script_hash: script_hash
                .map(|h| h.parse().map_err(|e| format!("{e}")))
                .transpose()?,
            since: since.map(|s| s.parse().map_err(|e| format!("{e}"))).transpose()?,
            until: until.map(|s| s.parse().map_err(|e| format!("{e}"))).transpose()?,
        };
        filter.check()?;
        Ok(filter)
    }

    pub fn check(&self) -> Result<(), String> {
        if let (Some(since), Some(until)) = (self.since, self.until) {
            if since > until {
                return Err(format!("filter since ({since}) is after until ({until})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEnvironment {
    pub os: OperatingSystemInfo,
    pub hardware: HardwareInfo,
    pub script_packages: BTreeSet<ScriptPackage>,
}

/// How one output came to be: the trial, its script, what it consumed, and where it ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageChain {
    pub output: DataArtifact,
    pub trial_id: TrialId,
    pub started_at: Timestamp,
    pub command: Vec<String>,
    pub script: ScriptInfo,
    pub consumed: Vec<ConsumeEdge>,
    pub environment: LineageEnvironment,
}
