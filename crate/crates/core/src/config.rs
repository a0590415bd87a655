//! Project configuration read from `repro.toml` in the experiment directory.
//!
//! ```toml
//! ignore = ["*.log", "scratch/**"]
//! declared_inputs = ["data/occurrences.csv"]
//! env_allowlist = ["LANG"]
//! parameters.seed = 512
//! interpreters.R = "Rscript"
//!
//! [publish]
//! title = "Niche model for B. atrox"
//! license = "CC-BY-4.0"
//! creators = [{ name = "Ana" }]
//! ```
//!
//! Unknown keys are rejected so typos surface instead of being ignored.
//! Scalar parameter values are rendered to their canonical string form.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::model::{check_parameter_names, Ecosystem, Language, Parameter, UserInfo};

pub const CONFIG_FILE: &str = "repro.toml";
pub const DEFAULT_TOKEN_ENV: &str = "REPRO_DEPOSIT_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// Metadata defaults for publication.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishConfig {
    pub title: Option<String>,
    pub description: Option<String>,
    pub license: Option<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub creators: Vec<UserInfo>,
    pub identifier: Option<String>,
    pub endpoint: Option<String>,
    pub token_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectConfig {
    /// Extra glob patterns excluded from snapshots, on top of the built-in ones.
    pub ignore: Vec<String>,
    pub declared_inputs: Vec<String>,
    pub parameters: BTreeSet<Parameter>,
    pub env_allowlist: Vec<String>,
    /// Interpreter command per ecosystem; the version flag is appended when probing.
    pub interpreters: BTreeMap<Ecosystem, String>,
    pub publish: PublishConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            ignore: Vec::new(),
            declared_inputs: Vec::new(),
            parameters: BTreeSet::new(),
            env_allowlist: Vec::new(),
            interpreters: default_interpreters(),
            publish: PublishConfig::default(),
        }
    }
}

pub fn default_interpreters() -> BTreeMap<Ecosystem, String> {
    [
        (Language::R, "Rscript".to_owned()),
        (Language::Python, "python3".to_owned()),
    ]
    .into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    ignore: Vec<String>,
    #[serde(default)]
    declared_inputs: Vec<String>,
    #[serde(default)]
    parameters: BTreeMap<String, toml::Value>,
    #[serde(default)]
    env_allowlist: Vec<String>,
    #[serde(default)]
    interpreters: BTreeMap<String, String>,
    #[serde(default)]
    publish: PublishConfig,
}

impl ProjectConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            path: origin.to_owned(),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(e.message().to_owned()))?;
        let mut parameters = BTreeSet::new();
        for (name, value) in raw.parameters {
            let rendered = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(n) => n.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Datetime(d) => d.to_string(),
                _ => return Err(invalid(format!("parameter `{name}` must be a scalar"))),
            };
            parameters.insert(Parameter::new(name, rendered));
        }
        check_parameter_names(&parameters, "parameters").map_err(|e| invalid(e.to_string()))?;
        let mut interpreters = default_interpreters();
        for (eco, command) in raw.interpreters {
            let eco: Language = eco.parse().map_err(|e| invalid(format!("interpreters: {e}")))?;
            if command.split_whitespace().next().is_none() {
                return Err(invalid(format!("interpreters.{eco} is empty")));
            }
            interpreters.insert(eco, command);
        }
        if raw.publish.creators.iter().any(|c| c.name.trim().is_empty()) {
            return Err(invalid("publish.creators: every creator needs a name".into()));
        }
        Ok(ProjectConfig {
            ignore: raw.ignore,
            declared_inputs: raw.declared_inputs,
            parameters,
            env_allowlist: raw.env_allowlist,
            interpreters,
            publish: raw.publish,
        })
    }

    /// Read `repro.toml` from `dir`; `None` when the file does not exist.
    pub fn load(dir: &Path) -> Result<Option<Self>, ConfigError> {
        let path = dir.join(CONFIG_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text, &path.display().to_string()).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(ConfigError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}
