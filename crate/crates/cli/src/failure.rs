//! Error-to-exit-code mapping. The codes are part of the interface and must
//! not change between releases.

use std::fmt;

use repro_core::bundle::BundleError;
use repro_core::capture::CaptureError;
use repro_core::config::ConfigError;
use repro_core::envspec::EnvSpecError;
use repro_core::model::ModelError;
use repro_core::publish::PublishError;
use repro_core::scan::LockfileError;
use repro_core::store::StoreError;
use repro_core::verify::VerifyError;

pub const OK: u8 = 0;
/// Verification finished and the verdict is NotRepeatable.
pub const MISMATCH: u8 = 1;
pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
/// Scanner or lockfile parse failure.
pub const PARSE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: USAGE, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure { code: IO, message: message.into() }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Failure { code: PARSE, message: message.into() }
    }

    fn with(code: u8, err: impl fmt::Display) -> Self {
        Failure { code, message: err.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io { .. } => IO,
            ModelError::Invalid { .. } | ModelError::Json(_) => USAGE,
        };
        Failure::with(code, e)
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::Io { .. } | StoreError::Corrupt(_) | StoreError::Sql(_) => IO,
            StoreError::Version { .. }
            | StoreError::Conflict(_)
            | StoreError::Validation { .. }
            | StoreError::NotFound { .. }
            | StoreError::Usage(_)
            | StoreError::Import(_) => USAGE,
        };
        Failure::with(code, e)
    }
}

impl From<CaptureError> for Failure {
    fn from(e: CaptureError) -> Self {
        match e {
            CaptureError::Manifest(m) => m.into(),
            CaptureError::Lockfile { .. } => Failure::with(PARSE, e),
            CaptureError::Config(_) | CaptureError::MissingInput(_) | CaptureError::EmptyCommand => {
                Failure::with(USAGE, e)
            }
            CaptureError::Io { .. } | CaptureError::Spawn { .. } | CaptureError::Store { .. } => {
                Failure::with(IO, e)
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => IO,
            ConfigError::Invalid { .. } => USAGE,
        };
        Failure::with(code, e)
    }
}

impl From<EnvSpecError> for Failure {
    fn from(e: EnvSpecError) -> Self {
        let code = match e {
            EnvSpecError::Io { .. } => IO,
            EnvSpecError::Consistency { .. } | EnvSpecError::Invalid(_) => USAGE,
        };
        Failure::with(code, e)
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        let code = match e {
            BundleError::Io { .. } | BundleError::Integrity { .. } => IO,
            BundleError::Usage(_) => USAGE,
        };
        Failure::with(code, e)
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        Failure::with(USAGE, e)
    }
}

impl From<PublishError> for Failure {
    fn from(e: PublishError) -> Self {
        let code = match e {
            PublishError::Validation(_) | PublishError::Usage(_) | PublishError::Config(_) => USAGE,
            PublishError::Integrity { .. } | PublishError::Io { .. } | PublishError::Transport(_) => IO,
        };
        Failure::with(code, e)
    }
}

impl From<LockfileError> for Failure {
    fn from(e: LockfileError) -> Self {
        Failure::with(PARSE, e)
    }
}
