//! Publication packages and repository deposit.
//!
//! A publication directory holds exactly four files: the bundle archive, the
//! environment spec, the provenance export and `fair.manifest.json`, which
//! lists the other three with their hashes. Deposit is a generic multipart
//! POST with a bearer token; the default is a dry run that only writes the
//! request it would send.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bundle::{BundleManifest, BUNDLE_FILE};
use crate::canonical;
use crate::digest::ContentHash;
use crate::envspec::{EnvSpec, ENVSPEC_FILE};
use crate::model::UserInfo;
use crate::store::EXPORT_FILE;

pub const FAIR_MANIFEST_FILE: &str = "fair.manifest.json";
pub const PUBLICATION_DIR: &str = "publication";
pub const DEPOSIT_REQUEST_FILE: &str = "deposit.request.json";
pub const REDACTED: &str = "<redacted>";

#[derive(Debug, thiserror::Error)]
pub enum PublishError {
    #[error("invalid publication metadata: {0}")]
    Validation(String),
    #[error("{0}")]
    Usage(String),
    #[error("integrity check failed for {file}: {reason}")]
    Integrity { file: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PublishError + '_ {
    move |source| PublishError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Descriptive metadata supplied by the publisher.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicationMetadata {
    pub title: String,
    pub creators: Vec<UserInfo>,
    pub description: String,
    pub license: String,
    pub keywords: Vec<String>,
    /// Defaults to `urn:repro:<bundle_hash>`.
    pub identifier: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageFile {
    pub name: String,
    pub content_hash: ContentHash,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Findable {
    pub identifier: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accessible {
    pub retrieval_protocol: String,
    pub package_files: Vec<PackageFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatId {
    pub name: String,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interoperable {
    pub format_ids: Vec<FormatId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reusable {
    pub license: String,
    pub provenance_export_name: String,
    pub envspec_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairManifest {
    pub identifier: String,
    pub title: String,
    pub creators: Vec<UserInfo>,
    pub description: String,
    pub license: String,
    pub findable: Findable,
    pub accessible: Accessible,
    pub interoperable: Interoperable,
    pub reusable: Reusable,
}

impl FairManifest {
    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_string(self).expect("manifest serialization is infallible")
    }

    pub fn load(path: &Path) -> Result<Self, PublishError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PublishError::Integrity {
            file: FAIR_MANIFEST_FILE.into(),
            reason: e.to_string(),
        })
    }
}

fn format_of(name: &str) -> &'static str {
    match name {
        BUNDLE_FILE => "application/x-tar",
        ENVSPEC_FILE => "application/json; profile=repro-envspec",
        EXPORT_FILE => "application/json; profile=repro-provenance-export",
        _ => "application/octet-stream",
    }
}

fn validate_metadata(meta: &PublicationMetadata) -> Result<(), PublishError> {
    if meta.license.trim().is_empty() {
        return Err(PublishError::Validation("a license is required for reuse".into()));
    }
    if meta.title.trim().is_empty() {
        return Err(PublishError::Validation("title must be non-empty".into()));
    }
    if meta.creators.is_empty() {
        return Err(PublishError::Validation("at least one creator is required".into()));
    }
    if let Some(c) = meta.creators.iter().find(|c| c.name.trim().is_empty()) {
        return Err(PublishError::Validation(format!("creator with empty name ({c:?})")));
    }
    Ok(())
}

pub fn build_fair_manifest(
    bundle: &BundleManifest,
    envspec: &EnvSpec,
    store_export: &str,
    metadata: &PublicationMetadata,
) -> Result<FairManifest, PublishError> {
    validate_metadata(metadata)?;
    let envspec_bytes = envspec.to_canonical_json();
    let package_files = vec![
        PackageFile {
            name: BUNDLE_FILE.into(),
            content_hash: bundle.bundle_hash.clone(),
            size: bundle.archive_size_bytes,
        },
        PackageFile {
            name: ENVSPEC_FILE.into(),
            content_hash: ContentHash::of_bytes(envspec_bytes.as_bytes()),
            size: envspec_bytes.len() as u64,
        },
        PackageFile {
            name: EXPORT_FILE.into(),
            content_hash: ContentHash::of_bytes(store_export.as_bytes()),
            size: store_export.len() as u64,
        },
    ];
    let identifier = metadata
        .identifier
        .clone()
        .filter(|i| !i.trim().is_empty())
        .unwrap_or_else(|| format!("urn:repro:{}", bundle.bundle_hash));
    Ok(FairManifest {
        identifier: identifier.clone(),
        title: metadata.title.clone(),
        creators: metadata.creators.clone(),
        description: metadata.description.clone(),
        license: metadata.license.clone(),
        findable: Findable {
            identifier,
            keywords: metadata.keywords.clone(),
        },
        interoperable: Interoperable {
            format_ids: package_files
                .iter()
                .map(|f| FormatId {
                    name: f.name.clone(),
                    format: format_of(&f.name).into(),
                })
                .collect(),
        },
        accessible: Accessible {
            retrieval_protocol: "https".into(),
            package_files,
        },
        reusable: Reusable {
            license: metadata.license.clone(),
            provenance_export_name: EXPORT_FILE.into(),
            envspec_name: ENVSPEC_FILE.into(),
        },
    })
}

pub struct PublicationComponents<'a> {
    pub bundle: &'a [u8],
    pub envspec: &'a EnvSpec,
    pub store_export: &'a str,
    pub fair_manifest: &'a FairManifest,
}

/// Re-walk a publication directory. Returns the files that are missing or
/// whose hash disagrees with `fair.manifest.json`; empty means intact.
pub fn verify_publication(dir: &Path) -> Result<Vec<String>, PublishError> {
    let fair = FairManifest::load(&dir.join(FAIR_MANIFEST_FILE))?;
    let mut bad = Vec::new();
    for f in &fair.accessible.package_files {
        match ContentHash::of_file(&dir.join(&f.name)) {
            Ok((hash, size)) if hash == f.content_hash && size == f.size => {}
            _ => bad.push(f.name.clone()),
        }
    }
    Ok(bad)
}

/// Write `publication/` under `workdir` and re-verify it. On any failure the
/// directory is removed.
pub fn assemble_publication(
    workdir: &Path,
    components: &PublicationComponents<'_>,
) -> Result<PathBuf, PublishError> {
    let dir = workdir.join(PUBLICATION_DIR);
    if dir.exists() {
        return Err(PublishError::Usage(format!(
            "{} already exists; refusing to overwrite",
            dir.display()
        )));
    }
    let fair = components.fair_manifest;
    let envspec_text = components.envspec.to_canonical_json();
    let contents: Vec<(&str, &[u8])> = vec![
        (BUNDLE_FILE, components.bundle),
        (ENVSPEC_FILE, envspec_text.as_bytes()),
        (EXPORT_FILE, components.store_export.as_bytes()),
    ];
    let listed: Vec<&str> = fair.accessible.package_files.iter().map(|f| f.name.as_str()).collect();
    let mut expected: Vec<&str> = contents.iter().map(|(n, _)| *n).collect();
    let mut sorted_listed = listed.clone();
    sorted_listed.sort();
    expected.sort();
    if sorted_listed != expected {
        return Err(PublishError::Integrity {
            file: FAIR_MANIFEST_FILE.into(),
            reason: format!("lists {listed:?}, expected each of {expected:?} exactly once"),
        });
    }
    fs::create_dir(&dir).map_err(io_err(&dir))?;
    let result = (|| {
        for (name, bytes) in &contents {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))?;
        }
        let p = dir.join(FAIR_MANIFEST_FILE);
        fs::write(&p, fair.to_canonical_json()).map_err(io_err(&p))?;
        let bad = verify_publication(&dir)?;
        match bad.first() {
            None => Ok(()),
            Some(file) => Err(PublishError::Integrity {
                file: file.clone(),
                reason: "content does not match fair.manifest.json".into(),
            }),
        }
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&dir);
        return Err(e);
    }
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepositStatus {
    DryRun,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositReceipt {
    pub endpoint: String,
    pub status: DepositStatus,
    /// Never set for dry runs.
    pub remote_id: Option<String>,
    pub response_summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub status_text: String,
    pub body: String,
}

/// Sends one HTTP POST. Errors are network-level failures only; any HTTP
/// status, including 4xx and 5xx, is a response.
pub trait Transport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

/// Blocking HTTPS transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(&request.url);
        for (k, v) in &request.headers {
            req = req.set(k, v);
        }
        let response = match req.send_bytes(&request.body) {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(t.to_string()),
        };
        let status = response.status();
        let status_text = response.status_text().to_owned();
        let body = response.into_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse {
            status,
            status_text,
            body,
        })
    }
}

/// The request as recorded for a dry run: everything except the body bytes
/// and the token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositRequestRecord {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub parts: Vec<MultipartPart>,
    pub body_size: u64,
    pub body_sha256: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipartPart {
    pub field: String,
    pub filename: String,
    pub content_type: String,
    pub content_hash: ContentHash,
    pub size: u64,
}

fn check_endpoint(endpoint: &str) -> Result<url::Url, PublishError> {
    let url = url::Url::parse(endpoint).map_err(|e| PublishError::Config(format!("endpoint {endpoint:?}: {e}")))?;
    let loopback = match url.host() {
        Some(url::Host::Domain(d)) => d == "localhost",
        Some(url::Host::Ipv4(ip)) => ip.is_loopback(),
        Some(url::Host::Ipv6(ip)) => ip.is_loopback(),
        None => false,
    };
    match url.scheme() {
        "https" => Ok(url),
        "http" if loopback => Ok(url),
        other => Err(PublishError::Config(format!(
            "endpoint must use https (http is accepted for loopback only), got {other}://"
        ))),
    }
}

/// Deterministic multipart body: the FAIR manifest first, then package files in listed order.
fn multipart(dir: &Path, fair_text: &str, fair: &FairManifest) -> Result<(String, Vec<u8>, Vec<MultipartPart>), PublishError> {
    let boundary = format!("repro-{}", ContentHash::of_bytes(fair_text.as_bytes()).short(32));
    let mut parts = vec![(
        "metadata".to_owned(),
        FAIR_MANIFEST_FILE.to_owned(),
        "application/json".to_owned(),
        fair_text.as_bytes().to_vec(),
    )];
    for f in &fair.accessible.package_files {
        let path = dir.join(&f.name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if ContentHash::of_bytes(&bytes) != f.content_hash {
            return Err(PublishError::Integrity {
                file: f.name.clone(),
                reason: "content does not match fair.manifest.json".into(),
            });
        }
        parts.push(("file".into(), f.name.clone(), format_of(&f.name).into(), bytes));
    }
    let mut body = Vec::new();
    let mut records = Vec::new();
    for (field, filename, content_type, bytes) in parts {
        let mut head = String::new();
        let _ = write!(
            head,
            "--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"{filename}\"\r\nContent-Type: {content_type}\r\n\r\n"
        );
        body.extend_from_slice(head.as_bytes());
        body.extend_from_slice(&bytes);
        body.extend_from_slice(b"\r\n");
        records.push(MultipartPart {
            field,
            filename,
            content_type,
            content_hash: ContentHash::of_bytes(&bytes),
            size: bytes.len() as u64,
        });
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Ok((boundary, body, records))
}

fn remote_id(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    match value.get("id")? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Deposit an assembled publication.
///
/// A dry run validates everything, writes `deposit.request.json` next to the
/// publication directory, and never touches `transport`.
pub fn deposit(
    publication: &Path,
    endpoint: &str,
    token_env: &str,
    dry_run: bool,
    transport: &dyn Transport,
) -> Result<DepositReceipt, PublishError> {
    let url = check_endpoint(endpoint)?;
    let token = if dry_run {
        None
    } else {
        match std::env::var(token_env) {
            Ok(t) if !t.is_empty() => Some(t),
            _ => {
                return Err(PublishError::Config(format!(
                    "environment variable {token_env} is not set; it must hold the deposit token"
                )))
            }
        }
    };
    let fair_path = publication.join(FAIR_MANIFEST_FILE);
    let fair_text = fs::read_to_string(&fair_path).map_err(io_err(&fair_path))?;
    let fair: FairManifest = serde_json::from_str(&fair_text).map_err(|e| PublishError::Integrity {
        file: FAIR_MANIFEST_FILE.into(),
        reason: e.to_string(),
    })?;
    let (boundary, body, parts) = multipart(publication, &fair_text, &fair)?;
    let headers = |auth: &str| {
        vec![
            ("Authorization".to_owned(), format!("Bearer {auth}")),
            ("Content-Type".to_owned(), format!("multipart/form-data; boundary={boundary}")),
            ("Accept".to_owned(), "application/json".to_owned()),
        ]
    };

    let Some(token) = token else {
        let record = DepositRequestRecord {
            method: "POST".into(),
            url: url.to_string(),
            headers: headers(REDACTED),
            parts,
            body_size: body.len() as u64,
            body_sha256: ContentHash::of_bytes(&body),
        };
        let parent = publication.parent().unwrap_or(Path::new("."));
        let request_path = parent.join(DEPOSIT_REQUEST_FILE);
        canonical::write_canonical_file(&request_path, &record).map_err(io_err(&request_path))?;
        return Ok(DepositReceipt {
            endpoint: url.to_string(),
            status: DepositStatus::DryRun,
            remote_id: None,
            response_summary: format!("dry run; request written to {}", request_path.display()),
        });
    };

    let response = transport
        .post(&HttpRequest {
            url: url.to_string(),
            headers: headers(&token),
            body,
        })
        .map_err(PublishError::Transport)?;
    let status_line = format!("{} {}", response.status, response.status_text);
    if (200..300).contains(&response.status) {
        let id = remote_id(&response.body);
        let summary = match &id {
            Some(_) => status_line,
            None => format!("{status_line}; response carried no `id`"),
        };
        Ok(DepositReceipt {
            endpoint: url.to_string(),
            status: DepositStatus::Accepted,
            remote_id: id,
            response_summary: summary,
        })
    } else {
        Ok(DepositReceipt {
            endpoint: url.to_string(),
            status: DepositStatus::Rejected,
            remote_id: None,
            response_summary: status_line,
        })
    }
}
