//! Embedded relational provenance store.
//!
//! One SQLite file (`provenance.db`) per experiment directory. Writers take an
//! exclusive advisory lock on `provenance.db.lock` for the duration of each
//! write transaction; readers never lock and rely on WAL snapshots.
//!
//! Every write is a single transaction: a trial that fails validation or a
//! constraint leaves all row counts unchanged.

pub mod schema;
pub mod trial;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rusqlite::types::{Value as SqlValue, ValueRef};
use rusqlite::{params, Connection, OptionalExtension, Transaction, TransactionBehavior};
use serde_json::{Map, Value};

use crate::canonical;
use crate::digest::ContentHash;
use crate::model::{
    ArtifactRole, DataArtifact, ExperimentManifest, FunctionInfo, FunctionKind, HardwareInfo,
    Language, OperatingSystemInfo, OsPackage, Parameter, ScriptInfo, ScriptPackage, UserInfo,
};
use crate::relpath;
use crate::timestamp::Timestamp;

pub use schema::{ENTITY_TABLES, SCHEMA_VERSION};
pub use trial::{
    ConsumeEdge, InvalidTrialId, LineageChain, LineageEnvironment, TrialFilter, TrialId,
    TrialRecord, TrialSummary,
};

pub const STORE_FILE: &str = "provenance.db";
pub const LOCK_FILE: &str = "provenance.db.lock";
pub const EXPORT_FILE: &str = "provenance.export.json";
pub const EXPORT_FORMAT: &str = "repro-provenance-export";

const BUSY_TIMEOUT: Duration = Duration::from_secs(10);
const MAX_NEAR_MISSES: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("store {path} has schema version {found}, this build expects {expected}")]
    Version {
        path: PathBuf,
        found: i64,
        expected: i64,
    },
    #[error("trial {0} is already recorded")]
    Conflict(TrialId),
    #[error("invalid {entity}: {reason}")]
    Validation { entity: String, reason: String },
    #[error("{what} not found{}", near_miss_suffix(.near_misses))]
    NotFound {
        what: String,
        near_misses: Vec<String>,
    },
    #[error("{0}")]
    Usage(String),
    #[error("cannot import: {0}")]
    Import(String),
    #[error("store corrupt: {0}")]
    Corrupt(String),
    #[error("database error: {0}")]
    Sql(#[from] rusqlite::Error),
}

fn near_miss_suffix(near: &[String]) -> String {
    if near.is_empty() {
        String::new()
    } else {
        format!("; did you mean: {}", near.join(", "))
    }
}

/// Open connection to one store file.
pub struct StoreHandle {
    conn: Connection,
    path: PathBuf,
    lock_path: PathBuf,
    lock: Arc<Mutex<LockState>>,
}

#[derive(Default)]
struct LockState {
    depth: usize,
    file: Option<File>,
}

/// Exclusive advisory lock on the store. Reentrant within one handle, so a
/// caller holding it (a capture) can still record through the same handle.
pub struct StoreLock {
    state: Arc<Mutex<LockState>>,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        st.depth -= 1;
        if st.depth == 0 {
            if let Some(file) = st.file.take() {
                let _ = file.unlock();
            }
        }
    }
}

/// Resolve a store location: a directory means `<dir>/provenance.db`.
pub fn store_path(location: &Path) -> PathBuf {
    if location.is_dir() {
        location.join(STORE_FILE)
    } else {
        location.to_path_buf()
    }
}

fn lock_path_for(db: &Path) -> PathBuf {
    let mut name = db.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".lock");
    db.with_file_name(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Create the store (or open it if it already has the current schema).
pub fn init_store(location: &Path) -> Result<StoreHandle, StoreError> {
    let path = store_path(location);
    let lock_path = lock_path_for(&path);
    // Creating the lock file first surfaces an unwritable location as plain I/O.
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(&lock_path)
        .map_err(io_err(&lock_path))?;
    let handle = StoreHandle::connect(path, lock_path)?;
    {
        let _lock = handle.write_lock()?;
        let version = handle.user_version()?;
        if version == 0 {
            if !handle.table_names()?.is_empty() {
                return Err(StoreError::Version {
                    path: handle.path.clone(),
                    found: 0,
                    expected: SCHEMA_VERSION,
                });
            }
            let tx = handle.conn.unchecked_transaction()?;
            tx.execute_batch(schema::DDL)?;
            tx.pragma_update(None, "user_version", SCHEMA_VERSION)?;
            tx.commit()?;
        }
    }
    handle.check_schema()?;
    Ok(handle)
}

/// Open an existing store without creating anything.
pub fn open_store(location: &Path) -> Result<StoreHandle, StoreError> {
    let path = store_path(location);
    if !path.is_file() {
        return Err(StoreError::NotFound {
            what: format!("provenance store {}", path.display()),
            near_misses: Vec::new(),
        });
    }
    let lock_path = lock_path_for(&path);
    let handle = StoreHandle::connect(path, lock_path)?;
    handle.check_schema()?;
    Ok(handle)
}

impl StoreHandle {
    fn connect(path: PathBuf, lock_path: PathBuf) -> Result<Self, StoreError> {
        let conn = Connection::open(&path).map_err(|e| match e {
            rusqlite::Error::SqliteFailure(_, _) if !path.parent().is_some_and(|p| p.as_os_str().is_empty() || p.is_dir()) => {
                StoreError::Io {
                    path: path.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory missing"),
                }
            }
            other => StoreError::Sql(other),
        })?;
        conn.busy_timeout(BUSY_TIMEOUT)?;
        conn.pragma_update(None, "foreign_keys", true)?;
        let _: String = conn.query_row("PRAGMA journal_mode = WAL", [], |r| r.get(0))?;
        Ok(StoreHandle {
            conn,
            path,
            lock_path,
            lock: Arc::default(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Take the single-writer lock, blocking until other processes release it.
    pub fn write_lock(&self) -> Result<StoreLock, StoreError> {
        let mut st = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        if st.depth == 0 {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.lock_path)
                .map_err(io_err(&self.lock_path))?;
            file.lock().map_err(io_err(&self.lock_path))?;
            st.file = Some(file);
        }
        st.depth += 1;
        Ok(StoreLock {
            state: Arc::clone(&self.lock),
        })
    }

    fn write_tx(&mut self) -> Result<(StoreLock, Transaction<'_>), StoreError> {
        let lock = self.write_lock()?;
        let tx = self.conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        Ok((lock, tx))
    }

    fn user_version(&self) -> Result<i64, StoreError> {
        Ok(self.conn.pragma_query_value(None, "user_version", |r| r.get(0))?)
    }

    fn check_schema(&self) -> Result<(), StoreError> {
        let found = self.user_version()?;
        if found != SCHEMA_VERSION {
            return Err(StoreError::Version {
                path: self.path.clone(),
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let present: BTreeSet<String> = self.table_names()?.into_iter().collect();
        for table in schema::TABLES {
            if !present.contains(table.name) {
                return Err(StoreError::Corrupt(format!("table `{}` is missing", table.name)));
            }
        }
        Ok(())
    }

    /// Names of all tables in the store, sorted.
    pub fn table_names(&self) -> Result<Vec<String>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
        )?;
        let names = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(names)
    }

    pub fn row_count(&self, table: &str) -> Result<u64, StoreError> {
        if !schema::TABLES.iter().any(|t| t.name == table) {
            return Err(StoreError::Usage(format!("unknown table `{table}`")));
        }
        let n: i64 = self
            .conn
            .query_row(&format!("SELECT count(*) FROM \"{table}\""), [], |r| r.get(0))?;
        Ok(n as u64)
    }

    /// Rows violating a foreign key, as `table:rowid -> parent`. Empty when consistent.
    pub fn foreign_key_violations(&self) -> Result<Vec<String>, StoreError> {
        let mut stmt = self.conn.prepare("PRAGMA foreign_key_check")?;
        let rows = stmt
            .query_map([], |r| {
                let table: String = r.get(0)?;
                let rowid: Option<i64> = r.get(1)?;
                let parent: String = r.get(2)?;
                Ok(format!("{table}:{} -> {parent}", rowid.unwrap_or(-1)))
            })?
            .collect::<Result<_, _>>()?;
        Ok(rows)
    }

    /// Insert a trial and everything it references, atomically.
    pub fn record_trial(&mut self, trial: &TrialRecord) -> Result<TrialId, StoreError> {
        trial
            .validate()
            .map_err(|(entity, reason)| StoreError::Validation { entity, reason })?;
        let (_lock, tx) = self.write_tx()?;
        let exists: Option<i64> = tx
            .query_row(
                "SELECT 1 FROM trial WHERE trial_id = ?1",
                [trial.trial_id.as_str()],
                |r| r.get(0),
            )
            .optional()?;
        if exists.is_some() {
            return Err(StoreError::Conflict(trial.trial_id.clone()));
        }
        insert_trial(&tx, trial)?;
        tx.commit()?;
        Ok(trial.trial_id.clone())
    }

    /// Load one trial back into its full record form.
    pub fn load_trial(&self, id: &TrialId) -> Result<TrialRecord, StoreError> {
        load_trial(&self.conn, id)?.ok_or_else(|| StoreError::NotFound {
            what: format!("trial {id}"),
            near_misses: Vec::new(),
        })
    }

    /// Every trial matching the filter, newest first (ties broken by id, descending).
    pub fn list_trials(&self, filter: &TrialFilter) -> Result<Vec<TrialRecord>, StoreError> {
        filter.check().map_err(StoreError::Usage)?;
        let mut stmt = self.conn.prepare(
            "SELECT t.trial_id FROM trial t JOIN script s ON s.id = t.script_id
             WHERE (?1 IS NULL OR s.content_hash = ?1)
               AND (?2 IS NULL OR t.started_at >= ?2)
               AND (?3 IS NULL OR t.started_at <= ?3)
             ORDER BY t.started_at DESC, t.trial_id DESC",
        )?;
        let ids: Vec<String> = stmt
            .query_map(
                params![
                    filter.script_hash.as_ref().map(|h| h.as_str().to_owned()),
                    filter.since.map(|t| t.to_string()),
                    filter.until.map(|t| t.to_string()),
                ],
                |r| r.get(0),
            )?
            .collect::<Result<_, _>>()?;
        ids.iter()
            .map(|id| self.load_trial(&parse_trial_id(id)?))
            .collect()
    }

    /// The chain that produced `output_path`, from `trial_id` or the most recent producing trial.
    pub fn lineage(
        &self,
        output_path: &str,
        trial_id: Option<&TrialId>,
    ) -> Result<LineageChain, StoreError> {
        let path = relpath::normalize(output_path).map_err(|e| StoreError::Usage(e.to_string()))?;
        if let Some(id) = trial_id {
            self.load_trial(id)?;
        }
        let found: Option<(String, i64)> = self
            .conn
            .query_row(
                "SELECT t.trial_id, p.ordinal FROM produce p
                 JOIN trial t ON t.trial_id = p.trial_id
                 JOIN data_artifact a ON a.id = p.artifact_id
                 WHERE a.path = ?1 AND (?2 IS NULL OR t.trial_id = ?2)
                 ORDER BY t.started_at DESC, t.trial_id DESC LIMIT 1",
                params![path, trial_id.map(|t| t.as_str().to_owned())],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        let Some((id, ordinal)) = found else {
            let what = match trial_id {
                Some(id) => format!("output {path:?} in trial {id}"),
                None => format!("output {path:?}"),
            };
            return Err(StoreError::NotFound {
                what,
                near_misses: self.near_miss_outputs(&path)?,
            });
        };
        let record = self.load_trial(&parse_trial_id(&id)?)?;
        let output = record
            .produce_edges
            .get(ordinal as usize)
            .cloned()
            .ok_or_else(|| StoreError::Corrupt(format!("produce ordinal {ordinal} of trial {id}")))?;
        let m = record.manifest;
        Ok(LineageChain {
            output,
            trial_id: record.trial_id,
            started_at: record.started_at,
            command: record.command,
            script: m.script,
            consumed: record.consume_edges,
            environment: LineageEnvironment {
                os: m.os,
                hardware: m.hardware,
                script_packages: m.script_packages,
            },
        })
    }

    fn near_miss_outputs(&self, path: &str) -> Result<Vec<String>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT DISTINCT a.path FROM produce p JOIN data_artifact a ON a.id = p.artifact_id ORDER BY a.path",
        )?;
        let known: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(near_misses(path, &known))
    }

    /// Canonical JSON dump of every table, rows sorted by primary key.
    pub fn export(&self) -> Result<String, StoreError> {
        let mut tables = Map::new();
        for table in schema::TABLES {
            let sql = format!(
                "SELECT {} FROM \"{}\" ORDER BY {}",
                table.columns.join(", "),
                table.name,
                table.primary_key.join(", ")
            );
            let mut stmt = self.conn.prepare(&sql)?;
            let mut rows = stmt.query([])?;
            let mut out = Vec::new();
            while let Some(row) = rows.next()? {
                let mut obj = Map::new();
                for (i, col) in table.columns.iter().enumerate() {
                    let value = match row.get_ref(i)? {
                        ValueRef::Integer(n) => Value::from(n),
                        ValueRef::Text(t) => Value::from(String::from_utf8_lossy(t).into_owned()),
                        other => {
                            return Err(StoreError::Corrupt(format!(
                                "{}.{col} holds unexpected {:?}",
                                table.name,
                                other.data_type()
                            )))
                        }
                    };
                    obj.insert((*col).to_owned(), value);
                }
                out.push(Value::Object(obj));
            }
            tables.insert(table.name.to_owned(), Value::Array(out));
        }
        let dump = serde_json::json!({
            "format": EXPORT_FORMAT,
            "schema_version": SCHEMA_VERSION,
            "tables": tables,
        });
        Ok(canonical::to_canonical_string(&dump).expect("JSON values serialize"))
    }

    /// Write the export to `path` atomically.
    pub fn export_to(&self, path: &Path) -> Result<String, StoreError> {
        let text = self.export()?;
        canonical::write_atomic(path, text.as_bytes()).map_err(io_err(path))?;
        Ok(text)
    }

    /// Load a dump into this store, which must be empty. Row ids are preserved.
    pub fn import(&mut self, dump: &str) -> Result<(), StoreError> {
        let value: Value =
            serde_json::from_str(dump).map_err(|e| StoreError::Import(format!("not JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| StoreError::Import("top level must be an object".into()))?;
        if obj.get("format").and_then(Value::as_str) != Some(EXPORT_FORMAT) {
            return Err(StoreError::Import(format!("`format` must be {EXPORT_FORMAT:?}")));
        }
        let version = obj.get("schema_version").and_then(Value::as_i64);
        if version != Some(SCHEMA_VERSION) {
            return Err(StoreError::Version {
                path: self.path.clone(),
                found: version.unwrap_or(-1),
                expected: SCHEMA_VERSION,
            });
        }
        let tables = obj
            .get("tables")
            .and_then(Value::as_object)
            .ok_or_else(|| StoreError::Import("`tables` must be an object".into()))?;
        if let Some(extra) = tables.keys().find(|k| !schema::TABLES.iter().any(|t| t.name == *k)) {
            return Err(StoreError::Import(format!("unknown table `{extra}`")));
        }
        for table in schema::TABLES {
            if self.row_count(table.name)? != 0 {
                return Err(StoreError::Import(format!(
                    "target store is not empty (table `{}` has rows)",
                    table.name
                )));
            }
        }
        let (_lock, tx) = self.write_tx()?;
        for table in schema::TABLES {
            let rows = match tables.get(table.name) {
                None => continue,
                Some(Value::Array(rows)) => rows,
                Some(_) => return Err(StoreError::Import(format!("`{}` must be an array", table.name))),
            };
            let placeholders: Vec<String> = (1..=table.columns.len()).map(|i| format!("?{i}")).collect();
            let sql = format!(
                "INSERT INTO \"{}\" ({}) VALUES ({})",
                table.name,
                table.columns.join(", "),
                placeholders.join(", ")
            );
            let mut stmt = tx.prepare(&sql)?;
            for (i, row) in rows.iter().enumerate() {
                let row = row.as_object().ok_or_else(|| {
                    StoreError::Import(format!("{}[{i}] must be an object", table.name))
                })?;
                if row.len() != table.columns.len() {
                    return Err(StoreError::Import(format!(
                        "{}[{i}] must have exactly the columns {:?}",
                        table.name, table.columns
                    )));
                }
                let mut values = Vec::with_capacity(table.columns.len());
                for col in table.columns {
                    let v = match row.get(*col) {
                        Some(Value::String(s)) => SqlValue::Text(s.clone()),
                        Some(Value::Number(n)) if n.is_i64() => SqlValue::Integer(n.as_i64().unwrap_or_default()),
                        _ => {
                            return Err(StoreError::Import(format!(
                                "{}[{i}].{col} must be a string or integer",
                                table.name
                            )))
                        }
                    };
                    values.push(v);
                }
                stmt.execute(rusqlite::params_from_iter(values)).map_err(|e| {
                    StoreError::Import(format!("{}[{i}]: {e}", table.name))
                })?;
            }
        }
        let violations: i64 =
            tx.query_row("SELECT count(*) FROM pragma_foreign_key_check", [], |r| r.get(0))?;
        if violations != 0 {
            return Err(StoreError::Import(format!("{violations} rows break referential integrity")));
        }
        tx.commit()?;
        Ok(())
    }
}

fn parse_trial_id(id: &str) -> Result<TrialId, StoreError> {
    id.parse()
        .map_err(|e: InvalidTrialId| StoreError::Corrupt(e.to_string()))
}

/// Paths sharing the basename, or within edit distance max(2, len/3), closest first.
pub fn near_misses(wanted: &str, known: &[String]) -> Vec<String> {
    let base = |p: &str| p.rsplit('/').next().unwrap_or(p).to_owned();
    let wanted_base = base(wanted);
    let limit = (wanted.chars().count() / 3).max(2);
    let mut scored: Vec<(usize, &String)> = known
        .iter()
        .filter_map(|k| {
            let d = strsim::levenshtein(wanted, k);
            (d <= limit || base(k) == wanted_base).then_some((d, k))
        })
        .collect();
    scored.sort();
    scored.into_iter().take(MAX_NEAR_MISSES).map(|(_, k)| k.clone()).collect()
}

fn opt(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or("")
}

fn from_opt(s: String) -> Option<String> {
    (!s.is_empty()).then_some(s)
}

fn constraint(entity: &str) -> impl FnOnce(rusqlite::Error) -> StoreError + '_ {
    move |e| match e {
        rusqlite::Error::SqliteFailure(ref f, ref msg)
            if f.code == rusqlite::ErrorCode::ConstraintViolation =>
        {
            StoreError::Validation {
                entity: entity.to_owned(),
                reason: msg.clone().unwrap_or_else(|| e.to_string()),
            }
        }
        other => StoreError::Sql(other),
    }
}

/// Insert-or-find by natural key; returns the row id.
fn upsert(tx: &Transaction<'_>, table: &str, cols: &[&str], values: &[SqlValue]) -> Result<i64, StoreError> {
    let placeholders: Vec<String> = (1..=cols.len()).map(|i| format!("?{i}")).collect();
    tx.execute(
        &format!(
            "INSERT OR IGNORE INTO \"{table}\" ({}) VALUES ({})",
            cols.join(", "),
            placeholders.join(", ")
        ),
        rusqlite::params_from_iter(values.iter()),
    )
    .map_err(constraint(table))?;
    let cond: Vec<String> = cols.iter().enumerate().map(|(i, c)| format!("{c} = ?{}", i + 1)).collect();
    let id = tx
        .query_row(
            &format!("SELECT id FROM \"{table}\" WHERE {}", cond.join(" AND ")),
            rusqlite::params_from_iter(values.iter()),
            |r| r.get(0),
        )
        .optional()?;
    id.ok_or_else(|| StoreError::Validation {
        entity: table.to_owned(),
        reason: "row rejected by a constraint".into(),
    })
}

fn text(s: &str) -> SqlValue {
    SqlValue::Text(s.to_owned())
}

fn int(n: i64) -> SqlValue {
    SqlValue::Integer(n)
}

fn u64_to_i64(n: u64, entity: &str) -> Result<i64, StoreError> {
    i64::try_from(n).map_err(|_| StoreError::Validation {
        entity: entity.to_owned(),
        reason: format!("{n} exceeds the storable range"),
    })
}

fn upsert_artifact(tx: &Transaction<'_>, a: &DataArtifact) -> Result<i64, StoreError> {
    let size = u64_to_i64(a.size_bytes, "data_artifact")?;
    let existing: Option<(i64, i64)> = tx
        .query_row(
            "SELECT id, size_bytes FROM data_artifact WHERE path = ?1 AND content_hash = ?2",
            params![a.path, a.content_hash.as_str()],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?;
    if let Some((id, stored)) = existing {
        if stored != size {
            return Err(StoreError::Validation {
                entity: "data_artifact".into(),
                reason: format!("{:?} recorded with size {stored}, now {size} for the same hash", a.path),
            });
        }
        return Ok(id);
    }
    upsert(
        tx,
        "data_artifact",
        &["path", "content_hash", "size_bytes"],
        &[text(&a.path), text(a.content_hash.as_str()), int(size)],
    )
}

fn insert_trial(tx: &Transaction<'_>, t: &TrialRecord) -> Result<(), StoreError> {
    let m = &t.manifest;
    let user_id = upsert(tx, "user", &["name", "identifier"], &[text(&m.user.name), text(opt(&m.user.identifier))])?;
    let hardware_id = upsert(
        tx,
        "hardware",
        &["cpu_model", "logical_cores", "total_memory_bytes", "architecture"],
        &[
            text(&m.hardware.cpu_model),
            int(m.hardware.logical_cores as i64),
            int(u64_to_i64(m.hardware.total_memory_bytes, "hardware")?),
            text(&m.hardware.architecture),
        ],
    )?;
    let os_id = upsert(
        tx,
        "operating_system",
        &["name", "version", "kernel"],
        &[text(&m.os.name), text(&m.os.version), text(opt(&m.os.kernel))],
    )?;
    let script_id = upsert(
        tx,
        "script",
        &["path", "language", "content_hash"],
        &[
            text(&m.script.path),
            text(m.script.language.as_str()),
            text(m.script.content_hash.as_str()),
        ],
    )?;
    let id = t.trial_id.as_str();
    let command = serde_json::to_string(&t.command).expect("strings serialize");
    let env_vars = serde_json::to_string(&t.env_vars).expect("strings serialize");
    tx.execute(
        "INSERT INTO trial (trial_id, user_id, hardware_id, os_id, script_id, command, started_at,
                            finished_at, exit_code, env_vars, notes)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
        params![
            id,
            user_id,
            hardware_id,
            os_id,
            script_id,
            command,
            t.started_at.to_string(),
            t.finished_at.to_string(),
            t.exit_code,
            env_vars,
            t.notes
        ],
    )
    .map_err(constraint("trial"))?;

    for p in &m.os_packages {
        let pid = upsert(tx, "os_package", &["name", "version"], &[text(&p.name), text(&p.version)])?;
        tx.execute("INSERT INTO trial_os_package VALUES (?1, ?2)", params![id, pid])
            .map_err(constraint("os_package"))?;
    }
    for f in &m.functions {
        let kind = match f.kind {
            FunctionKind::Defined => "defined",
            FunctionKind::Called => "called",
        };
        let fid = upsert(
            tx,
            "function",
            &["name", "kind", "source_package"],
            &[text(&f.name), text(kind), text(opt(&f.source_package))],
        )?;
        tx.execute("INSERT INTO trial_function VALUES (?1, ?2)", params![id, fid])
            .map_err(constraint("function"))?;
    }
    for p in &m.script_packages {
        let pid = upsert(
            tx,
            "script_package",
            &["ecosystem", "name", "version"],
            &[text(p.ecosystem.as_str()), text(&p.name), text(&p.version)],
        )?;
        tx.execute("INSERT INTO trial_script_package VALUES (?1, ?2)", params![id, pid])
            .map_err(constraint("script_package"))?;
    }
    for a in &m.inputs {
        let aid = upsert_artifact(tx, a)?;
        tx.execute("INSERT INTO trial_input VALUES (?1, ?2)", params![id, aid])
            .map_err(constraint("data_artifact"))?;
    }
    for p in &m.parameters {
        tx.execute("INSERT INTO trial_parameter VALUES (?1, ?2, ?3)", params![id, p.name, p.value])
            .map_err(constraint("parameter"))?;
    }
    for (ordinal, edge) in t.consume_edges.iter().enumerate() {
        let aid = upsert_artifact(tx, &edge.artifact)?;
        tx.execute(
            "INSERT INTO consume (trial_id, ordinal, artifact_id, role) VALUES (?1, ?2, ?3, ?4)",
            params![id, ordinal as i64, aid, edge.artifact.role.as_str()],
        )
        .map_err(constraint("consume"))?;
        let cid = tx.last_insert_rowid();
        for p in &edge.parameters {
            tx.execute(
                "INSERT INTO consume_parameter VALUES (?1, ?2, ?3)",
                params![cid, p.name, p.value],
            )
            .map_err(constraint("consume_parameter"))?;
        }
    }
    for (ordinal, a) in t.produce_edges.iter().enumerate() {
        let aid = upsert_artifact(tx, a)?;
        tx.execute(
            "INSERT INTO produce (trial_id, ordinal, artifact_id, role) VALUES (?1, ?2, ?3, ?4)",
            params![id, ordinal as i64, aid, a.role.as_str()],
        )
        .map_err(constraint("produce"))?;
    }
    Ok(())
}

fn corrupt<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> StoreError + '_ {
    move |e| StoreError::Corrupt(format!("{what}: {e}"))
}

fn parse_hash(s: String) -> Result<ContentHash, StoreError> {
    s.parse().map_err(corrupt("content hash"))
}

fn parse_language(s: &str) -> Result<Language, StoreError> {
    s.parse().map_err(corrupt("language"))
}

fn parse_role(s: &str) -> Result<ArtifactRole, StoreError> {
    s.parse().map_err(corrupt("artifact role"))
}

fn load_trial(conn: &Connection, id: &TrialId) -> Result<Option<TrialRecord>, StoreError> {
    type TrialRow = (
        String, Option<String>, String, i64, i64, String, String, Option<String>,
        String, String, String, String, String, String, String, i32, String, String,
    );
    let row: Option<TrialRow> = conn
        .query_row(
            "SELECT u.name, nullif(u.identifier, ''), h.cpu_model, h.logical_cores, h.total_memory_bytes,
                    h.architecture, o.name || char(0) || o.version, nullif(o.kernel, ''),
                    s.path, s.language, s.content_hash,
                    t.command, t.started_at, t.finished_at, t.env_vars, t.exit_code, t.notes, t.trial_id
             FROM trial t
             JOIN user u ON u.id = t.user_id
             JOIN hardware h ON h.id = t.hardware_id
             JOIN operating_system o ON o.id = t.os_id
             JOIN script s ON s.id = t.script_id
             WHERE t.trial_id = ?1",
            [id.as_str()],
            |r| {
                Ok((
                    r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?,
                    r.get(7)?, r.get(8)?, r.get(9)?, r.get(10)?, r.get(11)?, r.get(12)?,
                    r.get(13)?, r.get(14)?, r.get(15)?, r.get(16)?, r.get(17)?,
                ))
            },
        )
        .optional()?;
    let Some((
        user_name, user_ident, cpu, cores, mem, arch, os_name_version, kernel,
        script_path, language, script_hash, command, started, finished, env_vars, exit_code, notes, _,
    )) = row
    else {
        return Ok(None);
    };
    let (os_name, os_version) = os_name_version
        .split_once('\0')
        .map(|(a, b)| (a.to_owned(), b.to_owned()))
        .ok_or_else(|| StoreError::Corrupt("operating system row".into()))?;
    let key = id.as_str();

    let os_packages = collect(
        conn,
        "SELECT p.name, p.version FROM trial_os_package x JOIN os_package p ON p.id = x.os_package_id WHERE x.trial_id = ?1",
        key,
        |r| Ok(OsPackage::new(r.get::<_, String>(0)?, r.get::<_, String>(1)?)),
    )?;
    let functions = collect(
        conn,
        "SELECT f.name, f.kind, f.source_package FROM trial_function x JOIN function f ON f.id = x.function_id WHERE x.trial_id = ?1",
        key,
        |r| {
            let kind: String = r.get(1)?;
            let name: String = r.get(0)?;
            Ok(if kind == "defined" {
                FunctionInfo::defined(name)
            } else {
                FunctionInfo::called(name, from_opt(r.get(2)?))
            })
        },
    )?;
    let raw_packages: Vec<(String, String, String)> = collect(
        conn,
        "SELECT p.ecosystem, p.name, p.version FROM trial_script_package x JOIN script_package p ON p.id = x.script_package_id WHERE x.trial_id = ?1",
        key,
        |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
    )?;
    let mut script_packages = BTreeSet::new();
    for (eco, name, version) in raw_packages {
        script_packages.insert(ScriptPackage::new(parse_language(&eco)?, name, version));
    }
    let raw_inputs: Vec<(String, String, i64)> = collect(
        conn,
        "SELECT a.path, a.content_hash, a.size_bytes FROM trial_input x JOIN data_artifact a ON a.id = x.artifact_id WHERE x.trial_id = ?1",
        key,
        |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
    )?;
    let mut inputs = BTreeSet::new();
    for (path, hash, size) in raw_inputs {
        inputs.insert(DataArtifact {
            path,
            role: ArtifactRole::Input,
            content_hash: parse_hash(hash)?,
            size_bytes: size as u64,
        });
    }
    let parameters: BTreeSet<Parameter> = collect(
        conn,
        "SELECT name, value FROM trial_parameter WHERE trial_id = ?1",
        key,
        |r| Ok(Parameter::new(r.get::<_, String>(0)?, r.get::<_, String>(1)?)),
    )?;

    let raw_consume: Vec<(i64, String, String, String, i64)> = collect(
        conn,
        "SELECT c.id, c.role, a.path, a.content_hash, a.size_bytes FROM consume c
         JOIN data_artifact a ON a.id = c.artifact_id WHERE c.trial_id = ?1 ORDER BY c.ordinal",
        key,
        |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)),
    )?;
    let mut consume_edges = Vec::with_capacity(raw_consume.len());
    for (cid, role, path, hash, size) in raw_consume {
        let mut stmt = conn.prepare_cached("SELECT name, value FROM consume_parameter WHERE consume_id = ?1")?;
        let parameters = stmt
            .query_map([cid], |r| Ok(Parameter::new(r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?
            .collect::<Result<BTreeSet<_>, _>>()?;
        consume_edges.push(ConsumeEdge {
            artifact: DataArtifact {
                path,
                role: parse_role(&role)?,
                content_hash: parse_hash(hash)?,
                size_bytes: size as u64,
            },
            parameters,
        });
    }
    let raw_produce: Vec<(String, String, String, i64)> = collect(
        conn,
        "SELECT p.role, a.path, a.content_hash, a.size_bytes FROM produce p
         JOIN data_artifact a ON a.id = p.artifact_id WHERE p.trial_id = ?1 ORDER BY p.ordinal",
        key,
        |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)),
    )?;
    let mut produce_edges = Vec::with_capacity(raw_produce.len());
    for (role, path, hash, size) in raw_produce {
        produce_edges.push(DataArtifact {
            path,
            role: parse_role(&role)?,
            content_hash: parse_hash(hash)?,
            size_bytes: size as u64,
        });
    }

    let manifest = ExperimentManifest {
        user: UserInfo {
            name: user_name,
            identifier: user_ident,
        },
        hardware: HardwareInfo {
            cpu_model: cpu,
            logical_cores: cores as u32,
            total_memory_bytes: mem as u64,
            architecture: arch,
        },
        os: OperatingSystemInfo {
            name: os_name,
            version: os_version,
            kernel,
        },
        os_packages,
        script: ScriptInfo {
            path: script_path,
            language: parse_language(&language)?,
            content_hash: parse_hash(script_hash)?,
        },
        functions,
        script_packages,
        inputs,
        parameters,
    };
    let env_vars: BTreeMap<String, String> =
        serde_json::from_str(&env_vars).map_err(corrupt("trial.env_vars"))?;
    Ok(Some(TrialRecord {
        trial_id: id.clone(),
        manifest,
        command: serde_json::from_str(&command).map_err(corrupt("trial.command"))?,
        started_at: started.parse::<Timestamp>().map_err(corrupt("trial.started_at"))?,
        finished_at: finished.parse::<Timestamp>().map_err(corrupt("trial.finished_at"))?,
        exit_code,
        consume_edges,
        produce_edges,
        env_vars,
        notes,
    }))
}

fn collect<T, C: FromIterator<T>>(
    conn: &Connection,
    sql: &str,
    key: &str,
    f: impl FnMut(&rusqlite::Row<'_>) -> rusqlite::Result<T>,
) -> Result<C, StoreError> {
    let mut stmt = conn.prepare_cached(sql)?;
    let out = stmt.query_map([key], f)?.collect::<rusqlite::Result<C>>()?;
    Ok(out)
}

/// Remove a store file with its lock and WAL side files. Missing files are fine.
pub fn remove_store_files(db: &Path) -> std::io::Result<()> {
    let mut paths = vec![db.to_path_buf(), lock_path_for(db)];
    for suffix in ["-wal", "-shm", "-journal"] {
        let mut name = db.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(suffix);
        paths.push(db.with_file_name(name));
    }
    for p in paths {
        match fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
