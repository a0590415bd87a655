//! Relational schema for the provenance store.
//!
//! Entity tables (`user`, `hardware`, `operating_system`, `os_package`,
//! `script`, `function`, `script_package`, `data_artifact`) are keyed by
//! their natural attributes so repeated trials share rows. `trial` points at
//! its user, hardware, OS and script; the many-to-many memberships of a
//! trial's manifest live in the `trial_*` association tables. `consume` and
//! `produce` are the activity edges, and parameters hang off `consume`
//! through `consume_parameter`.
//!
//! Optional text attributes are stored as `''` so natural-key uniqueness
//! works (SQLite treats NULLs as distinct in UNIQUE constraints).

pub const SCHEMA_VERSION: i64 = 1;

pub const DDL: &str = r#"
CREATE TABLE user (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL CHECK (name <> ''),
    identifier TEXT NOT NULL DEFAULT '',
    UNIQUE (name, identifier)
);
CREATE TABLE hardware (
    id INTEGER PRIMARY KEY,
    cpu_model TEXT NOT NULL,
    logical_cores INTEGER NOT NULL CHECK (logical_cores >= 1),
    total_memory_bytes INTEGER NOT NULL CHECK (total_memory_bytes >= 0),
    architecture TEXT NOT NULL,
    UNIQUE (cpu_model, logical_cores, total_memory_bytes, architecture)
);
CREATE TABLE operating_system (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL CHECK (name <> ''),
    version TEXT NOT NULL,
    kernel TEXT NOT NULL DEFAULT '',
    UNIQUE (name, version, kernel)
);
CREATE TABLE os_package (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    version TEXT NOT NULL,
    UNIQUE (name, version)
);
CREATE TABLE script (
    id INTEGER PRIMARY KEY,
    path TEXT NOT NULL,
    language TEXT NOT NULL CHECK (language IN ('R', 'Python')),
    content_hash TEXT NOT NULL CHECK (length(content_hash) = 64),
    UNIQUE (path, language, content_hash)
);
CREATE TABLE function (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL CHECK (name <> ''),
    kind TEXT NOT NULL CHECK (kind IN ('defined', 'called')),
    source_package TEXT NOT NULL DEFAULT '',
    CHECK (kind = 'called' OR source_package = ''),
    UNIQUE (name, kind, source_package)
);
CREATE TABLE script_package (
    id INTEGER PRIMARY KEY,
    ecosystem TEXT NOT NULL CHECK (ecosystem IN ('R', 'Python')),
    name TEXT NOT NULL,
    version TEXT NOT NULL,
    UNIQUE (ecosystem, name, version)
);
CREATE TABLE data_artifact (
    id INTEGER PRIMARY KEY,
    path TEXT NOT NULL,
    content_hash TEXT NOT NULL CHECK (length(content_hash) = 64),
    size_bytes INTEGER NOT NULL CHECK (size_bytes >= 0),
    UNIQUE (path, content_hash)
);
CREATE TABLE trial (
    trial_id TEXT PRIMARY KEY,
    user_id INTEGER NOT NULL REFERENCES user (id),
    hardware_id INTEGER NOT NULL REFERENCES hardware (id),
    os_id INTEGER NOT NULL REFERENCES operating_system (id),
    script_id INTEGER NOT NULL REFERENCES script (id),
    command TEXT NOT NULL,
    started_at TEXT NOT NULL,
    finished_at TEXT NOT NULL,
    exit_code INTEGER NOT NULL,
    env_vars TEXT NOT NULL,
    notes TEXT NOT NULL,
    CHECK (finished_at >= started_at)
);
CREATE TABLE trial_os_package (
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    os_package_id INTEGER NOT NULL REFERENCES os_package (id),
    PRIMARY KEY (trial_id, os_package_id)
);
CREATE TABLE trial_function (
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    function_id INTEGER NOT NULL REFERENCES function (id),
    PRIMARY KEY (trial_id, function_id)
);
CREATE TABLE trial_script_package (
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    script_package_id INTEGER NOT NULL REFERENCES script_package (id),
    PRIMARY KEY (trial_id, script_package_id)
);
CREATE TABLE trial_input (
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    artifact_id INTEGER NOT NULL REFERENCES data_artifact (id),
    PRIMARY KEY (trial_id, artifact_id)
);
CREATE TABLE trial_parameter (
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    name TEXT NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (trial_id, name)
);
CREATE TABLE consume (
    id INTEGER PRIMARY KEY,
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    ordinal INTEGER NOT NULL,
    artifact_id INTEGER NOT NULL REFERENCES data_artifact (id),
    role TEXT NOT NULL CHECK (role IN ('input', 'output', 'intermediate')),
    UNIQUE (trial_id, ordinal)
);
CREATE TABLE consume_parameter (
    consume_id INTEGER NOT NULL REFERENCES consume (id),
    name TEXT NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (consume_id, name)
);
CREATE TABLE produce (
    id INTEGER PRIMARY KEY,
    trial_id TEXT NOT NULL REFERENCES trial (trial_id),
    ordinal INTEGER NOT NULL,
    artifact_id INTEGER NOT NULL REFERENCES data_artifact (id),
    role TEXT NOT NULL CHECK (role IN ('output', 'intermediate')),
    UNIQUE (trial_id, ordinal)
);
"#;

pub struct TableDef {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    pub primary_key: &'static [&'static str],
}

/// Every table, in foreign-key dependency order (parents first).
pub const TABLES: &[TableDef] = &[
    TableDef { name: "user", columns: &["id", "name", "identifier"], primary_key: &["id"] },
    TableDef {
        name: "hardware",
        columns: &["id", "cpu_model", "logical_cores", "total_memory_bytes", "architecture"],
        primary_key: &["id"],
    },
    TableDef { name: "operating_system", columns: &["id", "name", "version", "kernel"], primary_key: &["id"] },
    TableDef { name: "os_package", columns: &["id", "name", "version"], primary_key: &["id"] },
    TableDef { name: "script", columns: &["id", "path", "language", "content_hash"], primary_key: &["id"] },
    TableDef { name: "function", columns: &["id", "name", "kind", "source_package"], primary_key: &["id"] },
    TableDef { name: "script_package", columns: &["id", "ecosystem", "name", "version"], primary_key: &["id"] },
    TableDef { name: "data_artifact", columns: &["id", "path", "content_hash", "size_bytes"], primary_key: &["id"] },
    TableDef {
        name: "trial",
        columns: &[
            "trial_id", "user_id", "hardware_id", "os_id", "script_id", "command", "started_at",
            "finished_at", "exit_code", "env_vars", "notes",
        ],
        primary_key: &["trial_id"],
    },
    TableDef {
        name: "trial_os_package",
        columns: &["trial_id", "os_package_id"],
        primary_key: &["trial_id", "os_package_id"],
    },
    TableDef {
        name: "trial_function",
        columns: &["trial_id", "function_id"],
        primary_key: &["trial_id", "function_id"],
    },
    TableDef {
        name: "trial_script_package",
        columns: &["trial_id", "script_package_id"],
        primary_key: &["trial_id", "script_package_id"],
    },
    TableDef {
        name: "trial_input",
        columns: &["trial_id", "artifact_id"],
        primary_key: &["trial_id", "artifact_id"],
    },
    TableDef {
        name: "trial_parameter",
        columns: &["trial_id", "name", "value"],
        primary_key: &["trial_id", "name"],
    },
    TableDef {
        name: "consume",
        columns: &["id", "trial_id", "ordinal", "artifact_id", "role"],
        primary_key: &["id"],
    },
    TableDef {
        name: "consume_parameter",
        columns: &["consume_id", "name", "value"],
        primary_key: &["consume_id", "name"],
    },
    TableDef {
        name: "produce",
        columns: &["id", "trial_id", "ordinal", "artifact_id", "role"],
        primary_key: &["id"],
    },
];

/// The entity and activity tables that mirror the experiment model one-to-one.
pub const ENTITY_TABLES: [&str; 11] = [
    "user",
    "hardware",
    "operating_system",
    "os_package",
    "script",
    "function",
    "script_package",
    "data_artifact",
    "trial",
    "consume",
    "produce",
];
