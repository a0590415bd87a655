use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

const AFTER_HELP: &str = "\
Workflow:
  Step 1  describe and package:  init, scan, pack, env
  Step 2  execute and capture:   run, query, verify
  Step 3  publish:               publish

Exit codes: 0 ok, 1 verification mismatch, 2 usage, 3 I/O or integrity, 4 parse";

#[derive(Debug, Parser)]
#[command(
    name = "repro",
    version,
    about = "Package, capture, verify and publish computational experiments",
    after_help = AFTER_HELP,
    arg_required_else_help = true
)]
pub struct Cli {
    /// Experiment directory.
    #[arg(long, global = true, default_value = ".")]
    pub dir: PathBuf,

    /// Provenance store file or directory [default: <dir>/provenance.db].
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,

    /// Print canonical JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Step 1: write experiment.manifest.json and a repro.toml scaffold.
    Init(InitArgs),
    /// Step 1: statically scan a script for packages and functions.
    Scan(ScanArgs),
    /// Step 1: scan, generate the environment spec and build the bundle.
    Pack(PackArgs),
    /// Restore a bundle into an empty directory.
    Unpack(UnpackArgs),
    /// Step 2: run a command and capture the trial into the store.
    Run(RunArgs),
    /// Step 2: compare two trials and classify the reproducibility level.
    Verify(VerifyArgs),
    /// Step 1: manage the environment spec.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Step 2: query the provenance store.
    #[command(subcommand)]
    Query(QueryCommand),
    /// Step 3: assemble the publication package and deposit it.
    Publish(PublishArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Main script, relative to the experiment directory.
    #[arg(long)]
    pub script: String,
    #[arg(long)]
    pub user: String,
    /// Persistent identifier of the user, e.g. an ORCID.
    #[arg(long)]
    pub user_id: Option<String>,
    /// Script language; inferred from the extension when omitted.
    #[arg(long)]
    pub lang: Option<String>,
    /// Input data file (repeatable).
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    /// Parameter as NAME=VALUE (repeatable).
    #[arg(long = "param")]
    pub params: Vec<String>,
    /// Overwrite an existing manifest.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    pub script: PathBuf,
    #[arg(long)]
    pub lang: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct LockArgs {
    /// Lockfile to pin script packages [default: <dir>/repro.lock when present].
    #[arg(long)]
    pub lockfile: Option<PathBuf>,
    /// canonical, requirements or packrat [default: from the file name].
    #[arg(long)]
    pub lock_format: Option<String>,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[command(flatten)]
    pub lock: LockArgs,
    /// Extra glob to include in the bundle (repeatable).
    #[arg(long = "include")]
    pub includes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct UnpackArgs {
    pub archive: PathBuf,
    pub dest: PathBuf,
    /// Sidecar manifest [default: experiment.bundle.manifest.json next to the archive].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Declared input, in addition to repro.toml (repeatable).
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    /// Parameter as NAME=VALUE, overriding repro.toml (repeatable).
    #[arg(long = "param")]
    pub params: Vec<String>,
    /// Command to run, after `--`.
    #[arg(last = true, required = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Trial id of the original run.
    pub original: String,
    /// Trial id of the re-run.
    pub candidate: String,
    /// Compare only this produced path (repeatable).
    #[arg(long = "watch")]
    pub watch: Vec<String>,
    /// The script cannot be read by the reproducer.
    #[arg(long)]
    pub no_script_access: bool,
    /// Functions cannot be read by the reproducer.
    #[arg(long)]
    pub no_function_access: bool,
}

#[derive(Debug, Subcommand)]
pub enum EnvCommand {
    /// Generate envspec.json from the manifest, script and lockfile.
    Generate(LockArgs),
    /// Append one change to the modification log.
    #[command(subcommand)]
    Log(LogAction),
    /// Render envspec.json to provision.steps.
    Render,
}

#[derive(Debug, Subcommand)]
pub enum LogAction {
    /// Record an added OS package.
    OsPackage { name: String, version: String },
    /// Record an added script package.
    ScriptPackage { ecosystem: String, name: String, version: String },
    /// Record a runtime version change.
    Runtime { ecosystem: String, version: String },
    /// Record a free-form note.
    Note { text: String },
}

#[derive(Debug, Subcommand)]
pub enum QueryCommand {
    /// Show how a produced file came to be.
    Lineage {
        path: String,
        /// Use this trial instead of the most recent producer.
        #[arg(long)]
        trial: Option<String>,
    },
    /// List recorded trials, newest first.
    Trials {
        #[arg(long)]
        script_hash: Option<String>,
        /// RFC 3339 lower bound on the start time.
        #[arg(long)]
        since: Option<String>,
        /// RFC 3339 upper bound on the start time.
        #[arg(long)]
        until: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct PublishArgs {
    /// Deposit endpoint [default: publish.endpoint in repro.toml].
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Write the request without sending it (the default).
    #[arg(long, conflicts_with = "live")]
    pub dry_run: bool,
    /// Send the deposit.
    #[arg(long)]
    pub live: bool,
    /// Environment variable holding the deposit token.
    #[arg(long)]
    pub token_env: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub description: Option<String>,
    #[arg(long)]
    pub license: Option<String>,
    #[arg(long = "keyword")]
    pub keywords: Vec<String>,
    /// Creator name (repeatable) [default: publish.creators, else the manifest user].
    #[arg(long = "creator")]
    pub creators: Vec<String>,
    #[arg(long)]
    pub identifier: Option<String>,
}
