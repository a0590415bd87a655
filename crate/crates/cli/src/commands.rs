use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use repro_core::bundle::{
    default_includes, pack_to_files, unpack, verify_bundle, BundleManifest, BUNDLE_FILE,
    BUNDLE_MANIFEST_FILE,
};
use repro_core::canonical;
use repro_core::capture::{probe_environment, run_captured};
use repro_core::config::{ProjectConfig, CONFIG_FILE, DEFAULT_TOKEN_ENV};
use repro_core::digest::ContentHash;
use repro_core::envspec::{
    generate_envspec, record_modification, render_provision_script, render_to_string,
    resolve_script_packages, Change, EnvSpec, Runtime, ENVSPEC_FILE, PROVISION_FILE,
};
use repro_core::model::{
    AccessFlags, ArtifactRole, DataArtifact, Ecosystem, ExperimentManifest, FunctionInfo,
    Language, OsPackage, Parameter, ScriptInfo, ScriptPackage, UserInfo, MANIFEST_FILE,
};
use repro_core::publish::{
    assemble_publication, build_fair_manifest, deposit, DepositStatus, PublicationComponents,
    PublicationMetadata, UreqTransport,
};
use repro_core::relpath;
use repro_core::scan::lockfile::LOCKFILE_NAME;
use repro_core::scan::{read_lockfile, scan_script, write_canonical_lockfile, LockfileFormat, ScanResult};
use repro_core::store::{init_store, open_store, StoreHandle, TrialFilter, TrialId, STORE_FILE};
use repro_core::timestamp::Timestamp;
use repro_core::verify::{evaluate_reproduction, render_table, Verdict, REPORT_FILE};

use crate::cli::{
    EnvCommand, InitArgs, LockArgs, LogAction, PackArgs, PublishArgs, QueryCommand, RunArgs,
    ScanArgs, UnpackArgs, VerifyArgs,
};
use crate::failure::{self, Failure};

pub type Outcome = Result<u8, Failure>;

pub struct Context {
    pub dir: PathBuf,
    pub store: Option<PathBuf>,
    pub json: bool,
}

impl Context {
    fn store_location(&self) -> PathBuf {
        self.store.clone().unwrap_or_else(|| self.dir.join(STORE_FILE))
    }

    fn open_store(&self) -> Result<StoreHandle, Failure> {
        Ok(open_store(&self.store_location())?)
    }

    /// Canonical JSON when `--json` is set, otherwise the human rendering.
    fn emit<T: Serialize + ?Sized>(&self, value: &T, human: impl FnOnce() -> String) {
        if self.json {
            print!("{}", canonical::to_canonical_string(value).expect("output serializes"));
        } else {
            print!("{}", human());
        }
    }

    fn config(&self) -> Result<ProjectConfig, Failure> {
        Ok(ProjectConfig::load(&self.dir)?.unwrap_or_default())
    }

    fn manifest(&self) -> Result<ExperimentManifest, Failure> {
        let path = self.dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Failure::usage(format!(
                "{} not found; run `repro init` first",
                path.display()
            )));
        }
        Ok(ExperimentManifest::load(&path)?)
    }
}

fn warn_all(diagnostics: &[String]) {
    for d in diagnostics {
        eprintln!("warning: {d}");
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    canonical::write_atomic(path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn parse_params(raw: &[String]) -> Result<Vec<Parameter>, Failure> {
    raw.iter()
        .map(|p| match p.split_once('=') {
            Some((name, value)) if !name.trim().is_empty() => Ok(Parameter::new(name.trim(), value)),
            _ => Err(Failure::usage(format!("parameter {p:?} must look like NAME=VALUE"))),
        })
        .collect()
}

fn parse_language(text: &str) -> Result<Language, Failure> {
    text.parse().map_err(|e| Failure::usage(format!("{e}")))
}

fn parse_trial(text: &str) -> Result<TrialId, Failure> {
    text.parse().map_err(|e| Failure::usage(format!("{e}")))
}

fn normalize(path: &str) -> Result<String, Failure> {
    relpath::normalize(path).map_err(|e| Failure::usage(e.to_string()))
}

fn hash_input(dir: &Path, path: &str) -> Result<DataArtifact, Failure> {
    let full = dir.join(path);
    if !full.is_file() {
        return Err(Failure::usage(format!("input {path:?} does not exist in {}", dir.display())));
    }
    let (content_hash, size_bytes) =
        ContentHash::of_file(&full).map_err(|e| Failure::io(format!("{}: {e}", full.display())))?;
    Ok(DataArtifact {
        path: path.to_owned(),
        role: ArtifactRole::Input,
        content_hash,
        size_bytes,
    })
}

fn function_label(f: &FunctionInfo) -> String {
    match &f.source_package {
        Some(pkg) => format!("{pkg}::{}", f.name),
        None => f.name.clone(),
    }
}

fn join<I: IntoIterator<Item = String>>(items: I) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(", ")
    }
}

/// Pinned packages from `--lockfile`, else `<dir>/repro.lock`, else none.
/// The second value is true when the source is not already the canonical
/// `repro.lock` of the experiment.
fn load_lockfile(dir: &Path, args: &LockArgs) -> Result<(BTreeSet<ScriptPackage>, bool), Failure> {
    let default = dir.join(LOCKFILE_NAME);
    let (path, format) = match &args.lockfile {
        Some(p) => {
            let format = match &args.lock_format {
                Some(f) => f.parse().map_err(Failure::usage)?,
                None => LockfileFormat::detect(p),
            };
            (p.clone(), format)
        }
        None if default.is_file() => (default.clone(), LockfileFormat::Canonical),
        None => return Ok((BTreeSet::new(), false)),
    };
    let text = String::from_utf8(read(&path)?)
        .map_err(|_| Failure::parse(format!("{}: not UTF-8", path.display())))?;
    let packages = read_lockfile(&text, format)
        .map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    let same_file = fs::canonicalize(&path).ok() == fs::canonicalize(&default).ok();
    Ok((packages, !(same_file && format == LockfileFormat::Canonical)))
}

fn scan_file(path: &Path, language: Language) -> Result<ScanResult, Failure> {
    let source = read(path)?;
    Ok(scan_script(&String::from_utf8_lossy(&source), language))
}

/// Bring the manifest up to date with the script, lockfile and inputs on disk.
fn refresh_manifest(
    dir: &Path,
    manifest: &mut ExperimentManifest,
    lockfile: &BTreeSet<ScriptPackage>,
) -> Result<(ScanResult, Vec<String>), Failure> {
    let scan = scan_file(&dir.join(&manifest.script.path), manifest.script.language)?;
    let mut diagnostics: Vec<String> = scan
        .diagnostics
        .iter()
        .map(|d| format!("{}:{}: {}", manifest.script.path, d.line, d.message))
        .collect();
    manifest.script.content_hash = scan.source_hash.clone();
    manifest.functions = scan.functions();
    let (packages, unpinned) =
        resolve_script_packages(manifest.script.language, &scan.dependencies, lockfile);
    manifest.script_packages = packages;
    diagnostics.extend(unpinned);
    manifest.inputs = manifest
        .inputs
        .iter()
        .map(|a| hash_input(dir, &a.path))
        .collect::<Result<_, _>>()?;
    Ok((scan, diagnostics))
}

/// Fresh spec that keeps the modification log of any existing `envspec.json`.
fn regenerate_envspec(
    dir: &Path,
    manifest: &ExperimentManifest,
    scan: &ScanResult,
    lockfile: &BTreeSet<ScriptPackage>,
) -> Result<(EnvSpec, Vec<String>), Failure> {
    let (mut spec, diagnostics) = generate_envspec(manifest, scan, lockfile)?;
    let existing = dir.join(ENVSPEC_FILE);
    if existing.is_file() {
        spec.modification_log = EnvSpec::load(&existing)?.modification_log;
    }
    Ok((spec, diagnostics))
}

fn save_envspec(dir: &Path, spec: &EnvSpec) -> Result<(), Failure> {
    spec.save(&dir.join(ENVSPEC_FILE))?;
    write(&dir.join(PROVISION_FILE), render_to_string(spec).as_bytes())
}

fn write_manifest(dir: &Path, manifest: &ExperimentManifest) -> Result<(), Failure> {
    manifest.validate()?;
    write(&dir.join(MANIFEST_FILE), manifest.to_canonical_json().as_bytes())
}

fn toml_string(s: &str) -> String {
    // JSON string escapes are a subset of TOML basic-string escapes.
    serde_json::to_string(s).expect("strings serialize")
}

fn config_scaffold(inputs: &[String], params: &BTreeSet<Parameter>, language: Language, interpreter: &str) -> String {
    let mut out = String::new();
    let list: Vec<String> = inputs.iter().map(|i| toml_string(i)).collect();
    let _ = writeln!(out, "declared_inputs = [{}]", list.join(", "));
    let _ = writeln!(out, "ignore = []");
    let _ = writeln!(out, "env_allowlist = []");
    let _ = writeln!(out, "\n[parameters]");
    for p in params {
        let _ = writeln!(out, "{} = {}", toml_string(&p.name), toml_string(&p.value));
    }
    let _ = writeln!(out, "\n[interpreters]");
    let _ = writeln!(out, "{} = {}", language.as_str(), toml_string(interpreter));
    let _ = writeln!(out, "\n[publish]");
    let _ = writeln!(out, "# title = \"\"\n# license = \"CC-BY-4.0\"\n# endpoint = \"https://\"");
    out
}

pub fn init(ctx: &Context, args: &InitArgs) -> Outcome {
    let dir = &ctx.dir;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !args.force {
        return Err(Failure::usage(format!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    let script = normalize(&args.script)?;
    let language = match &args.lang {
        Some(l) => parse_language(l)?,
        None => Language::from_path(Path::new(&script)).ok_or_else(|| {
            Failure::usage(format!("cannot infer the language of {script:?}; pass --lang"))
        })?,
    };
    let config = ctx.config()?;
    let interpreter = config.interpreters.get(&language).cloned().unwrap_or_default();
    let (fingerprint, mut diagnostics) = probe_environment(
        &config.env_allowlist,
        &[(language, interpreter.clone())].into_iter().collect(),
    );
    let (lockfile, _) = load_lockfile(dir, &LockArgs::default())?;

    let inputs: Vec<String> = args.inputs.iter().map(|i| normalize(i)).collect::<Result<_, _>>()?;
    let parameters: BTreeSet<Parameter> = parse_params(&args.params)?.into_iter().collect();
    let mut manifest = ExperimentManifest {
        user: UserInfo {
            name: args.user.clone(),
            identifier: args.user_id.clone(),
        },
        hardware: fingerprint.hardware,
        os: fingerprint.os,
        os_packages: fingerprint
            .runtimes
            .iter()
            .map(|r| OsPackage::new(r.ecosystem.as_str(), &r.version))
            .collect(),
        script: ScriptInfo {
            path: script.clone(),
            language,
            content_hash: ContentHash::of_bytes(b""),
        },
        functions: BTreeSet::new(),
        script_packages: BTreeSet::new(),
        inputs: inputs
            .iter()
            .map(|p| hash_input(dir, p))
            .collect::<Result<_, _>>()?,
        parameters: parameters.clone(),
    };
    let (_, scan_diags) = refresh_manifest(dir, &mut manifest, &lockfile)?;
    diagnostics.extend(scan_diags);
    warn_all(&diagnostics);
    write_manifest(dir, &manifest)?;

    let config_path = dir.join(CONFIG_FILE);
    let scaffolded = !config_path.exists();
    if scaffolded {
        write(&config_path, config_scaffold(&inputs, &parameters, language, &interpreter).as_bytes())?;
    }
    ctx.emit(&manifest, || {
        let mut out = format!("Step 1 (init): wrote {}", manifest_path.display());
        if scaffolded {
            let _ = write!(out, " and {}", config_path.display());
        }
        let _ = write!(
            out,
            "\nscript {} ({language}), {} input(s), {} parameter(s), {} package(s)\n",
            manifest.script.path,
            manifest.inputs.len(),
            manifest.parameters.len(),
            manifest.script_packages.len()
        );
        out
    });
    Ok(failure::OK)
}

pub fn scan(ctx: &Context, args: &ScanArgs) -> Outcome {
    let language = match &args.lang {
        Some(l) => parse_language(l)?,
        None => Language::from_path(&args.script).ok_or_else(|| {
            Failure::usage(format!("cannot infer the language of {}; pass --lang", args.script.display()))
        })?,
    };
    let result = scan_file(&args.script, language)?;
    for d in &result.diagnostics {
        eprintln!("{}:{}: {}", args.script.display(), d.line, d.message);
    }
    ctx.emit(&result, || {
        let mut out = String::new();
        let _ = writeln!(out, "{} ({language}) {}", args.script.display(), result.source_hash.short(12));
        let _ = writeln!(out, "dependencies: {}", join(result.dependencies.iter().cloned()));
        let _ = writeln!(out, "defined:      {}", join(result.defined_functions.iter().map(function_label)));
        let _ = writeln!(out, "called:       {}", join(result.called_functions.iter().map(function_label)));
        if !result.local_modules.is_empty() {
            let _ = writeln!(out, "local:        {}", join(result.local_modules.iter().cloned()));
        }
        out
    });
    Ok(if result.has_syntax_errors() { failure::PARSE } else { failure::OK })
}

pub fn pack(ctx: &Context, args: &PackArgs) -> Outcome {
    let dir = &ctx.dir;
    let config = ctx.config()?;
    let mut manifest = ctx.manifest()?;
    let (lockfile, foreign) = load_lockfile(dir, &args.lock)?;
    let (scan, mut diagnostics) = refresh_manifest(dir, &mut manifest, &lockfile)?;
    let (spec, env_diags) = regenerate_envspec(dir, &manifest, &scan, &lockfile)?;
    diagnostics.extend(env_diags);
    warn_all(&diagnostics);

    if foreign {
        // The bundle always carries the pins in canonical form.
        write(&dir.join(LOCKFILE_NAME), write_canonical_lockfile(&lockfile).as_bytes())?;
        eprintln!("note: wrote canonical {LOCKFILE_NAME} from the given lockfile");
    }
    save_envspec(dir, &spec)?;
    write_manifest(dir, &manifest)?;
    let mut include = default_includes(&manifest, &config.declared_inputs);
    include.push(PROVISION_FILE.to_owned());
    include.extend(args.includes.iter().cloned());
    let bundle = pack_to_files(
        dir,
        &include,
        &manifest,
        &dir.join(BUNDLE_FILE),
        &dir.join(BUNDLE_MANIFEST_FILE),
    )?;
    ctx.emit(&json!({ "bundle": bundle, "envspec": spec }), || {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Step 1 (pack): {} ({} bytes, {} files)",
            dir.join(BUNDLE_FILE).display(),
            bundle.archive_size_bytes,
            bundle.entries.len()
        );
        let _ = writeln!(out, "bundle hash {}", bundle.bundle_hash);
        for e in &bundle.entries {
            let _ = writeln!(out, "  {}  {}", e.content_hash.short(12), e.path);
        }
        out
    });
    Ok(failure::OK)
}

pub fn unpack_bundle(ctx: &Context, args: &UnpackArgs) -> Outcome {
    let archive = read(&args.archive)?;
    let sidecar = args.manifest.clone().or_else(|| {
        let p = args.archive.parent().unwrap_or(Path::new(".")).join(BUNDLE_MANIFEST_FILE);
        p.is_file().then_some(p)
    });
    let expected = sidecar.as_deref().map(BundleManifest::load).transpose()?;
    if let Some(expected) = &expected {
        let check = verify_bundle(&archive, expected);
        if !check.ok {
            return Err(Failure::io(format!(
                "bundle does not match its manifest (archive hash ok: {}; mismatched: {})",
                check.bundle_hash_ok,
                join(check.mismatches)
            )));
        }
    }
    let restored = unpack(&archive, &args.dest, expected.as_ref())?;
    ctx.emit(&restored, || {
        format!(
            "restored {} files into {}{}\n",
            restored.entries.len(),
            args.dest.display(),
            if expected.is_some() { " (verified)" } else { "" }
        )
    });
    Ok(failure::OK)
}

pub fn run(ctx: &Context, args: &RunArgs) -> Outcome {
    let config = ctx.config()?;
    let manifest = ctx.manifest()?;
    let mut declared = config.declared_inputs.clone();
    declared.extend(args.inputs.iter().cloned());
    let mut params: BTreeMap<String, String> =
        manifest.parameters.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    for p in config.parameters.iter().cloned().chain(parse_params(&args.params)?) {
        params.insert(p.name, p.value);
    }
    let params: BTreeSet<Parameter> = params.into_iter().map(|(n, v)| Parameter::new(n, v)).collect();

    let mut store = init_store(&ctx.store_location())?;
    let outcome = run_captured(&ctx.dir, &args.command, &declared, &params, &mut store, &config)?;
    warn_all(&outcome.diagnostics);
    let trial = &outcome.trial;
    if trial.exit_code != 0 {
        eprintln!("warning: command exited with status {}; the trial was recorded", trial.exit_code);
    }
    ctx.emit(trial, || {
        let mut out = String::new();
        let _ = writeln!(out, "Step 2 (run): trial {}", trial.trial_id);
        let _ = writeln!(out, "exit code {}", trial.exit_code);
        for e in &trial.consume_edges {
            let _ = writeln!(out, "  consumed  {}  {}", e.artifact.content_hash.short(12), e.artifact.path);
        }
        for a in &trial.produce_edges {
            let _ = writeln!(out, "  produced  {}  {} ({})", a.content_hash.short(12), a.path, a.role.as_str());
        }
        out
    });
    Ok(failure::OK)
}

pub fn verify(ctx: &Context, args: &VerifyArgs) -> Outcome {
    let store = ctx.open_store()?;
    let original = store.load_trial(&parse_trial(&args.original)?)?;
    let candidate = store.load_trial(&parse_trial(&args.candidate)?)?;
    let access = AccessFlags {
        script_accessible: !args.no_script_access,
        functions_accessible: !args.no_function_access,
    };
    let watched = (!args.watch.is_empty()).then_some(args.watch.as_slice());
    let report = evaluate_reproduction(&original, &candidate, access, watched)?;
    write(&ctx.dir.join(REPORT_FILE), report.to_canonical_json().as_bytes())?;
    ctx.emit(&report, || render_table(&report));
    Ok(match report.verdict {
        Verdict::Repeatable => failure::OK,
        Verdict::NotRepeatable => failure::MISMATCH,
    })
}

fn load_envspec(dir: &Path) -> Result<EnvSpec, Failure> {
    let path = dir.join(ENVSPEC_FILE);
    if !path.is_file() {
        return Err(Failure::usage(format!(
            "{} not found; run `repro env generate` first",
            path.display()
        )));
    }
    Ok(EnvSpec::load(&path)?)
}

pub fn env(ctx: &Context, command: &EnvCommand) -> Outcome {
    let dir = &ctx.dir;
    match command {
        EnvCommand::Generate(lock) => {
            let mut manifest = ctx.manifest()?;
            let (lockfile, _) = load_lockfile(dir, lock)?;
            let (scan, mut diagnostics) = refresh_manifest(dir, &mut manifest, &lockfile)?;
            let (spec, env_diags) = regenerate_envspec(dir, &manifest, &scan, &lockfile)?;
            diagnostics.extend(env_diags);
            warn_all(&diagnostics);
            save_envspec(dir, &spec)?;
            ctx.emit(&spec, || {
                format!(
                    "wrote {} and {}\n{}",
                    dir.join(ENVSPEC_FILE).display(),
                    dir.join(PROVISION_FILE).display(),
                    render_to_string(&spec)
                )
            });
        }
        EnvCommand::Log(action) => {
            let spec = load_envspec(dir)?;
            let eco = |s: &str| -> Result<Ecosystem, Failure> { parse_language(s) };
            let change = match action {
                LogAction::OsPackage { name, version } => Change::AddOsPackage(OsPackage::new(name, version)),
                LogAction::ScriptPackage { ecosystem, name, version } => {
                    Change::AddScriptPackage(ScriptPackage::new(eco(ecosystem)?, name, version))
                }
                LogAction::Runtime { ecosystem, version } => Change::SetRuntime(Runtime {
                    ecosystem: eco(ecosystem)?,
                    version: version.clone(),
                }),
                LogAction::Note { text } => Change::Note(text.clone()),
            };
            let updated = record_modification(&spec, change, Timestamp::now());
            save_envspec(dir, &updated)?;
            ctx.emit(&updated, || {
                format!("recorded modification #{}\n", updated.modification_log.len())
            });
        }
        EnvCommand::Render => {
            let spec = load_envspec(dir)?;
            let steps = render_provision_script(&spec);
            write(&dir.join(PROVISION_FILE), render_to_string(&spec).as_bytes())?;
            ctx.emit(&json!({ "steps": steps }), || render_to_string(&spec));
        }
    }
    Ok(failure::OK)
}

pub fn query(ctx: &Context, command: &QueryCommand) -> Outcome {
    let store = ctx.open_store()?;
    match command {
        QueryCommand::Lineage { path, trial } => {
            let trial = trial.as_deref().map(parse_trial).transpose()?;
            let chain = store.lineage(path, trial.as_ref())?;
            ctx.emit(&chain, || {
                let mut out = String::new();
                let o = &chain.output;
                let _ = writeln!(out, "output    {} {} ({} bytes)", o.path, o.content_hash.short(12), o.size_bytes);
                let _ = writeln!(out, "trial     {} started {}", chain.trial_id, chain.started_at);
                let _ = writeln!(out, "command   {}", chain.command.join(" "));
                let s = &chain.script;
                let _ = writeln!(out, "script    {} ({}) {}", s.path, s.language, s.content_hash.short(12));
                for e in &chain.consumed {
                    let params = join(e.parameters.iter().map(|p| format!("{}={}", p.name, p.value)));
                    let _ = writeln!(
                        out,
                        "consumed  {} {} params: {params}",
                        e.artifact.path,
                        e.artifact.content_hash.short(12)
                    );
                }
                let env = &chain.environment;
                let _ = writeln!(out, "os        {} {}", env.os.name, env.os.version);
                let _ = writeln!(
                    out,
                    "hardware  {} ({} cores)",
                    env.hardware.cpu_model, env.hardware.logical_cores
                );
                let _ = writeln!(
                    out,
                    "packages  {}",
                    join(env.script_packages.iter().map(|p| format!("{} {}", p.name, p.version)))
                );
                out
            });
        }
        QueryCommand::Trials { script_hash, since, until } => {
            let filter = TrialFilter::parse(script_hash.as_deref(), since.as_deref(), until.as_deref())
                .map_err(Failure::usage)?;
            let trials = store.list_trials(&filter)?;
            ctx.emit(&trials, || {
                let mut out = String::new();
                let _ = writeln!(out, "{:<26}  {:<20}  {:>4}  {:<12}  {:>3}  {:>3}  command", "trial", "started", "exit", "script", "in", "out");
                for t in &trials {
                    let _ = writeln!(
                        out,
                        "{:<26}  {:<20}  {:>4}  {:<12}  {:>3}  {:>3}  {}",
                        t.trial_id.as_str(),
                        t.started_at.to_string(),
                        t.exit_code,
                        t.manifest.script.content_hash.short(12),
                        t.consume_edges.len(),
                        t.produce_edges.len(),
                        t.command.join(" ")
                    );
                }
                out
            });
        }
    }
    Ok(failure::OK)
}

pub fn publish(ctx: &Context, args: &PublishArgs) -> Outcome {
    let dir = &ctx.dir;
    let config = ctx.config()?;
    let defaults = &config.publish;
    let manifest = ctx.manifest()?;
    let bundle_path = dir.join(BUNDLE_FILE);
    let sidecar_path = dir.join(BUNDLE_MANIFEST_FILE);
    if !bundle_path.is_file() || !sidecar_path.is_file() {
        return Err(Failure::usage(format!(
            "no bundle in {}; run `repro pack` first",
            dir.display()
        )));
    }
    let archive = read(&bundle_path)?;
    let bundle = BundleManifest::load(&sidecar_path)?;
    let check = verify_bundle(&archive, &bundle);
    if !check.ok {
        return Err(Failure::io(format!(
            "{} does not match {}; re-run `repro pack`",
            bundle_path.display(),
            sidecar_path.display()
        )));
    }
    let spec = load_envspec(dir)?;
    let export = ctx.open_store()?.export()?;

    let creators = if !args.creators.is_empty() {
        args.creators
            .iter()
            .map(|name| UserInfo { name: name.clone(), identifier: None })
            .collect()
    } else if !defaults.creators.is_empty() {
        defaults.creators.clone()
    } else {
        vec![manifest.user.clone()]
    };
    let keywords = if args.keywords.is_empty() { defaults.keywords.clone() } else { args.keywords.clone() };
    let metadata = PublicationMetadata {
        title: args.title.clone().or_else(|| defaults.title.clone()).unwrap_or_default(),
        creators,
        description: args.description.clone().or_else(|| defaults.description.clone()).unwrap_or_default(),
        license: args.license.clone().or_else(|| defaults.license.clone()).unwrap_or_default(),
        keywords,
        identifier: args.identifier.clone().or_else(|| defaults.identifier.clone()),
    };
    let fair = build_fair_manifest(&bundle, &spec, &export, &metadata)?;
    let publication = assemble_publication(
        dir,
        &PublicationComponents {
            bundle: &archive,
            envspec: &spec,
            store_export: &export,
            fair_manifest: &fair,
        },
    )?;

    let endpoint = args.endpoint.clone().or_else(|| defaults.endpoint.clone());
    let token_env = args
        .token_env
        .clone()
        .or_else(|| defaults.token_env.clone())
        .unwrap_or_else(|| DEFAULT_TOKEN_ENV.to_owned());
    let receipt = match &endpoint {
        Some(endpoint) => Some(deposit(
            &publication,
            endpoint,
            &token_env,
            !args.live,
            &UreqTransport::default(),
        )?),
        None => {
            eprintln!("note: no endpoint given or configured; publication assembled without deposit");
            None
        }
    };
    ctx.emit(
        &json!({
            "publication": publication.display().to_string(),
            "fair_manifest": fair,
            "receipt": receipt,
        }),
        || {
            let mut out = String::new();
            let _ = writeln!(out, "Step 3 (publish): assembled {}", publication.display());
            let _ = writeln!(out, "identifier {}", fair.identifier);
            for f in &fair.accessible.package_files {
                let _ = writeln!(out, "  {}  {}", f.content_hash.short(12), f.name);
            }
            if let Some(r) = &receipt {
                let _ = writeln!(out, "deposit {:?} at {}: {}", r.status, r.endpoint, r.response_summary);
                if let Some(id) = &r.remote_id {
                    let _ = writeln!(out, "remote id {id}");
                }
            }
            out
        },
    );
    match receipt.map(|r| r.status) {
        Some(DepositStatus::Rejected) => Err(Failure::io("the repository rejected the deposit")),
        _ => Ok(failure::OK),
    }
}
