use super::*;
use crate::model::tests::{hash_of, sample_manifest};
use proptest::prelude::*;
use tempfile::TempDir;

fn artifact(path: &str, role: ArtifactRole, content: &str) -> DataArtifact {
    DataArtifact {
        path: path.into(),
        role,
        content_hash: hash_of(content),
        size_bytes: content.len() as u64,
    }
}

fn ts(s: &str) -> Timestamp {
    s.parse().unwrap()
}

fn fixture_trial(started: &str, outputs: &[(&str, &str)]) -> TrialRecord {
    let manifest = sample_manifest();
    let input = manifest.inputs.first().unwrap().clone();
    TrialRecord {
        trial_id: TrialId::generate(),
        command: vec!["Rscript".into(), "setup.R".into()],
        started_at: ts(started),
        finished_at: Timestamp::from_unix(ts(started).unix() + 7).unwrap(),
        exit_code: 0,
        consume_edges: vec![ConsumeEdge {
            artifact: input,
            parameters: manifest.parameters.clone(),
        }],
        produce_edges: outputs
            .iter()
            .map(|(p, c)| artifact(p, ArtifactRole::Output, c))
            .collect(),
        env_vars: [("LANG".to_owned(), "C.UTF-8".to_owned())].into(),
        notes: String::new(),
        manifest,
    }
}

fn fresh() -> (TempDir, StoreHandle) {
    let dir = TempDir::new().unwrap();
    let store = init_store(dir.path()).unwrap();
    (dir, store)
}

fn counts(store: &StoreHandle) -> Vec<u64> {
    schema::TABLES
        .iter()
        .map(|t| store.row_count(t.name).unwrap())
        .collect()
}

#[test]
fn fresh_directory_gets_every_table() {
    let (dir, store) = fresh();
    assert!(dir.path().join(STORE_FILE).is_file());
    let names: BTreeSet<String> = store.table_names().unwrap().into_iter().collect();
    for t in ENTITY_TABLES {
        assert!(names.contains(t), "missing {t}");
    }
    assert_eq!(names.len(), schema::TABLES.len());
}

#[test]
fn init_is_idempotent_and_keeps_data() {
    let (dir, mut store) = fresh();
    let trial = fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a")]);
    store.record_trial(&trial).unwrap();
    drop(store);
    let again = init_store(dir.path()).unwrap();
    assert_eq!(again.load_trial(&trial.trial_id).unwrap(), trial);
}

#[test]
fn unwritable_location_is_io_error() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    // A regular file used as a directory cannot be written even by root.
    let err = init_store(&blocker.join("provenance.db")).err().unwrap();
    assert!(matches!(err, StoreError::Io { .. }), "{err:?}");

    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let ro = dir.path().join("ro");
        fs::create_dir(&ro).unwrap();
        fs::set_permissions(&ro, fs::Permissions::from_mode(0o555)).unwrap();
        let writable = fs::write(ro.join("probe"), b"").is_ok();
        if !writable {
            let err = init_store(&ro).err().unwrap();
            assert!(matches!(err, StoreError::Io { .. }), "{err:?}");
        }
        fs::set_permissions(&ro, fs::Permissions::from_mode(0o755)).unwrap();
    }
}

#[test]
fn other_schema_version_is_refused() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join(STORE_FILE);
    {
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch("CREATE TABLE t (x); PRAGMA user_version = 7;").unwrap();
    }
    match init_store(&path) {
        Err(StoreError::Version { found: 7, expected: 1, .. }) => {}
        other => panic!("{:?}", other.err()),
    }
    let foreign = dir.path().join("foreign.db");
    Connection::open(&foreign).unwrap().execute_batch("CREATE TABLE t (x);").unwrap();
    assert!(matches!(init_store(&foreign), Err(StoreError::Version { found: 0, .. })));
}

#[test]
fn open_requires_existing_store() {
    let dir = TempDir::new().unwrap();
    assert!(matches!(open_store(dir.path()), Err(StoreError::NotFound { .. })));
    init_store(dir.path()).unwrap();
    open_store(dir.path()).unwrap();
}

#[test]
fn one_input_two_outputs() {
    let (_dir, mut store) = fresh();
    let trial = fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a"), ("out/b.txt", "b")]);
    store.record_trial(&trial).unwrap();
    assert_eq!(store.row_count("consume").unwrap(), 1);
    assert_eq!(store.row_count("consume_parameter").unwrap(), 1);
    assert_eq!(store.row_count("produce").unwrap(), 2);
    assert!(store.foreign_key_violations().unwrap().is_empty());
}

#[test]
fn zero_outputs_is_fine() {
    let (_dir, mut store) = fresh();
    let trial = fixture_trial("2020-01-01T00:00:00Z", &[]);
    store.record_trial(&trial).unwrap();
    assert_eq!(store.row_count("produce").unwrap(), 0);
    assert_eq!(store.load_trial(&trial.trial_id).unwrap(), trial);
}

#[test]
fn duplicate_trial_id_conflicts_without_side_effects() {
    let (_dir, mut store) = fresh();
    let trial = fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a")]);
    store.record_trial(&trial).unwrap();
    let before = counts(&store);
    let mut again = trial.clone();
    again.produce_edges.push(artifact("out/new.txt", ArtifactRole::Output, "n"));
    assert!(matches!(store.record_trial(&again), Err(StoreError::Conflict(_))));
    assert_eq!(counts(&store), before);
}

#[test]
fn invalid_trial_names_entity_and_changes_nothing() {
    let (_dir, mut store) = fresh();
    let before = counts(&store);
    let mut bad = fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a")]);
    bad.produce_edges[0].role = ArtifactRole::Input;
    match store.record_trial(&bad) {
        Err(StoreError::Validation { entity, .. }) => assert!(entity.starts_with("produce_edges")),
        other => panic!("{other:?}"),
    }
    let mut bad = fixture_trial("2020-01-01T00:00:00Z", &[]);
    bad.manifest.hardware.logical_cores = 0;
    match store.record_trial(&bad) {
        Err(StoreError::Validation { entity, .. }) => assert_eq!(entity, "hardware.logical_cores"),
        other => panic!("{other:?}"),
    }
    assert_eq!(counts(&store), before);
}

#[test]
fn constraint_failure_midway_rolls_back() {
    let (_dir, mut store) = fresh();
    let first = fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a")]);
    store.record_trial(&first).unwrap();
    let before = counts(&store);
    // Same (path, hash) but a different size: rejected after the trial row was written.
    let mut second = fixture_trial("2020-01-02T00:00:00Z", &[("out/a.txt", "a")]);
    second.produce_edges[0].size_bytes = 99;
    match store.record_trial(&second) {
        Err(StoreError::Validation { entity, .. }) => assert_eq!(entity, "data_artifact"),
        other => panic!("{other:?}"),
    }
    assert_eq!(counts(&store), before);
}

#[test]
fn entities_are_shared_across_trials() {
    let (_dir, mut store) = fresh();
    store.record_trial(&fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a")])).unwrap();
    store.record_trial(&fixture_trial("2020-01-02T00:00:00Z", &[("out/a.txt", "a")])).unwrap();
    assert_eq!(store.row_count("trial").unwrap(), 2);
    for t in ["user", "hardware", "operating_system", "script", "os_package", "script_package"] {
        assert_eq!(store.row_count(t).unwrap(), 1, "{t}");
    }
    // occ.csv and out/a.txt.
    assert_eq!(store.row_count("data_artifact").unwrap(), 2);
}

#[test]
fn lineage_lists_inputs_and_parameters() {
    let (_dir, mut store) = fresh();
    let trial = fixture_trial("2020-01-01T00:00:00Z", &[("out/sdmdata.txt", "sdm")]);
    store.record_trial(&trial).unwrap();
    let chain = store.lineage("out/sdmdata.txt", None).unwrap();
    assert_eq!(chain.trial_id, trial.trial_id);
    assert_eq!(chain.output, trial.produce_edges[0]);
    assert_eq!(chain.consumed.len(), 1);
    assert_eq!(chain.consumed[0].artifact.path, "data/occ.csv");
    assert_eq!(
        chain.consumed[0].parameters,
        [Parameter::new("seed", "512")].into()
    );
    assert_eq!(chain.script, trial.manifest.script);
    assert_eq!(chain.environment.os, trial.manifest.os);
    assert_eq!(chain.environment.hardware, trial.manifest.hardware);
    assert_eq!(chain.environment.script_packages, trial.manifest.script_packages);
    // Separator and `./` spelling do not matter.
    assert_eq!(store.lineage(".\\out\\sdmdata.txt", None).unwrap(), chain);
}

#[test]
fn lineage_picks_latest_trial_unless_told_otherwise() {
    let (_dir, mut store) = fresh();
    let early = fixture_trial("2020-01-01T00:00:00Z", &[("out/sdmdata.txt", "v1")]);
    let late = fixture_trial("2020-03-01T00:00:00Z", &[("out/sdmdata.txt", "v2")]);
    // Insertion order is deliberately reversed.
    store.record_trial(&late).unwrap();
    store.record_trial(&early).unwrap();
    let chain = store.lineage("out/sdmdata.txt", None).unwrap();
    assert_eq!(chain.trial_id, late.trial_id);
    assert_eq!(chain.output.content_hash, hash_of("v2"));
    let chain = store.lineage("out/sdmdata.txt", Some(&early.trial_id)).unwrap();
    assert_eq!(chain.output.content_hash, hash_of("v1"));
}

#[test]
fn lineage_not_found_lists_near_misses() {
    let (_dir, mut store) = fresh();
    store
        .record_trial(&fixture_trial("2020-01-01T00:00:00Z", &[("out/sdmdata.txt", "a"), ("log/run.log", "l")]))
        .unwrap();
    match store.lineage("out/sdmdat.txt", None) {
        Err(StoreError::NotFound { near_misses, .. }) => assert_eq!(near_misses, vec!["out/sdmdata.txt"]),
        other => panic!("{other:?}"),
    }
    match store.lineage("never/produced.bin", None) {
        Err(StoreError::NotFound { near_misses, .. }) => assert!(near_misses.is_empty()),
        other => panic!("{other:?}"),
    }
    // Inputs are consumed, not produced.
    assert!(matches!(store.lineage("data/occ.csv", None), Err(StoreError::NotFound { .. })));
    assert!(matches!(store.lineage("/abs", None), Err(StoreError::Usage(_))));
}

#[test]
fn near_misses_match_basename_or_small_edit() {
    let known: Vec<String> = ["a/result.csv", "b/result.csv", "zzz/other.bin", "out/x.txt"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(near_misses("c/result.csv", &known), vec!["a/result.csv", "b/result.csv"]);
    assert_eq!(near_misses("out/y.txt", &known), vec!["out/x.txt"]);
    assert!(near_misses("nothing-alike-at-all", &known).is_empty());
}

#[test]
fn list_trials_sorts_and_filters() {
    let (_dir, mut store) = fresh();
    assert!(store.list_trials(&TrialFilter::default()).unwrap().is_empty());
    let a = fixture_trial("2020-01-01T00:00:00Z", &[]);
    let b = fixture_trial("2020-02-01T00:00:00Z", &[]);
    let mut c = fixture_trial("2020-03-01T00:00:00Z", &[]);
    c.manifest.script.content_hash = hash_of("edited script");
    for t in [&b, &c, &a] {
        store.record_trial(t).unwrap();
    }
    let all = store.list_trials(&TrialFilter::default()).unwrap();
    assert_eq!(all, vec![c.clone(), b.clone(), a.clone()]);

    let by_hash = TrialFilter {
        script_hash: Some(hash_of("edited script")),
        ..Default::default()
    };
    assert_eq!(store.list_trials(&by_hash).unwrap(), vec![c.clone()]);

    let window = TrialFilter {
        since: Some(ts("2020-01-15T00:00:00Z")),
        until: Some(ts("2020-02-01T00:00:00Z")),
        ..Default::default()
    };
    assert_eq!(store.list_trials(&window).unwrap(), vec![b.clone()]);

    let both = TrialFilter {
        script_hash: Some(hash_of("edited script")),
        until: Some(ts("2020-02-15T00:00:00Z")),
        ..Default::default()
    };
    assert!(store.list_trials(&both).unwrap().is_empty());

    let inverted = TrialFilter {
        since: Some(ts("2021-01-01T00:00:00Z")),
        until: Some(ts("2020-01-01T00:00:00Z")),
        ..Default::default()
    };
    assert!(matches!(store.list_trials(&inverted), Err(StoreError::Usage(_))));
}

#[test]
fn empty_export_lists_every_table() {
    let (_dir, store) = fresh();
    let dump: Value = serde_json::from_str(&store.export().unwrap()).unwrap();
    let tables = dump["tables"].as_object().unwrap();
    for t in ENTITY_TABLES {
        assert_eq!(tables[t], Value::Array(vec![]), "{t}");
    }
    assert_eq!(dump["schema_version"], 1);
}

#[test]
fn export_of_one_trial_holds_exactly_its_rows() {
    let (_dir, mut store) = fresh();
    let trial = fixture_trial("2020-01-01T00:00:00Z", &[("out/a.txt", "a"), ("out/b.txt", "b")]);
    store.record_trial(&trial).unwrap();
    let dump: Value = serde_json::from_str(&store.export().unwrap()).unwrap();
    let t = &dump["tables"];
    assert_eq!(t["trial"].as_array().unwrap().len(), 1);
    assert_eq!(t["trial"][0]["trial_id"], trial.trial_id.as_str());
    assert_eq!(t["produce"].as_array().unwrap().len(), 2);
    assert_eq!(t["consume"].as_array().unwrap().len(), 1);
    assert_eq!(t["consume_parameter"][0]["name"], "seed");
    assert_eq!(t["consume_parameter"][0]["value"], "512");
    assert_eq!(t["data_artifact"].as_array().unwrap().len(), 3);
    assert_eq!(t["user"][0]["name"], "Ana");
}

#[test]
fn import_requires_empty_target_and_matching_format() {
    let (_d1, mut a) = fresh();
    a.record_trial(&fixture_trial("2020-01-01T00:00:00Z", &[("o.txt", "o")])).unwrap();
    let dump = a.export().unwrap();
    assert!(matches!(a.import(&dump), Err(StoreError::Import(_))));
    let (_d2, mut b) = fresh();
    assert!(matches!(b.import("{\"format\":\"other\"}"), Err(StoreError::Import(_))));
    let wrong_version = dump.replace("\"schema_version\":1", "\"schema_version\":2");
    assert!(matches!(b.import(&wrong_version), Err(StoreError::Version { found: 2, .. })));
    let dangling = r#"{"format":"repro-provenance-export","schema_version":1,"tables":{"trial_parameter":[{"trial_id":"X","name":"n","value":"v"}]}}"#;
    assert!(matches!(b.import(dangling), Err(StoreError::Import(_))));
    assert_eq!(b.row_count("trial_parameter").unwrap(), 0);
    b.import(&dump).unwrap();
    assert_eq!(b.export().unwrap(), dump);
}

#[test]
fn concurrent_writers_serialize() {
    let dir = TempDir::new().unwrap();
    init_store(dir.path()).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let path = dir.path().to_path_buf();
            std::thread::spawn(move || {
                let mut store = init_store(&path).unwrap();
                for j in 0..5 {
                    let t = fixture_trial("2020-01-01T00:00:00Z", &[(&format!("out/{i}-{j}.txt"), "x")]);
                    store.record_trial(&t).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let store = open_store(dir.path()).unwrap();
    assert_eq!(store.row_count("trial").unwrap(), 20);
    assert!(store.foreign_key_violations().unwrap().is_empty());
}

fn arb_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ._-]{0,12}"
}

fn arb_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}"
}

fn arb_path() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-z0-9_]{1,6}", 1..4).prop_map(|s| s.join("/"))
}

fn arb_artifact(role: ArtifactRole) -> impl Strategy<Value = DataArtifact> {
    (arb_path(), arb_text(), 0u64..1_000_000).prop_map(move |(path, content, size)| DataArtifact {
        path,
        role,
        content_hash: hash_of(&content),
        size_bytes: size,
    })
}

fn arb_params() -> impl Strategy<Value = BTreeSet<Parameter>> {
    proptest::collection::btree_map(arb_name(), arb_text(), 0..4)
        .prop_map(|m| m.into_iter().map(|(k, v)| Parameter::new(k, v)).collect())
}

prop_compose! {
    fn arb_trial()(
        ident in proptest::option::of("[0-9X-]{1,10}"),
        kernel in proptest::option::of("[0-9.]{1,6}"),
        os_packages in proptest::collection::btree_map(arb_name(), "[0-9.]{1,5}", 0..4),
        functions in proptest::collection::btree_set((arb_name(), any::<bool>(), proptest::option::of(arb_name())), 0..5),
        script_packages in proptest::collection::btree_map((any::<bool>(), arb_name()), "[0-9.]{1,5}", 0..4),
        inputs in proptest::collection::btree_map(arb_path(), arb_artifact(ArtifactRole::Input), 0..3),
        parameters in arb_params(),
        consume in proptest::collection::vec((arb_artifact(ArtifactRole::Input), arb_params()), 0..3),
        produce in proptest::collection::btree_map(arb_path(), (arb_artifact(ArtifactRole::Output), any::<bool>()), 0..4),
        command in proptest::collection::vec(arb_text(), 0..4),
        started in 0i64..2_000_000_000,
        duration in 0i64..100_000,
        exit_code in -5i32..5,
        env in proptest::collection::btree_map("[A-Z_]{1,6}", arb_text(), 0..3),
        notes in arb_text(),
    ) -> TrialRecord {
        let mut manifest = sample_manifest();
        manifest.user.identifier = ident;
        manifest.os.kernel = kernel;
        manifest.os_packages = os_packages.into_iter().map(|(n, v)| OsPackage::new(n, v)).collect();
        manifest.functions = functions
            .into_iter()
            .map(|(n, defined, pkg)| if defined { FunctionInfo::defined(n) } else { FunctionInfo::called(n, pkg) })
            .collect();
        manifest.script_packages = script_packages
            .into_iter()
            .map(|((py, n), v)| ScriptPackage::new(if py { Language::Python } else { Language::R }, n, v))
            .collect();
        manifest.inputs = inputs.into_values().collect();
        manifest.parameters = parameters;
        TrialRecord {
            trial_id: TrialId::generate(),
            manifest,
            command,
            started_at: Timestamp::from_unix(started).unwrap(),
            finished_at: Timestamp::from_unix(started + duration).unwrap(),
            exit_code,
            consume_edges: consume
                .into_iter()
                .map(|(artifact, parameters)| ConsumeEdge { artifact, parameters })
                .collect(),
            produce_edges: produce
                .into_iter()
                .map(|(path, (mut a, inter))| {
                    a.path = path;
                    if inter {
                        a.role = ArtifactRole::Intermediate;
                    }
                    a
                })
                .collect(),
            env_vars: env,
            notes,
        }
    }
}

/// Drop artifacts that would collide on (path, hash) with a different size.
fn consistent(t: &TrialRecord) -> bool {
    let mut seen: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let all = t
        .manifest
        .inputs
        .iter()
        .chain(t.consume_edges.iter().map(|e| &e.artifact))
        .chain(t.produce_edges.iter());
    for a in all {
        if let Some(size) = seen.insert((a.path.as_str(), a.content_hash.as_str()), a.size_bytes) {
            if size != a.size_bytes {
                return false;
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn record_then_load_and_export_round_trip(trial in arb_trial().prop_filter("consistent artifacts", consistent)) {
        let (_d1, mut a) = fresh();
        a.record_trial(&trial).unwrap();
        prop_assert_eq!(&a.load_trial(&trial.trial_id).unwrap(), &trial);
        prop_assert_eq!(a.list_trials(&TrialFilter::default()).unwrap(), vec![trial.clone()]);
        for out in &trial.produce_edges {
            let chain = a.lineage(&out.path, None).unwrap();
            prop_assert_eq!(&chain.output, out);
            prop_assert_eq!(&chain.consumed, &trial.consume_edges);
        }
        prop_assert!(a.foreign_key_violations().unwrap().is_empty());

        let dump = a.export().unwrap();
        let (_d2, mut b) = fresh();
        b.import(&dump).unwrap();
        prop_assert_eq!(b.export().unwrap(), dump);
        prop_assert_eq!(b.load_trial(&trial.trial_id).unwrap(), trial);
    }
}

#[test]
fn write_lock_is_reentrant_per_handle() {
    let (_dir, mut store) = fresh();
    let outer = store.write_lock().unwrap();
    store.record_trial(&fixture_trial("2020-01-01T00:00:00Z", &[])).unwrap();
    drop(outer);
    let file = File::open(&store.lock_path).unwrap();
    // Released once the outer guard is gone.
    file.try_lock().unwrap();
}
