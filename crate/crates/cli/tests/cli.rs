mod common;

use std::fs;

use common::{copy_tree, expect, fixture, initialised_fixture, repro, repro_env, scan_corpus, trial_id};
use repro_core::scan::ScanResult;
use tempfile::TempDir;

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = expect(2, dir.path(), &[]);
    assert!(out.stderr.contains("Usage: repro"));
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    let dir = TempDir::new().unwrap();
    assert!(expect(2, dir.path(), &["frobnicate"]).stderr.contains("frobnicate"));
    expect(2, dir.path(), &["scan", "--no-such-flag", "x.R"]);
    expect(2, dir.path(), &["run"]);
}

#[test]
fn help_names_the_three_steps() {
    let dir = TempDir::new().unwrap();
    let out = expect(0, dir.path(), &["--help"]);
    for step in ["Step 1", "Step 2", "Step 3"] {
        assert!(out.stdout.contains(step), "{step} missing from help");
    }
}

#[test]
fn scan_json_is_a_canonical_scan_result() {
    let dir = TempDir::new().unwrap();
    let script = scan_corpus().join("r06_modelr_setup.R");
    let out = expect(0, dir.path(), &["scan", script.to_str().unwrap(), "--json"]);
    let value = out.canonical_json();
    let parsed: ScanResult = serde_json::from_value(value).unwrap();
    assert!(!parsed.dependencies.is_empty());
    let text = fs::read_to_string(&script).unwrap();
    assert_eq!(parsed.source_hash, repro_core::digest::ContentHash::of_bytes(text.as_bytes()));
}

#[test]
fn scan_syntax_error_exits_4_and_still_reports() {
    let dir = TempDir::new().unwrap();
    let script = dir.path().join("broken.R");
    fs::write(&script, "library(raster)\nx <- \"never closed\n").unwrap();
    let out = expect(4, dir.path(), &["scan", "broken.R"]);
    assert!(out.stdout.contains("raster"));
    assert!(out.stderr.contains("unterminated"));
}

#[test]
fn scan_language_must_be_known() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("x.txt"), "").unwrap();
    expect(2, dir.path(), &["scan", "x.txt"]);
    expect(2, dir.path(), &["scan", "x.txt", "--lang", "cobol"]);
    expect(0, dir.path(), &["scan", "x.txt", "--lang", "python"]);
}

#[test]
fn missing_script_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    expect(3, dir.path(), &["scan", "absent.R"]);
}

#[test]
fn pack_before_init_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    copy_tree(&fixture(), dir.path());
    let out = expect(2, dir.path(), &["pack"]);
    assert!(out.stderr.contains("repro init"));
}

#[test]
fn malformed_lockfile_exits_4() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    fs::write(dir.join("repro.lock"), "R enmsample 3.5.0\n").unwrap();
    let out = expect(4, &dir, &["pack"]);
    assert!(out.stderr.contains("line 1"));
    fs::write(dir.join("reqs.txt"), "numpy=1.0\n").unwrap();
    expect(4, &dir, &["pack", "--lockfile", "reqs.txt"]);
}

#[test]
fn init_refuses_to_overwrite_without_force() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    let args = ["init", "--script", "setup.R", "--user", "Ana Example"];
    expect(2, &dir, &args);
    expect(0, &dir, &[&args[..], &["--force"]].concat());
    expect(2, &dir, &["init", "--script", "setup.R", "--user", "A", "--force", "--param", "noequals"]);
    expect(2, &dir, &["init", "--script", "setup.R", "--user", "A", "--force", "--input", "data/none.csv"]);
}

#[test]
fn every_json_output_is_canonical() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    let d = dir.to_str().unwrap();
    expect(0, &dir, &["init", "--force", "--json", "--script", "setup.R", "--user", "Ana"]).canonical_json();

    let packed = expect(0, &dir, &["--json", "pack"]).canonical_json();
    assert!(packed["bundle"]["bundle_hash"].is_string());
    let restored = root.path().join("restored");
    let unpacked = expect(
        0,
        root.path(),
        &["--json", "unpack", &format!("{d}/experiment.bundle.tar"), restored.to_str().unwrap()],
    )
    .canonical_json();
    assert_eq!(unpacked["bundle_hash"], packed["bundle"]["bundle_hash"]);

    let run = expect(0, &dir, &["--json", "run", "--", "repro-toy-enm", "setup.R"]);
    run.canonical_json();
    let t1 = trial_id(&run);
    let t2 = trial_id(&expect(0, &dir, &["--json", "run", "--", "repro-toy-enm", "setup.R"]));
    let report = expect(0, &dir, &["--json", "verify", &t1, &t2]).canonical_json();
    assert_eq!(report["verdict"], "Repeatable");
    let on_disk = fs::read_to_string(dir.join("verification.report.json")).unwrap();
    assert_eq!(serde_json::from_str::<serde_json::Value>(&on_disk).unwrap(), report);

    expect(0, &dir, &["--json", "env", "generate"]).canonical_json();
    let logged = expect(0, &dir, &["--json", "env", "log", "note", "pinned \"mirror\" #2"]).canonical_json();
    assert_eq!(logged["modification_log"][0]["payload"], "pinned \"mirror\" #2");
    let steps = expect(0, &dir, &["--json", "env", "render"]).canonical_json();
    assert!(steps["steps"].as_array().unwrap().iter().any(|s| s.as_str().unwrap().starts_with("note ")));

    let lineage = expect(0, &dir, &["--json", "query", "lineage", "out/sdmdata.txt"]).canonical_json();
    assert_eq!(lineage["trial_id"], t2.as_str());
    let trials = expect(0, &dir, &["--json", "query", "trials"]).canonical_json();
    assert_eq!(trials.as_array().unwrap().len(), 2);

    expect(0, &dir, &["pack"]);
    let published = expect(0, &dir, &["--json", "publish", "--endpoint", "https://repo.invalid/deposit"]).canonical_json();
    assert_eq!(published["receipt"]["status"], "DryRun");
    assert!(dir.join("deposit.request.json").is_file());
}

#[test]
fn verify_mismatch_exits_1_with_cross_marks() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    let a = trial_id(&expect(0, &dir, &["--json", "run", "--", "repro-toy-enm", "setup.R"]));
    let b = trial_id(&expect(0, &dir, &["--json", "run", "--", "repro-toy-enm", "setup.R", "--seed", "7"]));
    let out = expect(1, &dir, &["verify", &a, &b, "--watch", "out/sdmdata.txt"]);
    assert!(out.stdout.contains("✗"));
    assert!(out.stdout.contains("verdict: NotRepeatable"));
    expect(2, &dir, &["verify", &a, &b, "--watch", "out/never.txt"]);
    expect(2, &dir, &["verify", &a, "not-a-trial-id"]);
}

#[test]
fn access_flags_change_the_levels() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    let a = trial_id(&expect(0, &dir, &["--json", "run", "--", "repro-toy-enm", "setup.R"]));
    let b = trial_id(&expect(0, &dir, &["--json", "run", "--", "repro-toy-enm", "setup.R"]));
    let report = expect(0, &dir, &["--json", "verify", &a, &b, "--no-script-access"]).json();
    let levels: Vec<&str> = report["levels"].as_array().unwrap().iter().map(|l| l.as_str().unwrap()).collect();
    assert!(levels.contains(&"Repeatable"));
    assert!(!levels.contains(&"Modifiable") && !levels.contains(&"Extendable"));
}

#[test]
fn failed_command_is_recorded_with_exit_0() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    let out = expect(0, &dir, &["--json", "run", "--", "sh", "-c", "exit 5"]);
    assert_eq!(out.json()["exit_code"], 5);
    assert!(out.stderr.contains("exited with status 5"));
    expect(3, &dir, &["run", "--", "no-such-program-4711"]);
}

#[test]
fn query_needs_an_existing_store() {
    let dir = TempDir::new().unwrap();
    expect(2, dir.path(), &["query", "trials"]);
    let root = TempDir::new().unwrap();
    let exp = initialised_fixture(root.path());
    expect(0, &exp, &["run", "--", "repro-toy-enm", "setup.R"]);
    let out = expect(2, &exp, &["query", "lineage", "out/sdmdata.tx"]);
    assert!(out.stderr.contains("out/sdmdata.txt"), "near miss expected: {}", out.stderr);
    expect(2, &exp, &["query", "trials", "--since", "yesterday"]);
}

#[test]
fn shared_store_flag_is_respected() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    let store = root.path().join("elsewhere.db");
    expect(0, &dir, &["--store", store.to_str().unwrap(), "run", "--", "repro-toy-enm", "setup.R"]);
    assert!(store.is_file());
    assert!(!dir.join("provenance.db").exists());
}

#[test]
fn tampered_bundle_is_refused() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    expect(0, &dir, &["pack"]);
    let tar = dir.join("experiment.bundle.tar");
    let mut bytes = fs::read(&tar).unwrap();
    let at = bytes.windows(9).position(|w| w == b"Eugenia f").unwrap();
    bytes[at] = b'X';
    fs::write(&tar, bytes).unwrap();
    let dest = root.path().join("restored");
    expect(3, root.path(), &["unpack", tar.to_str().unwrap(), dest.to_str().unwrap()]);
    assert!(!dest.exists());
    expect(3, &dir, &["publish"]);
}

#[test]
fn env_log_requires_a_generated_spec() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    expect(2, &dir, &["env", "log", "note", "x"]);
    expect(0, &dir, &["env", "generate"]);
    expect(2, &dir, &["env", "log", "runtime", "fortran", "77"]);
    expect(0, &dir, &["env", "log", "runtime", "r", "4.0.2"]);
    let rendered = expect(0, &dir, &["env", "render"]).stdout;
    assert!(rendered.trim_end().ends_with("install runtime R 4.0.2"), "{rendered}");
}

#[test]
fn publish_live_without_token_is_a_config_error() {
    let root = TempDir::new().unwrap();
    let dir = initialised_fixture(root.path());
    expect(0, &dir, &["run", "--", "repro-toy-enm", "setup.R"]);
    expect(0, &dir, &["pack"]);
    let out = repro_env(
        &dir,
        &["publish", "--live", "--endpoint", "https://repo.invalid/x", "--token-env", "REPRO_CLI_TEST_NO_TOKEN"],
        &[],
    );
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert!(out.stderr.contains("REPRO_CLI_TEST_NO_TOKEN"));
    fs::remove_dir_all(dir.join("publication")).unwrap();
    let plain_http = repro(&dir, &["publish", "--endpoint", "http://repo.example/x"]);
    assert_eq!(plain_http.code, 2, "{}", plain_http.stderr);
}
