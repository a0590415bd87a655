//! Deterministic, content-addressed experiment bundles.
//!
//! A bundle is an uncompressed POSIX ustar stream. Entries are regular files
//! only, sorted by path, with mtime, uid and gid zeroed and modes normalized
//! to 0644 or 0755, so the archive bytes depend on nothing but file paths,
//! contents and execute bits. The canonical experiment manifest is always
//! stored as `experiment.manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::canonical;
use crate::capture::DEFAULT_IGNORES;
use crate::config::CONFIG_FILE;
use crate::digest::ContentHash;
use crate::envspec::ENVSPEC_FILE;
use crate::model::{ExperimentManifest, MANIFEST_FILE};
use crate::relpath;
use crate::scan::lockfile::LOCKFILE_NAME;

pub const BUNDLE_FILE: &str = "experiment.bundle.tar";
pub const BUNDLE_MANIFEST_FILE: &str = "experiment.bundle.manifest.json";

const MODE_PLAIN: u32 = 0o644;
const MODE_EXEC: u32 = 0o755;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("bundle integrity check failed at {entry}: {reason}")]
    Integrity { entry: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub path: String,
    pub size_bytes: u64,
    pub content_hash: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    /// Sorted by path.
    pub entries: Vec<BundleEntry>,
    /// SHA-256 of the archive bytes.
    pub bundle_hash: ContentHash,
    pub archive_size_bytes: u64,
    /// Canonical hash of the experiment manifest stored in the bundle.
    pub created_from: ContentHash,
}

impl BundleManifest {
    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_string(self).expect("bundle manifest serialization is infallible")
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| BundleError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleVerification {
    pub ok: bool,
    pub bundle_hash_ok: bool,
    /// Paths whose presence or content disagrees with the manifest.
    pub mismatches: Vec<String>,
}

struct PackFile {
    path: String,
    bytes: Vec<u8>,
    executable: bool,
}

/// Literal include patterns for the portable core of an experiment.
pub fn default_includes(manifest: &ExperimentManifest, declared_inputs: &[String]) -> Vec<String> {
    let mut paths: Vec<String> = vec![manifest.script.path.clone()];
    paths.extend(declared_inputs.iter().cloned());
    paths.extend(manifest.inputs.iter().map(|a| a.path.clone()));
    paths.extend([LOCKFILE_NAME, ENVSPEC_FILE, MANIFEST_FILE, CONFIG_FILE].map(str::to_owned));
    paths.sort();
    paths.dedup();
    paths.iter().map(|p| globset::escape(p)).collect()
}

#[cfg(unix)]
fn is_executable(meta: &fs::Metadata) -> bool {
    use std::os::unix::fs::PermissionsExt;
    meta.permissions().mode() & 0o111 != 0
}

#[cfg(not(unix))]
fn is_executable(_meta: &fs::Metadata) -> bool {
    false
}

fn collect_files(dir: &Path, include: &[String]) -> Result<Vec<PackFile>, BundleError> {
    let mut builder = GlobSetBuilder::new();
    for p in include {
        builder.add(Glob::new(p).map_err(|e| BundleError::Usage(format!("include pattern {p:?}: {e}")))?);
    }
    let includes = builder
        .build()
        .map_err(|e| BundleError::Usage(format!("include patterns: {e}")))?;
    let mut files = Vec::new();
    for item in WalkDir::new(dir).follow_links(false) {
        let entry = item.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            BundleError::Io {
                path,
                source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")),
            }
        })?;
        if entry.depth() == 0 || entry.file_type().is_dir() {
            continue;
        }
        let rel = relpath::relative_to(dir, entry.path()).map_err(|e| BundleError::Usage(e.to_string()))?;
        if !includes.is_match(&rel) || DEFAULT_IGNORES.contains(&rel.as_str()) || rel == MANIFEST_FILE {
            continue;
        }
        if !entry.file_type().is_file() {
            return Err(BundleError::Usage(format!(
                "{rel} is not a regular file; bundles hold regular files only"
            )));
        }
        let meta = fs::metadata(entry.path()).map_err(io_err(entry.path()))?;
        let bytes = fs::read(entry.path()).map_err(io_err(entry.path()))?;
        files.push(PackFile {
            path: rel,
            bytes,
            executable: is_executable(&meta),
        });
    }
    Ok(files)
}

fn header_for(path: &str, size: u64, executable: bool) -> Result<tar::Header, BundleError> {
    let mut header = tar::Header::new_ustar();
    header
        .set_path(path)
        .map_err(|e| BundleError::Usage(format!("{path}: cannot be stored in a ustar header: {e}")))?;
    header.set_entry_type(tar::EntryType::Regular);
    header.set_size(size);
    header.set_mode(if executable { MODE_EXEC } else { MODE_PLAIN });
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_cksum();
    Ok(header)
}

fn write_archive(files: &[PackFile]) -> Result<Vec<u8>, BundleError> {
    let mut builder = tar::Builder::new(Vec::new());
    for f in files {
        let header = header_for(&f.path, f.bytes.len() as u64, f.executable)?;
        builder
            .append(&header, f.bytes.as_slice())
            .map_err(|e| BundleError::Usage(format!("{}: {e}", f.path)))?;
    }
    builder
        .into_inner()
        .map_err(|e| BundleError::Usage(format!("finishing archive: {e}")))
}

fn manifest_of(archive: &[u8], files: &[PackFile]) -> BundleManifest {
    let entries = files
        .iter()
        .map(|f| BundleEntry {
            path: f.path.clone(),
            size_bytes: f.bytes.len() as u64,
            content_hash: ContentHash::of_bytes(&f.bytes),
        })
        .collect();
    let created_from = files
        .iter()
        .find(|f| f.path == MANIFEST_FILE)
        .map(|f| ContentHash::of_bytes(&f.bytes))
        .unwrap_or_else(|| ContentHash::of_bytes(b""));
    BundleManifest {
        entries,
        bundle_hash: ContentHash::of_bytes(archive),
        archive_size_bytes: archive.len() as u64,
        created_from,
    }
}

/// Build the archive for `dir` in memory.
pub fn pack(
    dir: &Path,
    include: &[String],
    manifest: &ExperimentManifest,
) -> Result<(Vec<u8>, BundleManifest), BundleError> {
    if include.is_empty() {
        return Err(BundleError::Usage("include list is empty".into()));
    }
    let mut files = collect_files(dir, include)?;
    if files.is_empty() {
        return Err(BundleError::Usage(format!(
            "include patterns {include:?} match no files in {}",
            dir.display()
        )));
    }
    files.push(PackFile {
        path: MANIFEST_FILE.to_owned(),
        bytes: manifest.to_canonical_json().into_bytes(),
        executable: false,
    });
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let archive = write_archive(&files)?;
    let bundle_manifest = manifest_of(&archive, &files);
    Ok((archive, bundle_manifest))
}

/// Pack and write the archive and its sidecar manifest atomically.
pub fn pack_to_files(
    dir: &Path,
    include: &[String],
    manifest: &ExperimentManifest,
    archive_path: &Path,
    manifest_path: &Path,
) -> Result<BundleManifest, BundleError> {
    let (archive, bm) = pack(dir, include, manifest)?;
    canonical::write_atomic(archive_path, &archive).map_err(io_err(archive_path))?;
    canonical::write_atomic(manifest_path, bm.to_canonical_json().as_bytes())
        .map_err(io_err(manifest_path))?;
    Ok(bm)
}

/// Decode every entry; stops at the first malformed header or body.
fn read_entries(archive: &[u8]) -> (Vec<PackFile>, Option<(String, String)>) {
    let mut files = Vec::new();
    let mut ar = tar::Archive::new(archive);
    let entries = match ar.entries() {
        Ok(e) => e,
        Err(e) => return (files, Some(("<archive>".into(), e.to_string()))),
    };
    let mut last = "<archive start>".to_owned();
    for item in entries {
        let mut entry = match item {
            Ok(e) => e,
            Err(e) => return (files, Some((format!("entry after {last}"), e.to_string()))),
        };
        let path = match entry.path() {
            Ok(p) => p.to_string_lossy().into_owned(),
            Err(e) => return (files, Some((format!("entry after {last}"), e.to_string()))),
        };
        if let Err(e) = relpath::check(&path) {
            return (files, Some((path, e.reason.to_owned())));
        }
        if entry.header().entry_type() != tar::EntryType::Regular {
            return (files, Some((path, "not a regular file".into())));
        }
        let executable = entry.header().mode().map(|m| m & 0o111 != 0).unwrap_or(false);
        let size = entry.size();
        let mut bytes = Vec::with_capacity(size as usize);
        if let Err(e) = entry.read_to_end(&mut bytes) {
            return (files, Some((path, e.to_string())));
        }
        if bytes.len() as u64 != size {
            return (files, Some((path, format!("body truncated at {} of {size} bytes", bytes.len()))));
        }
        last = path.clone();
        files.push(PackFile {
            path,
            bytes,
            executable,
        });
    }
    (files, None)
}

/// Restore `archive` into `dest`, which must be absent or empty.
///
/// With `expected`, every entry is checked against it before anything is
/// written; the first disagreement is reported by path.
pub fn unpack(
    archive: &[u8],
    dest: &Path,
    expected: Option<&BundleManifest>,
) -> Result<BundleManifest, BundleError> {
    if dest.exists() {
        let mut listing = fs::read_dir(dest).map_err(io_err(dest))?;
        if listing.next().is_some() {
            return Err(BundleError::Usage(format!("destination {} is not empty", dest.display())));
        }
    }
    let (files, failure) = read_entries(archive);
    if let Some((entry, reason)) = failure {
        return Err(BundleError::Integrity { entry, reason });
    }
    if let Some(expected) = expected {
        let got: BTreeMap<&str, &PackFile> = files.iter().map(|f| (f.path.as_str(), f)).collect();
        for e in &expected.entries {
            match got.get(e.path.as_str()) {
                None => {
                    return Err(BundleError::Integrity {
                        entry: e.path.clone(),
                        reason: "missing from archive".into(),
                    })
                }
                Some(f) if ContentHash::of_bytes(&f.bytes) != e.content_hash => {
                    return Err(BundleError::Integrity {
                        entry: e.path.clone(),
                        reason: "content hash mismatch".into(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = files.iter().find(|f| !expected.entries.iter().any(|e| e.path == f.path)) {
            return Err(BundleError::Integrity {
                entry: extra.path.clone(),
                reason: "not listed in the bundle manifest".into(),
            });
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for f in &files {
        if !seen.insert(f.path.as_str()) {
            return Err(BundleError::Integrity {
                entry: f.path.clone(),
                reason: "duplicate entry".into(),
            });
        }
    }
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    for f in &files {
        let target = dest.join(&f.path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&target, &f.bytes).map_err(io_err(&target))?;
        set_mode(&target, f.executable)?;
    }
    // Recompute from what is now on disk.
    let mut restored = Vec::with_capacity(files.len());
    for f in &files {
        let target = dest.join(&f.path);
        let bytes = fs::read(&target).map_err(io_err(&target))?;
        restored.push(PackFile {
            path: f.path.clone(),
            bytes,
            executable: f.executable,
        });
    }
    restored.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(manifest_of(archive, &restored))
}

#[cfg(unix)]
fn set_mode(path: &Path, executable: bool) -> Result<(), BundleError> {
    use std::os::unix::fs::PermissionsExt;
    let mode = if executable { MODE_EXEC } else { MODE_PLAIN };
    fs::set_permissions(path, fs::Permissions::from_mode(mode)).map_err(io_err(path))
}

#[cfg(not(unix))]
fn set_mode(_path: &Path, _executable: bool) -> Result<(), BundleError> {
    Ok(())
}

/// Recompute every entry hash and the archive hash. Never fails; problems are report contents.
pub fn verify_bundle(archive: &[u8], manifest: &BundleManifest) -> BundleVerification {
    let bundle_hash_ok = ContentHash::of_bytes(archive) == manifest.bundle_hash;
    let (files, failure) = read_entries(archive);
    let got: BTreeMap<&str, ContentHash> = files
        .iter()
        .map(|f| (f.path.as_str(), ContentHash::of_bytes(&f.bytes)))
        .collect();
    let mut mismatches: Vec<String> = manifest
        .entries
        .iter()
        .filter(|e| got.get(e.path.as_str()) != Some(&e.content_hash))
        .map(|e| e.path.clone())
        .collect();
    for path in got.keys() {
        if !manifest.entries.iter().any(|e| e.path == *path) {
            mismatches.push((*path).to_owned());
        }
    }
    if let Some((entry, _)) = failure {
        if !mismatches.contains(&entry) {
            mismatches.push(entry);
        }
    }
    mismatches.sort();
    mismatches.dedup();
    BundleVerification {
        ok: bundle_hash_ok && mismatches.is_empty(),
        bundle_hash_ok,
        mismatches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::sample_manifest;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn write(dir: &Path, rel: &str, content: &[u8]) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, content).unwrap();
    }

    fn fixture(dir: &Path) {
        write(dir, "setup.R", b"library(raster)\n");
        write(dir, "data/occ.csv", b"sp,lon,lat\na,1,2\n");
        write(dir, "repro.lock", b"R\traster\t2.9\n");
        write(dir, "notes.txt", b"not included\n");
    }

    fn includes() -> Vec<String> {
        default_includes(&sample_manifest(), &[])
    }

    #[test]
    fn default_includes_cover_portable_entities() {
        let inc = includes();
        for p in ["setup.R", "data/occ.csv", "repro.lock", "envspec.json", "experiment.manifest.json", "repro.toml"] {
            assert!(inc.contains(&p.to_owned()), "{p}");
        }
        // Glob metacharacters in literal paths are escaped.
        let mut m = sample_manifest();
        m.script.path = "run[1].R".into();
        assert!(default_includes(&m, &[]).contains(&"run[[]1[]].R".to_owned()));
    }

    #[test]
    fn packs_deterministically_with_normalized_headers() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        let (a, ma) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        let (b, mb) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let paths: Vec<&str> = ma.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["data/occ.csv", "experiment.manifest.json", "repro.lock", "setup.R"]);
        assert_eq!(ma.created_from, sample_manifest().canonical_hash());
        assert_eq!(ma.archive_size_bytes, a.len() as u64);
        assert_eq!(a.len() % 512, 0);
        let mut ar = tar::Archive::new(a.as_slice());
        for e in ar.entries().unwrap() {
            let e = e.unwrap();
            let h = e.header();
            assert_eq!(h.mtime().unwrap(), 0);
            assert_eq!(h.uid().unwrap(), 0);
            assert_eq!(h.gid().unwrap(), 0);
            assert_eq!(h.mode().unwrap(), 0o644);
            assert!(h.as_ustar().is_some());
        }
    }

    #[cfg(unix)]
    #[test]
    fn execute_bit_becomes_0755() {
        use std::os::unix::fs::PermissionsExt;
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        fs::set_permissions(dir.path().join("setup.R"), fs::Permissions::from_mode(0o700)).unwrap();
        let (a, _) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        let mut ar = tar::Archive::new(a.as_slice());
        let modes: BTreeMap<String, u32> = ar
            .entries()
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.path().unwrap().to_string_lossy().into_owned(), e.header().mode().unwrap())
            })
            .collect();
        assert_eq!(modes["setup.R"], 0o755);
        assert_eq!(modes["repro.lock"], 0o644);

        let out = TempDir::new().unwrap();
        let dest = out.path().join("x");
        unpack(&a, &dest, None).unwrap();
        let mode = fs::metadata(dest.join("setup.R")).unwrap().permissions().mode() & 0o777;
        assert_eq!(mode, 0o755);
    }

    #[test]
    fn empty_include_is_usage_error() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        assert!(matches!(pack(dir.path(), &[], &sample_manifest()), Err(BundleError::Usage(_))));
        assert!(matches!(
            pack(dir.path(), &["nothing/*".into()], &sample_manifest()),
            Err(BundleError::Usage(_))
        ));
    }

    #[test]
    fn round_trip_restores_bytes() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        let (archive, bm) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        let out = TempDir::new().unwrap();
        let dest = out.path().join("restored");
        let restored = unpack(&archive, &dest, Some(&bm)).unwrap();
        assert_eq!(restored, bm);
        for p in ["setup.R", "data/occ.csv", "repro.lock"] {
            assert_eq!(fs::read(dest.join(p)).unwrap(), fs::read(dir.path().join(p)).unwrap());
        }
        assert!(!dest.join("notes.txt").exists());
        let on_disk = ExperimentManifest::load(&dest.join(MANIFEST_FILE)).unwrap();
        assert_eq!(on_disk, sample_manifest());
    }

    #[test]
    fn nonempty_destination_is_untouched() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        let (archive, _) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        let out = TempDir::new().unwrap();
        write(out.path(), "existing", b"keep");
        assert!(matches!(unpack(&archive, out.path(), None), Err(BundleError::Usage(_))));
        let names: Vec<_> = fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, ["existing"]);
    }

    fn body_offset(archive: &[u8], path: &str) -> usize {
        let mut ar = tar::Archive::new(archive);
        let entries = ar.entries().unwrap();
        for e in entries {
            let e = e.unwrap();
            if e.path().unwrap().to_string_lossy() == path {
                return e.raw_file_position() as usize;
            }
        }
        panic!("{path} not in archive");
    }

    #[test]
    fn flipped_body_byte_is_detected() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        let (mut archive, bm) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        let off = body_offset(&archive, "repro.lock");
        archive[off] ^= 0x01;
        let report = verify_bundle(&archive, &bm);
        assert!(!report.ok);
        assert!(!report.bundle_hash_ok);
        assert_eq!(report.mismatches, ["repro.lock"]);
        let out = TempDir::new().unwrap();
        match unpack(&archive, &out.path().join("d"), Some(&bm)) {
            Err(BundleError::Integrity { entry, .. }) => assert_eq!(entry, "repro.lock"),
            other => panic!("{other:?}"),
        }
        assert!(!out.path().join("d").exists());
    }

    #[test]
    fn truncated_and_phantom_fail_verification() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        let (archive, bm) = pack(dir.path(), &includes(), &sample_manifest()).unwrap();
        assert_eq!(
            verify_bundle(&archive, &bm),
            BundleVerification { ok: true, bundle_hash_ok: true, mismatches: vec![] }
        );
        let cut = body_offset(&archive, "repro.lock") + 3;
        let truncated = &archive[..cut];
        let report = verify_bundle(truncated, &bm);
        assert!(!report.ok);
        assert!(report.mismatches.contains(&"repro.lock".to_owned()));
        assert!(report.mismatches.contains(&"setup.R".to_owned()));

        let mut phantom = bm.clone();
        phantom.entries.push(BundleEntry {
            path: "ghost.txt".into(),
            size_bytes: 1,
            content_hash: ContentHash::of_bytes(b"g"),
        });
        let report = verify_bundle(&archive, &phantom);
        assert!(!report.ok);
        assert!(report.bundle_hash_ok);
        assert_eq!(report.mismatches, ["ghost.txt"]);
    }

    #[test]
    fn store_and_bundle_outputs_are_never_packed() {
        let dir = TempDir::new().unwrap();
        fixture(dir.path());
        write(dir.path(), BUNDLE_FILE, b"old");
        write(dir.path(), "provenance.db", b"db");
        let (_, bm) = pack(dir.path(), &["**".into()], &sample_manifest()).unwrap();
        let paths: Vec<&str> = bm.entries.iter().map(|e| e.path.as_str()).collect();
        assert!(!paths.contains(&BUNDLE_FILE));
        assert!(!paths.contains(&"provenance.db"));
        assert!(paths.contains(&"notes.txt"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn creation_order_never_changes_bytes(
            files in proptest::collection::btree_map("[a-z]{1,5}", proptest::collection::vec(any::<u8>(), 0..300), 1..6),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = TempDir::new().unwrap();
            let b = TempDir::new().unwrap();
            for (p, bytes) in &files {
                write(a.path(), &format!("d/{p}"), bytes);
            }
            let mut shuffled: Vec<_> = files.iter().collect();
            shuffled.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
            for (p, bytes) in shuffled {
                write(b.path(), &format!("d/{p}"), bytes);
            }
            let inc = vec!["d/*".to_owned()];
            let (xa, ma) = pack(a.path(), &inc, &sample_manifest()).unwrap();
            let (xb, mb) = pack(b.path(), &inc, &sample_manifest()).unwrap();
            prop_assert_eq!(&xa, &xb);
            prop_assert_eq!(&ma, &mb);
            prop_assert!(verify_bundle(&xa, &ma).ok);
            let out = TempDir::new().unwrap();
            unpack(&xa, out.path(), Some(&ma)).unwrap();
            for (p, bytes) in &files {
                prop_assert_eq!(&fs::read(out.path().join(format!("d/{p}"))).unwrap(), bytes);
            }
        }
    }
}
