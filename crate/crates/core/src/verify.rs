//! Comparing a reproduction against its original trial.
//!
//! Outputs are compared bit-exactly by content hash. A reproduction is
//! judged Repeatable only when every compared file matches and the entity
//! comparison still reaches the Repeatable level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::digest::ContentHash;
use crate::model::{
    classify_levels, entity_diff, AccessFlags, ArtifactRole, EntityKind, ModelError,
    PreservationSet, ReproLevel,
};
use crate::relpath;
use crate::store::{TrialId, TrialRecord};

pub const REPORT_FILE: &str = "verification.report.json";

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("watched path {0:?} was produced by neither trial")]
    NotFound(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FileStatus {
    Match,
    Mismatch,
    MissingInCandidate,
    ExtraInCandidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileComparison {
    pub path: String,
    pub status: FileStatus,
    pub original_hash: Option<ContentHash>,
    pub candidate_hash: Option<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputComparison {
    /// Sorted by path.
    pub per_file: Vec<FileComparison>,
    pub all_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Repeatable,
    NotRepeatable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub original_trial: TrialId,
    pub candidate_trial: TrialId,
    pub comparison: OutputComparison,
    pub preserved: PreservationSet,
    pub access: AccessFlags,
    pub levels: BTreeSet<ReproLevel>,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_string(self).expect("report serialization is infallible")
    }
}

fn produced(trial: &TrialRecord, include_intermediate: bool) -> BTreeMap<String, ContentHash> {
    trial
        .produce_edges
        .iter()
        .filter(|a| include_intermediate || a.role == ArtifactRole::Output)
        .map(|a| (relpath::to_forward_slashes(&a.path), a.content_hash.clone()))
        .collect()
}

/// Compare produced files by path and hash.
///
/// Without `watched`, every output of either trial is compared. With it,
/// exactly the watched paths are compared, intermediates included.
pub fn compare_outputs(
    original: &TrialRecord,
    candidate: &TrialRecord,
    watched: Option<&[String]>,
) -> Result<OutputComparison, VerifyError> {
    let restrict = watched.is_some();
    let a = produced(original, restrict);
    let b = produced(candidate, restrict);
    let paths: BTreeSet<String> = match watched {
        Some(list) => {
            let mut set = BTreeSet::new();
            for w in list {
                let p = relpath::normalize(w).unwrap_or_else(|_| relpath::to_forward_slashes(w));
                if !a.contains_key(&p) && !b.contains_key(&p) {
                    return Err(VerifyError::NotFound(w.clone()));
                }
                set.insert(p);
            }
            set
        }
        None => a.keys().chain(b.keys()).cloned().collect(),
    };
    let per_file: Vec<FileComparison> = paths
        .into_iter()
        .map(|path| {
            let (oh, ch) = (a.get(&path).cloned(), b.get(&path).cloned());
            let status = match (&oh, &ch) {
                (Some(x), Some(y)) if x == y => FileStatus::Match,
                (Some(_), Some(_)) => FileStatus::Mismatch,
                (Some(_), None) => FileStatus::MissingInCandidate,
                (None, _) => FileStatus::ExtraInCandidate,
            };
            FileComparison {
                path,
                status,
                original_hash: oh,
                candidate_hash: ch,
            }
        })
        .collect();
    let all_match = per_file.iter().all(|f| f.status == FileStatus::Match);
    Ok(OutputComparison { per_file, all_match })
}

pub fn evaluate_reproduction(
    original: &TrialRecord,
    candidate: &TrialRecord,
    access: AccessFlags,
    watched: Option<&[String]>,
) -> Result<VerificationReport, VerifyError> {
    let comparison = compare_outputs(original, candidate, watched)?;
    let preserved = entity_diff(&original.manifest, &candidate.manifest)?;
    let levels = classify_levels(&preserved, access);
    let verdict = if comparison.all_match && levels.contains(&ReproLevel::Repeatable) {
        Verdict::Repeatable
    } else {
        Verdict::NotRepeatable
    };
    Ok(VerificationReport {
        original_trial: original.trial_id.clone(),
        candidate_trial: candidate.trial_id.clone(),
        comparison,
        preserved,
        access,
        levels,
        verdict,
    })
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "✗"
    }
}

fn short(h: &Option<ContentHash>) -> String {
    h.as_ref().map_or_else(|| "-".to_owned(), |h| h.short(12).to_owned())
}

/// Human-readable ✓/✗ table of a report.
pub fn render_table(report: &VerificationReport) -> String {
    let mut out = String::new();
    let w = report
        .comparison
        .per_file
        .iter()
        .map(|f| f.path.chars().count())
        .max()
        .unwrap_or(0)
        .max("file".len());
    let _ = writeln!(out, "original  {}", report.original_trial);
    let _ = writeln!(out, "candidate {}", report.candidate_trial);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<w$}  {:<12}  {:<12}  result", "file", "original", "candidate");
    for f in &report.comparison.per_file {
        let status = match f.status {
            FileStatus::Match => "✓",
            FileStatus::Mismatch => "✗",
            FileStatus::MissingInCandidate => "✗ missing",
            FileStatus::ExtraInCandidate => "✗ extra",
        };
        let _ = writeln!(
            out,
            "{:<w$}  {:<12}  {:<12}  {status}",
            f.path,
            short(&f.original_hash),
            short(&f.candidate_hash)
        );
    }
    let _ = writeln!(out);
    let ew = EntityKind::ALL.iter().map(|k| k.label().len()).max().unwrap_or(0);
    let _ = writeln!(out, "{:<ew$}  preserved", "entity");
    for kind in EntityKind::ALL {
        let _ = writeln!(out, "{:<ew$}  {}", kind.label(), mark(report.preserved.contains(kind)));
    }
    let _ = writeln!(out);
    let lw = ReproLevel::ALL.iter().map(|l| l.label().len()).max().unwrap_or(0);
    let _ = writeln!(out, "{:<lw$}  reached", "level");
    for level in ReproLevel::ALL {
        let _ = writeln!(out, "{:<lw$}  {}", level.label(), mark(report.levels.contains(&level)));
    }
    let _ = writeln!(out);
    let verdict = match report.verdict {
        Verdict::Repeatable => "verdict: Repeatable ✓",
        Verdict::NotRepeatable => "verdict: NotRepeatable ✗",
    };
    let _ = writeln!(out, "{verdict}");
    out
}
