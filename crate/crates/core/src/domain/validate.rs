//! Sample validation against the domain invariants.

use crate::domain::{CorpusStore, Patch, SampleRecord, PATCH_SIDE};
use crate::error::Error;

/// A single violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Patch is not 100x100x3.
    Shape(String),
    /// Pixel outside [0,1] or non-finite.
    Range(String),
    /// Patch stain disagrees with the record.
    StainMismatch(String),
    /// Pair points to same-stain or differently located counterpart.
    PairInconsistent(String),
    /// paired_ref names a record absent from the manifest.
    PairMissing(String),
    /// Record's source_id appears under more than one split.
    SplitLeakage(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Shape(m) => write!(f, "shape: {m}"),
            Violation::Range(m) => write!(f, "range: {m}"),
            Violation::StainMismatch(m) => write!(f, "stain: {m}"),
            Violation::PairInconsistent(m) => write!(f, "pair: {m}"),
            Violation::PairMissing(m) => write!(f, "pair-missing: {m}"),
            Violation::SplitLeakage(m) => write!(f, "split-leakage: {m}"),
        }
    }
}

/// Result of validating one record: ok, a list of violations, or a distinct
/// unreadable outcome when the patch file cannot be opened.
#[derive(Debug)]
pub enum ValidationOutcome {
    Ok,
    Violations(Vec<Violation>),
    Unreadable(std::path::PathBuf),
}

impl ValidationOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationOutcome::Ok)
    }
}

/// Validates one record and its loaded patch against the full invariant set
/// (shape, range, stain/pair consistency, split leakage within the store's
/// manifest).
pub fn validate_sample(store: &CorpusStore, record: &SampleRecord) -> ValidationOutcome {
    let patch = match store.load_patch(record) {
        Ok(p) => p,
        Err(Error::Unreadable { path, .. }) => return ValidationOutcome::Unreadable(path),
        Err(e) => {
            return ValidationOutcome::Violations(vec![Violation::Range(e.to_string())]);
        }
    };
    let mut violations = check_patch(record, &patch);

    if let Some(paired_ref) = &record.paired_ref {
        match store.record_by_ref(paired_ref) {
            None => violations.push(Violation::PairMissing(paired_ref.clone())),
            Some(paired) => {
                if paired.stain != record.stain.opposite() {
                    violations.push(Violation::PairInconsistent(format!(
                        "paired record has stain {}, expected {}",
                        paired.stain,
                        record.stain.opposite()
                    )));
                }
                if paired.source_id != record.source_id
                    || (paired.center_row, paired.center_col)
                        != (record.center_row, record.center_col)
                {
                    violations.push(Violation::PairInconsistent(
                        "paired record has different source_id or center".into(),
                    ));
                }
            }
        }
    }

    let leaks = store.manifest().split_leaks();
    if leaks.iter().any(|s| s == &record.source_id) {
        violations.push(Violation::SplitLeakage(record.source_id.clone()));
    }

    if violations.is_empty() {
        ValidationOutcome::Ok
    } else {
        ValidationOutcome::Violations(violations)
    }
}

fn check_patch(record: &SampleRecord, patch: &Patch) -> Vec<Violation> {
    let mut violations = Vec::new();
    let shape = patch.pixels.shape();
    if shape != [PATCH_SIDE, PATCH_SIDE, 3] {
        violations.push(Violation::Shape(format!(
            "expected {PATCH_SIDE}x{PATCH_SIDE}x3, got {shape:?}"
        )));
    }
    if patch.pixels.iter().any(|v| !v.is_finite()) {
        violations.push(Violation::Range("non-finite pixel".into()));
    } else if patch
        .pixels
        .iter()
        .any(|v| !(0.0..=1.0).contains(v))
    {
        violations.push(Violation::Range("pixel outside [0,1]".into()));
    }
    if patch.stain != record.stain {
        violations.push(Violation::StainMismatch(format!(
            "patch tagged {}, record says {}",
            patch.stain, record.stain
        )));
    }
    violations
}
