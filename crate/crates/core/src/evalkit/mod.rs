//! Metrics, threshold/epoch sweeps, and report emission.

mod plot;
mod render;

pub use plot::render_f1_plot;
pub use render::{render_comparison, render_report, render_trace_plot, ComparisonRow, SUMMARY_COLUMNS};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::error::{Error, Result};
use crate::par;

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Tallies predicted-positive iff `probability > threshold` (strict, so a
/// threshold of 1.0 yields zero predicted positives).
pub fn confusion(predictions: &[(f64, Label)], threshold: f64) -> Result<ConfusionCounts> {
    if predictions.is_empty() {
        return Err(Error::Precondition(
            "confusion counts are undefined on empty predictions".into(),
        ));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for &(p, label) in predictions {
        let predicted_positive = p > threshold;
        match (predicted_positive, label) {
            (true, Label::Mitosis) => c.tp += 1,
            (true, Label::NonMitosis) => c.fp += 1,
            (false, Label::Mitosis) => c.fn_ += 1,
            (false, Label::NonMitosis) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Precision, recall, F1. Zero-denominator cases return 0 and raise the
/// degenerate flag so reports cannot be silently misread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

pub fn f1(counts: ConfusionCounts) -> Metrics {
    let mut degenerate = false;
    let precision = if counts.tp + counts.fp == 0 {
        degenerate = true;
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let recall = if counts.tp + counts.fn_ == 0 {
        degenerate = true;
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// One (epoch, threshold) cell of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub epoch: u32,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Full sweep result for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub thresholds: Vec<f64>,
    pub epochs: Vec<u32>,
    /// Epochs whose prediction file was absent; listed, never silently
    /// skipped.
    pub missing_epochs: Vec<u32>,
    pub cells: Vec<EvalCell>,
    /// `(epoch, threshold)` of the best F1, ties broken by ascending epoch
    /// then threshold. Absent when no cell exists.
    pub argmax: Option<(u32, f64)>,
}

impl EvalReport {
    pub fn best_cell(&self) -> Option<&EvalCell> {
        let (epoch, threshold) = self.argmax?;
        self.cells
            .iter()
            .find(|c| c.epoch == epoch && c.threshold == threshold)
    }

    pub fn cell(&self, epoch: u32, threshold: f64) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.epoch == epoch && (c.threshold - threshold).abs() < 1e-12)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Unreadable {
            path: path.as_ref().to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One prediction-file row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub probability: f64,
    pub label: Label,
}

/// Writes predictions as `id,probability,label`, one line per sample, full
/// float precision.
pub fn write_predictions(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "id,probability,label")?;
    for row in rows {
        writeln!(f, "{},{:.17e},{}", row.id, row.probability, row.label.as_str())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected id,probability,label",
                path.display(),
                i + 1
            )));
        }
        rows.push(PredictionRow {
            id: parts[0].to_string(),
            probability: parts[1]
                .parse()
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?,
            label: parts[2].parse()?,
        });
    }
    Ok(rows)
}

/// The default threshold grid: 0.50 to 0.99 in steps of 0.01 (0.97, the
/// reference operating point, is on the grid by construction and asserted).
pub fn default_thresholds() -> Vec<f64> {
    let grid: Vec<f64> = (50..=99).map(|i| i as f64 / 100.0).collect();
    debug_assert!(grid.iter().any(|&t| (t - 0.97).abs() < 1e-12));
    grid
}

/// Threshold the sweep grid must contain.
pub const PINNED_THRESHOLD: f64 = 0.97;

/// Runs the full (epoch x threshold) sweep over per-epoch prediction
/// files. Missing files are reported, not skipped silently. Recall is
/// checked to be non-increasing along the threshold axis.
pub fn sweep(
    scenario: &str,
    prediction_files: &[(u32, PathBuf)],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if thresholds.is_empty() {
        return Err(Error::Precondition("threshold grid must not be empty".into()));
    }
    if !thresholds.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Precondition(
            "threshold grid must be strictly increasing".into(),
        ));
    }
    if !thresholds
        .iter()
        .any(|&t| (t - PINNED_THRESHOLD).abs() < 1e-12)
    {
        return Err(Error::Precondition(format!(
            "threshold grid must include the pinned operating point {PINNED_THRESHOLD}"
        )));
    }

    let mut missing_epochs = Vec::new();
    let mut present: Vec<(u32, Vec<(f64, Label)>)> = Vec::new();
    for (epoch, path) in prediction_files {
        if !path.exists() {
            missing_epochs.push(*epoch);
            continue;
        }
        let rows = read_predictions(path)?;
        present.push((
            *epoch,
            rows.into_iter().map(|r| (r.probability, r.label)).collect(),
        ));
    }

    let per_epoch: Vec<Result<Vec<EvalCell>>> = par::map(&present, |(epoch, preds)| {
        let mut cells = Vec::with_capacity(thresholds.len());
        let mut prev_recall = f64::INFINITY;
        let mut prev_positive = usize::MAX;
        for &threshold in thresholds {
            let counts = confusion(preds, threshold)?;
            let metrics = f1(counts);
            assert!(
                metrics.recall <= prev_recall + 1e-12,
                "recall must be non-increasing in threshold"
            );
            let predicted_positive = counts.tp + counts.fp;
            assert!(
                predicted_positive <= prev_positive,
                "predicted positives must be non-increasing in threshold"
            );
            prev_recall = metrics.recall;
            prev_positive = predicted_positive;
            cells.push(EvalCell {
                epoch: *epoch,
                threshold,
                counts,
                metrics,
            });
        }
        Ok(cells)
    });

    let mut cells = Vec::new();
    for c in per_epoch {
        cells.extend(c?);
    }
    let argmax = cells
        .iter()
        .max_by(|a, b| {
            a.metrics
                .f1
                .partial_cmp(&b.metrics.f1)
                .unwrap_or(std::cmp::Ordering::Equal)
                // ties: prefer the earliest epoch, then lowest threshold
                .then_with(|| b.epoch.cmp(&a.epoch))
                .then_with(|| {
                    b.threshold
                        .partial_cmp(&a.threshold)
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        })
        .map(|c| (c.epoch, c.threshold));

    Ok(EvalReport {
        scenario: scenario.to_string(),
        thresholds: thresholds.to_vec(),
        epochs: present.iter().map(|(e, _)| *e).collect(),
        missing_epochs,
        cells,
        argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(spec: &[(f64, Label)]) -> Vec<(f64, Label)> {
        spec.to_vec()
    }

    #[test]
    fn perfect_predictions_have_no_errors_at_half() {
        let p = preds(&[
            (0.9, Label::Mitosis),
            (0.8, Label::Mitosis),
            (0.1, Label::NonMitosis),
            (0.2, Label::NonMitosis),
        ]);
        let c = confusion(&p, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(f1(c).f1, 1.0);
    }

    #[test]
    fn threshold_one_predicts_nothing_positive() {
        let p = preds(&[(1.0, Label::Mitosis), (0.99, Label::NonMitosis)]);
        let c = confusion(&p, 1.0).unwrap();
        assert_eq!(c.tp + c.fp, 0);
    }

    #[test]
    fn hand_built_fixture_yields_exact_counts_and_metrics() {
        // tp=5 (prob .9), fp=5 (prob .9, negative), fn=10 (prob .1, positive)
        let mut p = Vec::new();
        for _ in 0..5 {
            p.push((0.9, Label::Mitosis));
        }
        for _ in 0..5 {
            p.push((0.9, Label::NonMitosis));
        }
        for _ in 0..10 {
            p.push((0.1, Label::Mitosis));
        }
        let c = confusion(&p, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (5, 5, 10, 0));
        let m = f1(c);
        assert_eq!(m.precision, 0.5);
        assert!((m.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_counts_return_zero_with_flag() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 3,
        };
        let m = f1(c);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.degenerate);
    }

    #[test]
    fn perfect_counts_give_unit_f1() {
        let c = ConfusionCounts {
            tp: 4,
            fp: 0,
            fn_: 0,
            tn: 10,
        };
        assert_eq!(f1(c).f1, 1.0);
    }

    #[test]
    fn empty_predictions_error() {
        assert!(confusion(&[], 0.5).is_err());
    }

    #[test]
    fn f1_is_symmetric_in_precision_and_recall() {
        // swapping fp and fn swaps precision and recall; f1 is invariant
        let a = f1(ConfusionCounts {
            tp: 6,
            fp: 2,
            fn_: 9,
            tn: 0,
        });
        let b = f1(ConfusionCounts {
            tp: 6,
            fp: 9,
            fn_: 2,
            tn: 0,
        });
        assert!((a.f1 - b.f1).abs() < 1e-15);
        assert_eq!(a.precision, b.recall);
    }

    #[test]
    fn sweep_requires_the_pinned_threshold() {
        let grid: Vec<f64> = vec![0.5, 0.6];
        let err = sweep("s", &[], &grid);
        assert!(err.is_err());
    }

    #[test]
    fn sweep_grid_matches_independent_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<PredictionRow> = (0..40)
            .map(|i| PredictionRow {
                id: format!("s{i}"),
                probability: (i as f64 + 0.5) / 40.0,
                label: if i % 7 == 0 {
                    Label::Mitosis
                } else {
                    Label::NonMitosis
                },
            })
            .collect();
        let path = dir.path().join("epoch_005.csv");
        write_predictions(&path, &rows).unwrap();
        let report = sweep("t", &[(5, path)], &default_thresholds()).unwrap();
        assert_eq!(report.cells.len(), default_thresholds().len());
        // brute-force recount of one cell
        let cell = report.cell(5, 0.97).unwrap();
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        let mut tn = 0;
        for r in &rows {
            match (r.probability > 0.97, r.label) {
                (true, Label::Mitosis) => tp += 1,
                (true, Label::NonMitosis) => fp += 1,
                (false, Label::Mitosis) => fn_ += 1,
                (false, Label::NonMitosis) => tn += 1,
            }
        }
        assert_eq!((cell.counts.tp, cell.counts.fp), (tp, fp));
        assert_eq!((cell.counts.fn_, cell.counts.tn), (fn_, tn));
        // missing epoch listed
        let report2 = sweep(
            "t",
            &[(9, dir.path().join("absent.csv"))],
            &default_thresholds(),
        )
        .unwrap();
        assert_eq!(report2.missing_epochs, vec![9]);
    }

    #[test]
    fn recall_is_monotone_at_the_extremes() {
        let p = preds(&[
            (0.3, Label::Mitosis),
            (0.7, Label::Mitosis),
            (0.6, Label::NonMitosis),
        ]);
        let low = f1(confusion(&p, 0.0).unwrap()).recall;
        let high = f1(confusion(&p, 1.0).unwrap()).recall;
        assert!(low >= high);
    }

    #[test]
    fn prediction_file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let rows = vec![PredictionRow {
            id: "a".into(),
            probability: 0.123456789012345678,
            label: Label::Mitosis,
        }];
        write_predictions(&path, &rows).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back[0].probability.to_bits(), rows[0].probability.to_bits());
    }
}
