//! Report files: per-scenario curve files and summary tables, plus the
//! cross-scenario comparison. All writers are deterministic (stable order,
//! fixed float formatting, no timestamps) so re-renders are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::evalkit::{plot::render_f1_plot, EvalReport};
use crate::ganlab::TrainingTrace;

/// Pinned column order of the summary table.
pub const SUMMARY_COLUMNS: &str =
    "scenario,epoch,threshold,tp,fp,fn,tn,precision,recall,f1,degenerate";

/// Emits the per-scenario artifacts: an F1 curve file (one line per
/// threshold, one column per epoch), the full summary table, and a plot.
/// Returns the written paths.
pub fn render_report(report: &EvalReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    // curve file: one line per threshold
    let mut curves = String::new();
    write!(curves, "threshold")?;
    for epoch in &report.epochs {
        write!(curves, ",epoch_{epoch}")?;
    }
    writeln!(curves)?;
    for &threshold in &report.thresholds {
        write!(curves, "{threshold:.2}")?;
        for &epoch in &report.epochs {
            match report.cell(epoch, threshold) {
                Some(cell) => write!(curves, ",{:.6}", cell.metrics.f1)?,
                None => write!(curves, ",")?,
            }
        }
        writeln!(curves)?;
    }
    let curve_path = out_dir.join(format!("{}_f1_curves.csv", report.scenario));
    std::fs::write(&curve_path, curves)?;
    written.push(curve_path);

    // summary table, full grid
    let mut table = String::new();
    writeln!(table, "{SUMMARY_COLUMNS}")?;
    for cell in &report.cells {
        writeln!(
            table,
            "{},{},{:.2},{},{},{},{},{:.6},{:.6},{:.6},{}",
            report.scenario,
            cell.epoch,
            cell.threshold,
            cell.counts.tp,
            cell.counts.fp,
            cell.counts.fn_,
            cell.counts.tn,
            cell.metrics.precision,
            cell.metrics.recall,
            cell.metrics.f1,
            cell.metrics.degenerate
        )?;
    }
    let table_path = out_dir.join(format!("{}_summary.csv", report.scenario));
    std::fs::write(&table_path, table)?;
    written.push(table_path);

    // plot: a readable subset of thresholds plus the pinned one
    let mut plot_thresholds: Vec<f64> = report.thresholds.iter().copied().step_by(10).collect();
    if !plot_thresholds.iter().any(|t| (t - 0.97).abs() < 1e-12)
        && report.thresholds.iter().any(|t| (t - 0.97).abs() < 1e-12)
    {
        plot_thresholds.push(0.97);
    }
    let curves: Vec<(f64, Vec<Option<f64>>)> = plot_thresholds
        .iter()
        .map(|&t| {
            let values = report
                .epochs
                .iter()
                .map(|&e| report.cell(e, t).map(|c| c.metrics.f1))
                .collect();
            (t, values)
        })
        .collect();
    let plot_path = out_dir.join(format!("{}_f1.png", report.scenario));
    render_f1_plot(&plot_path, &report.epochs, &curves)?;
    written.push(plot_path);

    Ok(written)
}

/// Plots a training trace (loss and reconstruction curves over epochs) so
/// per-epoch log files have a visual counterpart next to the F1 curves.
pub fn render_trace_plot(trace: &TrainingTrace, path: impl AsRef<Path>) -> Result<()> {
    let epochs: Vec<u32> = trace.records.iter().map(|r| r.epoch).collect();
    let max_loss = trace
        .records
        .iter()
        .map(|r| r.loss.max(r.adv_loss).max(r.recon_loss))
        .fold(f64::MIN_POSITIVE, f64::max);
    let norm = |v: f64| Some(v / max_loss);
    let curves = vec![
        (0.0, trace.records.iter().map(|r| norm(r.loss)).collect()),
        (1.0, trace.records.iter().map(|r| norm(r.adv_loss)).collect()),
        (2.0, trace.records.iter().map(|r| norm(r.recon_loss)).collect()),
    ];
    render_f1_plot(path, &epochs, &curves)
}

/// Scenario status row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    pub present: bool,
    pub best_f1: Option<f64>,
    pub best_epoch: Option<u32>,
    pub best_threshold: Option<f64>,
}

/// Renders every scenario's artifacts plus one comparison table. Scenarios
/// whose report has no cells (all prediction files absent) are marked
/// `absent` rather than dropped. Returns `(written paths, rows)`.
pub fn render_comparison(
    reports: &[EvalReport],
    out_dir: impl AsRef<Path>,
) -> Result<(Vec<PathBuf>, Vec<ComparisonRow>)> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for report in reports {
        written.extend(render_report(report, out_dir)?);
        let best = report.best_cell();
        rows.push(ComparisonRow {
            scenario: report.scenario.clone(),
            present: best.is_some(),
            best_f1: best.map(|c| c.metrics.f1),
            best_epoch: best.map(|c| c.epoch),
            best_threshold: best.map(|c| c.threshold),
        });
    }

    let mut table = String::new();
    writeln!(table, "scenario,status,best_f1,best_epoch,best_threshold")?;
    for row in &rows {
        if row.present {
            writeln!(
                table,
                "{},present,{:.6},{},{:.2}",
                row.scenario,
                row.best_f1.unwrap_or(0.0),
                row.best_epoch.unwrap_or(0),
                row.best_threshold.unwrap_or(0.0)
            )?;
        } else {
            writeln!(table, "{},absent,,,", row.scenario)?;
        }
    }
    let table_path = out_dir.join("comparison.csv");
    std::fs::write(&table_path, table)?;
    written.push(table_path);
    Ok((written, rows))
}
