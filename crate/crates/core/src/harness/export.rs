use std::io;
use std::path::Path;

use thiserror::Error;

use super::TrialReport;

pub const CSV_COLUMNS: [&str; 11] = [
    "trial_id",
    "events_total",
    "threats_injected",
    "detected",
    "undetected",
    "false_positives",
    "detection_ratio",
    "detection_rate",
    "work_units_local",
    "work_units_offloaded",
    "work_ratio",
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("nothing to export")]
    Empty,
    #[error("writing {path}: {source}")]
    Io { path: String, source: io::Error },
}

fn ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"))
}

/// The CSV text: header plus one row per report, fixed four-decimal floats
/// and `N/A` where a ratio is undefined.
pub fn render_csv(reports: &[TrialReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in reports {
        w.write_record([
            r.trial_id.to_string(),
            r.events_total.to_string(),
            r.threats_injected.to_string(),
            r.detected.to_string(),
            r.undetected.to_string(),
            r.false_positives.to_string(),
            ratio(r.detection_ratio),
            ratio(r.detection_rate),
            r.work_units_local.to_string(),
            r.work_units_offloaded.to_string(),
            ratio(r.work_ratio),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn export_results(reports: &[TrialReport], path: &Path) -> Result<(), ExportError> {
    if reports.is_empty() {
        return Err(ExportError::Empty);
    }
    std::fs::write(path, render_csv(reports))
        .map_err(|source| ExportError::Io { path: path.display().to_string(), source })
}
