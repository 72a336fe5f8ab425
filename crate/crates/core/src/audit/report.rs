use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::AuditMetadata;
use crate::error::{Error, Result};
use crate::fairness::points;

/// One decision source's row. `None` means the cell was not computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub c_ar: Option<f64>,
    pub c_of: Option<f64>,
}

impl ReportRow {
    pub fn empty(source: impl Into<String>) -> Self {
        ReportRow {
            source: source.into(),
            precision: None,
            recall: None,
            f1: None,
            accuracy: None,
            c_ar: None,
            c_of: None,
        }
    }

    fn cells(&self) -> [Option<f64>; 6] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.accuracy,
            self.c_ar,
            self.c_of,
        ]
    }
}

pub const COLUMNS: [&str; 6] = ["P", "R", "F1", "A", "C(AR)", "C(OF)"];

/// Per-source results plus everything needed to rerun them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<ReportRow>,
    pub metadata: AuditMetadata,
}

impl AuditReport {
    pub fn row(&self, source: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    pub fn sources(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.source.clone()).collect()
    }

    /// Every present cell lies in [0, 1] and no source repeats.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.source.as_str()) {
                return Err(Error::DuplicateId(row.source.clone()));
            }
            for (name, cell) in COLUMNS.iter().zip(row.cells()) {
                if let Some(v) = cell {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Precondition(format!(
                            "{} {name} = {v} outside [0, 1]",
                            row.source
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

fn cell4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn cell_full(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Renders the report. Markdown rounds to four decimals; JSON and CSV keep full
/// precision.
pub fn render_report(report: &AuditReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = String::from("source,precision,recall,f1,accuracy,c_ar,c_of\n");
            for row in &report.rows {
                let cells: Vec<String> = row.cells().into_iter().map(cell_full).collect();
                let _ = writeln!(s, "{},{}", csv_field(&row.source), cells.join(","));
            }
            Ok(s)
        }
        ReportFormat::Markdown => {
            let mut s = format!("| Model | {} |\n", COLUMNS.join(" | "));
            s.push_str("|---|---|---|---|---|---|---|\n");
            for row in &report.rows {
                let cells: Vec<String> = row.cells().into_iter().map(cell4).collect();
                let _ = writeln!(s, "| {} | {} |", row.source, cells.join(" | "));
            }
            if !report.rows.is_empty() {
                s.push_str("\n`-` marks a cell that was not computed. Precision, recall or F1 with a zero denominator is reported as 0.\n");
            }
            Ok(s)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Column-wise `a - b`. Metric deltas are plain differences, consistency deltas are in
/// percentage points. A delta is absent when either side is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceComparison {
    pub a: String,
    pub b: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub c_ar_points: Option<f64>,
    pub c_of_points: Option<f64>,
}

pub fn compare_sources(report: &AuditReport, a: &str, b: &str) -> Result<SourceComparison> {
    let find = |name: &str| {
        report.row(name).ok_or_else(|| Error::UnknownSource {
            name: name.to_string(),
            available: report.sources(),
        })
    };
    let (ra, rb) = (find(a)?, find(b)?);
    let diff = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    let gap = |x: Option<f64>, y: Option<f64>| Some(points(x?, y?));
    Ok(SourceComparison {
        a: a.to_string(),
        b: b.to_string(),
        precision: diff(ra.precision, rb.precision),
        recall: diff(ra.recall, rb.recall),
        f1: diff(ra.f1, rb.f1),
        accuracy: diff(ra.accuracy, rb.accuracy),
        c_ar_points: gap(ra.c_ar, rb.c_ar),
        c_of_points: gap(ra.c_of, rb.c_of),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> AuditReport {
        AuditReport {
            rows: vec![
                ReportRow {
                    source: "model:birnn".into(),
                    precision: Some(0.80731),
                    recall: Some(0.7),
                    f1: Some(0.75),
                    accuracy: Some(0.8),
                    c_ar: Some(0.8073),
                    c_of: Some(0.7797),
                },
                ReportRow {
                    c_ar: Some(0.5632),
                    c_of: None,
                    ..ReportRow::empty("human:AR")
                },
            ],
            metadata: AuditMetadata::default(),
        }
    }

    #[test]
    fn markdown_rounds_and_marks_absent() {
        let md = render_report(&report(), ReportFormat::Markdown).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Model | P | R | F1 | A | C(AR) | C(OF) |");
        assert_eq!(
            lines[2],
            "| model:birnn | 0.8073 | 0.7000 | 0.7500 | 0.8000 | 0.8073 | 0.7797 |"
        );
        assert_eq!(lines[3], "| human:AR | - | - | - | - | 0.5632 | - |");
    }

    #[test]
    fn empty_markdown_is_header_only() {
        let empty = AuditReport {
            rows: vec![],
            metadata: AuditMetadata::default(),
        };
        let md = render_report(&empty, ReportFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 2);
        assert!(md.starts_with("| Model |"));
    }

    #[test]
    fn json_round_trip_and_csv_rows() {
        let r = report();
        let back: AuditReport = serde_json::from_str(&render_report(&r, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = render_report(&r, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().nth(2).unwrap(), "human:AR,,,,,0.5632,");
    }

    #[test]
    fn comparisons() {
        let r = report();
        let same = compare_sources(&r, "model:birnn", "model:birnn").unwrap();
        assert_eq!(same.precision, Some(0.0));
        assert_eq!(same.c_of_points, Some(0.0));
        let c = compare_sources(&r, "model:birnn", "human:AR").unwrap();
        assert!((c.c_ar_points.unwrap() - 24.41).abs() < 1e-9);
        assert_eq!(c.c_of_points, None);
        assert_eq!(c.accuracy, None);
        let err = compare_sources(&r, "model:knn", "human:AR").unwrap_err();
        assert!(err.to_string().contains("human:AR"));
    }

    #[test]
    fn validation_catches_out_of_range() {
        let mut r = report();
        r.validate().unwrap();
        r.rows[0].f1 = Some(1.5);
        assert!(r.validate().is_err());
    }
}
