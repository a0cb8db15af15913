//! Report rendering: a metrics table with columns Matcher, Data, Accuracy,
//! Precision, Recall, F1, plus a separate FPR-vs-FNR trade-off table per
//! tool count. Formats: text, CSV, JSON.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{EvalError, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(EvalError::UnsupportedFormat(other.to_string())),
        }
    }
}

fn fmt_ratio(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

/// Matcher-performance table, one row per report.
pub fn render_metrics_table(
    reports: &[MetricsReport],
    format: ReportFormat,
) -> Result<String, EvalError> {
    if format == ReportFormat::Json {
        return Ok(serde_json::to_string_pretty(reports).expect("reports serialize"));
    }
    let header = ["Matcher", "Data", "Accuracy", "Precision", "Recall", "F1"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.matcher_id.to_string(),
                r.dataset_id.clone(),
                fmt_ratio(r.overall.accuracy),
                fmt_ratio(r.overall.precision),
                fmt_ratio(r.overall.recall),
                fmt_ratio(r.overall.f1),
            ]
        })
        .collect();
    Ok(render_rows(&header, &rows, format))
}

/// Under/over-scoping trade-off: one row per (report, tool count) with the
/// false positive rate (over-scoping) and false negative rate
/// (under-scoping).
pub fn render_fpr_fnr_table(
    reports: &[MetricsReport],
    format: ReportFormat,
) -> Result<String, EvalError> {
    let mut entries: Vec<serde_json::Value> = Vec::new();
    let mut rows: Vec<[String; 5]> = Vec::new();
    for report in reports {
        for (n, block) in &report.per_n {
            rows.push([
                report.matcher_id.to_string(),
                report.dataset_id.clone(),
                n.to_string(),
                fmt_ratio(block.fpr),
                fmt_ratio(block.fnr),
            ]);
            entries.push(serde_json::json!({
                "matcher": report.matcher_id,
                "data": report.dataset_id,
                "n_tools": n,
                "fpr": block.fpr,
                "fnr": block.fnr,
            }));
        }
    }
    if format == ReportFormat::Json {
        return Ok(serde_json::to_string_pretty(&entries).expect("entries serialize"));
    }
    let header = ["Matcher", "Data", "Tools", "FPR", "FNR"];
    Ok(render_rows(&header, &rows, format))
}

fn render_rows<const W: usize>(
    header: &[&str; W],
    rows: &[[String; W]],
    format: ReportFormat,
) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "{}", header.join(","));
            for row in rows {
                let _ = writeln!(out, "{}", row.join(","));
            }
            out
        }
        ReportFormat::Text => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in rows {
                for (i, cell) in row.iter().enumerate() {
                    widths[i] = widths[i].max(cell.len());
                }
            }
            let mut out = String::new();
            let mut line = |cells: Vec<&str>| {
                let rendered: Vec<String> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
                    .collect();
                let _ = writeln!(out, "{}", rendered.join("  ").trim_end());
            };
            line(header.to_vec());
            line(widths.iter().map(|_| "-").collect());
            // The separator row above renders single dashes; replace with
            // full-width rules for readability.
            out = {
                let mut lines: Vec<String> = out.lines().map(String::from).collect();
                lines[1] = widths
                    .iter()
                    .map(|w| "-".repeat(*w))
                    .collect::<Vec<_>>()
                    .join("  ");
                lines.join("\n") + "\n"
            };
            for row in rows {
                let rendered: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
                    .collect();
                let _ = writeln!(out, "{}", rendered.join("  ").trim_end());
            }
            out
        }
        ReportFormat::Json => unreachable!("handled by callers"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MatcherId;
    use crate::eval::{ConfusionCounts, MetricsBlock};
    use std::collections::BTreeMap;

    fn report(matcher: MatcherId, dataset: &str, counts: ConfusionCounts) -> MetricsReport {
        let mut per_n = BTreeMap::new();
        per_n.insert(1, MetricsBlock::from_counts(counts));
        MetricsReport {
            matcher_id: matcher,
            dataset_id: dataset.to_string(),
            overall: MetricsBlock::from_counts(counts),
            per_n,
            matcher_errors: 0,
        }
    }

    fn six_reports() -> Vec<MetricsReport> {
        let counts = ConfusionCounts {
            tp: 8,
            fp: 2,
            fn_: 2,
            tn: 8,
        };
        ["val", "test", "toucan"]
            .iter()
            .flat_map(|d| {
                [
                    report(MatcherId::Semsim, d, counts),
                    report(MatcherId::Llmres, d, counts),
                ]
            })
            .collect()
    }

    #[test]
    fn csv_table_has_one_row_per_report() {
        let out = render_metrics_table(&six_reports(), ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "Matcher,Data,Accuracy,Precision,Recall,F1");
        assert_eq!(lines.len(), 7, "header + 6 rows");
        assert_eq!(lines[1], "semsim,val,0.80,0.80,0.80,0.80");
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!(matches!(
            "xlsx".parse::<ReportFormat>(),
            Err(EvalError::UnsupportedFormat(f)) if f == "xlsx"
        ));
    }

    #[test]
    fn json_round_trips_to_identical_reports() {
        let reports = six_reports();
        let out = render_metrics_table(&reports, ReportFormat::Json).unwrap();
        let back: Vec<MetricsReport> = serde_json::from_str(&out).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn fpr_fnr_table_lists_per_n_rows() {
        let counts = ConfusionCounts {
            tp: 8,
            fp: 2,
            fn_: 2,
            tn: 8,
        };
        let mut r = report(MatcherId::Llmres, "test", counts);
        r.per_n.insert(
            2,
            MetricsBlock::from_counts(ConfusionCounts {
                tp: 4,
                fp: 1,
                fn_: 4,
                tn: 7,
            }),
        );
        let out = render_fpr_fnr_table(&[r], ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "Matcher,Data,Tools,FPR,FNR");
        assert_eq!(lines[1], "llmres,test,1,0.20,0.20");
        // n=2: fpr = 1/8 (0.125 renders as 0.12 under round-half-even), fnr = 4/8
        assert_eq!(lines[2], "llmres,test,2,0.12,0.50");
    }

    #[test]
    fn text_table_aligns_columns() {
        let out = render_metrics_table(&six_reports()[..2], ReportFormat::Text).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("Matcher"));
        assert!(lines[1].chars().all(|c| c == '-' || c == ' '));
        assert!(lines[2].contains("semsim"));
    }
}
