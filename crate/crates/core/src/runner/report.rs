//! Result tables, one row per run, in the published column order.

use super::{Result, RunnerError};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub score: Option<f64>,
    pub efficacy: f64,
    pub generality: Option<f64>,
    pub locality: Option<f64>,
    pub fluency: Option<f64>,
    pub consistency: Option<f64>,
    pub time_per_edit_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl TableFormat {
    pub fn parse(tag: &str) -> Result<TableFormat> {
        match tag {
            "md" | "markdown" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(RunnerError::Usage(format!(
                "unknown table format {other:?} (expected md or csv)"
            ))),
        }
    }
}

const COLUMNS: &[&str] = &[
    "method",
    "score",
    "efficacy",
    "generality",
    "locality",
    "fluency",
    "consistency",
    "time_per_edit_s",
];

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.1}"),
        None => "-".to_string(),
    }
}

pub fn render_table(rows: &[ReportRow], format: TableFormat) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                cell(r.score),
                cell(Some(r.efficacy)),
                cell(r.generality),
                cell(r.locality),
                cell(r.fluency),
                cell(r.consistency),
                format!("{:.3}", r.time_per_edit_s),
            ]
        })
        .collect();
    match format {
        TableFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!("| {} |\n", COLUMNS.join(" | ")));
            out.push_str(&format!("|{}\n", " --- |".repeat(COLUMNS.len())));
            for row in body {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
        TableFormat::Csv => {
            let mut out = String::new();
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for row in body {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ReportRow {
        ReportRow {
            method: "saul_r".into(),
            score: Some(87.66),
            efficacy: 99.6,
            generality: Some(92.8),
            locality: Some(74.6),
            fluency: Some(600.7),
            consistency: None,
            time_per_edit_s: 0.4321,
        }
    }

    #[test]
    fn markdown_and_csv_hold_identical_numeric_content() {
        let rows = [row()];
        let md = render_table(&rows, TableFormat::Markdown);
        let csv = render_table(&rows, TableFormat::Csv);
        let md_cells: Vec<String> = md
            .lines()
            .nth(2)
            .unwrap()
            .trim_matches('|')
            .split('|')
            .map(|c| c.trim().to_string())
            .collect();
        let csv_cells: Vec<String> = csv
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(String::from)
            .collect();
        assert_eq!(md_cells, csv_cells);
        assert!(md_cells.contains(&"87.7".to_string()));
        assert!(md_cells.contains(&"-".to_string()));
    }

    #[test]
    fn header_order_matches_published_layout() {
        let csv = render_table(&[], TableFormat::Csv);
        assert_eq!(
            csv.trim_end(),
            "method,score,efficacy,generality,locality,fluency,consistency,time_per_edit_s"
        );
    }

    #[test]
    fn unedited_reference_row_formats_in_table_layout() {
        // Published pre-edit reference constants, used as a formatting
        // fixture only.
        let rows = [ReportRow {
            method: "none".into(),
            score: Some(22.4),
            efficacy: 15.2,
            generality: Some(17.7),
            locality: Some(83.5),
            fluency: Some(622.4),
            consistency: Some(29.4),
            time_per_edit_s: 0.0,
        }];
        let csv = render_table(&rows, TableFormat::Csv);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "none,22.4,15.2,17.7,83.5,622.4,29.4,0.000"
        );
    }

    #[test]
    fn format_tags_parse() {
        assert_eq!(TableFormat::parse("md").unwrap(), TableFormat::Markdown);
        assert_eq!(TableFormat::parse("csv").unwrap(), TableFormat::Csv);
        assert!(TableFormat::parse("tsv").is_err());
    }
}
