//! Evaluation reports: per-keyword rows plus a MEAN row, as CSV and JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub keyword: String,
    pub relevant_r10_clean: f64,
    pub relevant_r10_tth: f64,
    pub trojan_r10_clean: f64,
    pub trojan_r10_tth: f64,
    pub mcs: f64,
}

/// Which model/corpus combination produced and evaluated the attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSetup {
    pub attack_model: String,
    pub attack_corpus: String,
    pub eval_model: String,
    pub eval_corpus: String,
    /// `white-box`, `surrogate-dataset` or `surrogate-model`.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setup: EvalSetup,
    pub rows: Vec<EvalRow>,
    pub mean_row: EvalRow,
    /// Spearman rank correlation between keyword MCS and attacked novel R10.
    pub mcs_spearman: Option<f64>,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>, setup: EvalSetup, mcs_spearman: Option<f64>) -> EvalReport {
        let mean_row = mean_of(&rows);
        EvalReport {
            setup,
            rows,
            mean_row,
            mcs_spearman,
        }
    }
}

pub fn mean_of(rows: &[EvalRow]) -> EvalRow {
    let n = rows.len().max(1) as f64;
    let sum = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    EvalRow {
        keyword: "MEAN".into(),
        relevant_r10_clean: sum(|r| r.relevant_r10_clean),
        relevant_r10_tth: sum(|r| r.relevant_r10_tth),
        trojan_r10_clean: sum(|r| r.trojan_r10_clean),
        trojan_r10_tth: sum(|r| r.trojan_r10_tth),
        mcs: sum(|r| r.mcs),
    }
}

const CSV_HEADER: &str =
    "keyword,relevant_r10_clean,relevant_r10_tth,trojan_r10_clean,trojan_r10_tth,mcs";

/// Comma-separated, header row, LF line endings, MEAN row last.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in report.rows.iter().chain(std::iter::once(&report.mean_row)) {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.6}\n",
            row.keyword,
            row.relevant_r10_clean,
            row.relevant_r10_tth,
            row.trojan_r10_clean,
            row.trojan_r10_tth,
            row.mcs
        ));
    }
    out
}

/// Parses a CSV produced by [`report_to_csv`]; returns (rows, mean_row).
pub fn parse_report_csv(text: &str) -> Result<(Vec<EvalRow>, EvalRow)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("report csv: empty file".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Format(format!("report csv: unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!("report csv: bad row {line:?}")));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("report csv: {e} in {line:?}")))
        };
        rows.push(EvalRow {
            keyword: fields[0].to_string(),
            relevant_r10_clean: num(1)?,
            relevant_r10_tth: num(2)?,
            trojan_r10_clean: num(3)?,
            trojan_r10_tth: num(4)?,
            mcs: num(5)?,
        });
    }
    let mean = rows
        .pop()
        .filter(|r| r.keyword == "MEAN")
        .ok_or_else(|| Error::Format("report csv: missing MEAN row".into()))?;
    Ok((rows, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let rows = vec![
            EvalRow {
                keyword: "red".into(),
                relevant_r10_clean: 100.0,
                relevant_r10_tth: 60.0,
                trojan_r10_clean: 0.0,
                trojan_r10_tth: 100.0,
                mcs: 0.91,
            },
            EvalRow {
                keyword: "bar".into(),
                relevant_r10_clean: 90.0,
                relevant_r10_tth: 70.0,
                trojan_r10_clean: 5.0,
                trojan_r10_tth: 80.0,
                mcs: 0.75,
            },
        ];
        EvalReport::new(
            rows,
            EvalSetup {
                attack_model: "linear/alpha".into(),
                attack_corpus: "alpha".into(),
                eval_model: "linear/alpha".into(),
                eval_corpus: "alpha".into(),
                mode: "white-box".into(),
            },
            Some(0.5),
        )
    }

    #[test]
    fn mean_row_is_the_arithmetic_mean() {
        let report = sample();
        assert_eq!(report.mean_row.keyword, "MEAN");
        assert!((report.mean_row.relevant_r10_clean - 95.0).abs() < 1e-12);
        assert!((report.mean_row.trojan_r10_tth - 90.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trips() {
        let report = sample();
        let csv = report_to_csv(&report);
        let (rows, mean) = parse_report_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].keyword, "red");
        assert!((mean.trojan_r10_tth - report.mean_row.trojan_r10_tth).abs() < 1e-4);
    }

    #[test]
    fn csv_parser_rejects_garbage() {
        assert!(parse_report_csv("nope\n1,2\n").is_err());
        assert!(parse_report_csv("").is_err());
    }
}
