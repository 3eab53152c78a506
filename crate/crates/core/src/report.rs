//! Score tables as CSV, Markdown and JSON lines, plus per-CWE chart data.
//!
//! Human tables show values rounded half-to-even at 4 decimals. The JSON
//! lines file keeps full precision and is enough to regenerate every other
//! output byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cwe::CweId;
use crate::scoring::{top_k, MatchConfig, ScoreReport, SourceScore};

pub const TABLES_CSV: &str = "tables.csv";
pub const TABLES_MD: &str = "tables.md";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const PER_CWE_CSV: &str = "per_cwe.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metrics line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Jsonl,
    Markdown,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Jsonl, Format::Markdown];
}

/// A score report under a name such as `binary` or `labeled`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub name: String,
    pub report: ScoreReport,
}

/// Half-to-even rounding at 4 decimals, applied to the scaled binary value.
pub fn round4(x: f64) -> f64 {
    (x * 10_000.0).round_ties_even() / 10_000.0
}

pub fn fmt4(x: f64) -> String {
    format!("{:.4}", round4(x))
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// `table,source,precision,recall,f1`, one row per scored source.
pub fn render_csv(tables: &[ScoreTable]) -> String {
    let mut rows = vec![["table", "source", "precision", "recall", "f1"]
        .map(String::from)
        .to_vec()];
    for t in tables {
        for s in &t.report.sources {
            rows.push(vec![
                t.name.clone(),
                s.source.display_name(),
                fmt4(s.metrics.precision),
                fmt4(s.metrics.recall),
                fmt4(s.metrics.f1),
            ]);
        }
    }
    csv_string(rows)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn describe(cfg: &MatchConfig) -> String {
    format!(
        "line tolerance {}, CWE must match: {}, unmatchable findings count as FP: {}",
        cfg.line_tolerance,
        yes_no(cfg.require_cwe),
        yes_no(cfg.unresolved_line_is_fp)
    )
}

pub fn render_markdown(tables: &[ScoreTable]) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "## {}\n", t.name);
        let _ = writeln!(out, "Match rule: {}.\n", describe(&t.report.config));
        out.push_str("| Tool | Precision | Recall | F1-score |\n");
        out.push_str("|---|---:|---:|---:|\n");
        for s in &t.report.sources {
            let flag = if s.metrics.is_degenerate() { " *" } else { "" };
            let _ = writeln!(
                out,
                "| {}{flag} | {} | {} | {} |",
                s.source.display_name(),
                fmt4(s.metrics.precision),
                fmt4(s.metrics.recall),
                fmt4(s.metrics.f1)
            );
        }
        if t.report.sources.iter().any(|s| s.metrics.is_degenerate()) {
            out.push_str("\n\\* a ratio had a zero denominator and is shown as 0.\n");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MetricsLine {
    Table {
        table: String,
        config: MatchConfig,
        truth_frequency: BTreeMap<CweId, u64>,
    },
    Source {
        table: String,
        score: SourceScore,
    },
}

/// One `table` line per table followed by one `source` line per source.
pub fn render_jsonl(tables: &[ScoreTable]) -> String {
    let mut out = String::new();
    let mut push = |line: &MetricsLine| {
        out.push_str(&serde_json::to_string(line).expect("metrics serialize"));
        out.push('\n');
    };
    for t in tables {
        push(&MetricsLine::Table {
            table: t.name.clone(),
            config: t.report.config,
            truth_frequency: t.report.truth_frequency.clone(),
        });
        for s in &t.report.sources {
            push(&MetricsLine::Source {
                table: t.name.clone(),
                score: s.clone(),
            });
        }
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<ScoreTable>, ReportError> {
    let mut tables: Vec<ScoreTable> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| ReportError::Parse { line: i + 1, message };
        let line: MetricsLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        match line {
            MetricsLine::Table {
                table,
                config,
                truth_frequency,
            } => tables.push(ScoreTable {
                name: table,
                report: ScoreReport {
                    config,
                    truth_frequency,
                    sources: Vec::new(),
                },
            }),
            MetricsLine::Source { table, score } => match tables.last_mut() {
                Some(t) if t.name == table => t.report.sources.push(score),
                _ => return Err(err(format!("source row for table {table:?} outside its table"))),
            },
        }
    }
    Ok(tables)
}

/// `cwe,f1,source` for the `k` most frequent truth CWEs of every table that
/// matches on CWE.
pub fn render_per_cwe_csv(tables: &[ScoreTable], k: usize) -> String {
    let mut rows = vec![["cwe", "f1", "source"].map(String::from).to_vec()];
    for t in tables.iter().filter(|t| t.report.config.require_cwe) {
        let top = top_k(&t.report.truth_frequency, k);
        for s in &t.report.sources {
            for cwe in &top {
                let f1 = s.cwe(*cwe).map_or(0.0, |c| c.metrics.f1);
                rows.push(vec![cwe.to_string(), fmt4(f1), s.source.display_name()]);
            }
        }
    }
    csv_string(rows)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn emit_tables(
    tables: &[ScoreTable],
    dir: &Path,
    formats: &[Format],
) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    for f in formats {
        written.push(match f {
            Format::Csv => write(dir, TABLES_CSV, &render_csv(tables))?,
            Format::Jsonl => write(dir, METRICS_JSONL, &render_jsonl(tables))?,
            Format::Markdown => write(dir, TABLES_MD, &render_markdown(tables))?,
        });
    }
    Ok(written)
}

pub fn emit_per_cwe_chart_data(tables: &[ScoreTable], dir: &Path, k: usize) -> Result<PathBuf, ReportError> {
    write(dir, PER_CWE_CSV, &render_per_cwe_csv(tables, k))
}

/// Rewrites the tables and chart data in `dir` from its `metrics.jsonl`.
pub fn regenerate(dir: &Path, k: usize) -> Result<Vec<ScoreTable>, ReportError> {
    let path = dir.join(METRICS_JSONL);
    let text = std::fs::read_to_string(&path).map_err(|source| ReportError::Io { path, source })?;
    let tables = parse_jsonl(&text)?;
    emit_tables(&tables, dir, &[Format::Csv, Format::Markdown])?;
    emit_per_cwe_chart_data(&tables, dir, k)?;
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GroundTruthLabel;
    use crate::sast::{Finding, Source};
    use crate::scoring::{score_sources, ConfusionCounts, MetricTriple};

    fn cwe(n: u32) -> CweId {
        CweId::new(n).unwrap()
    }

    fn semgrep_row() -> ScoreTable {
        let m = MetricTriple::from_precision_recall(0.4682, 0.1123);
        ScoreTable {
            name: "labeled".into(),
            report: ScoreReport {
                config: MatchConfig::labeled(),
                truth_frequency: BTreeMap::new(),
                sources: vec![SourceScore {
                    source: Source::Semgrep,
                    counts: ConfusionCounts::default(),
                    metrics: MetricTriple { f1: 0.1812, ..m },
                    per_cwe: vec![],
                }],
            },
        }
    }

    #[test]
    fn half_even() {
        // Scaled values 1811.5, 2.5 and 3.5 are exact ties.
        assert_eq!(fmt4(0.18115), "0.1812");
        assert_eq!(fmt4(0.00025), "0.0002");
        assert_eq!(fmt4(0.00035), "0.0004");
        assert_eq!(fmt4(0.00005), "0.0000");
        assert_eq!(fmt4(0.5), "0.5000");
        assert_eq!(fmt4(0.12345678), "0.1235");
    }

    #[test]
    fn csv_row() {
        let csv = render_csv(&[semgrep_row()]);
        assert!(csv.contains("Semgrep,0.4682,0.1123,0.1812\n"), "{csv}");
        assert_eq!(render_csv(&[]), "table,source,precision,recall,f1\n");
        assert_eq!(render_per_cwe_csv(&[], 6), "cwe,f1,source\n");
    }

    #[test]
    fn markdown_layout() {
        let md = render_markdown(&[semgrep_row()]);
        assert!(md.contains("| Tool | Precision | Recall | F1-score |"));
        assert!(md.contains("| Semgrep | 0.4682 | 0.1123 | 0.1812 |"));
        assert_eq!(render_markdown(&[]), "");
    }

    fn scored() -> Vec<ScoreTable> {
        let truth: Vec<GroundTruthLabel> = [(78, 1), (78, 2), (89, 3), (22, 4)]
            .into_iter()
            .map(|(c, line)| GroundTruthLabel {
                file_id: "f".into(),
                cwe: cwe(c),
                line,
            })
            .collect();
        let mut findings = BTreeMap::new();
        findings.insert(
            Source::Bandit,
            vec![
                Finding::new(Source::Bandit, "f", Some(cwe(78)), Some(1), "B602"),
                Finding::new(Source::Bandit, "f", None, Some(9), "B101"),
            ],
        );
        findings.insert(Source::Semgrep, vec![]);
        vec![
            ScoreTable {
                name: "binary".into(),
                report: score_sources(&findings, &truth, &MatchConfig::binary()),
            },
            ScoreTable {
                name: "labeled".into(),
                report: score_sources(&findings, &truth, &MatchConfig::labeled()),
            },
        ]
    }

    #[test]
    fn jsonl_round_trip() {
        let tables = scored();
        let text = render_jsonl(&tables);
        assert_eq!(parse_jsonl(&text).unwrap(), tables);
        assert!(text.contains(r#""fn":"#));
        assert!(parse_jsonl(r#"{"kind":"source","table":"x","score":{}}"#).is_err());
    }

    #[test]
    fn per_cwe_top_k() {
        let csv = render_per_cwe_csv(&scored(), 2);
        let lines: Vec<&str> = csv.lines().collect();
        // Two sources times two CWEs; 78 (2 labels) then 22 (tie with 89, lower number).
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "CWE-78,0.0000,Semgrep");
        assert_eq!(lines[2], "CWE-22,0.0000,Semgrep");
        assert_eq!(lines[3], "CWE-78,0.6667,Bandit");
    }

    #[test]
    fn regenerate_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let tables = scored();
        emit_tables(&tables, dir.path(), &Format::ALL).unwrap();
        emit_per_cwe_chart_data(&tables, dir.path(), 6).unwrap();
        let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
        let before = [read(TABLES_CSV), read(TABLES_MD), read(PER_CWE_CSV)];
        for n in [TABLES_CSV, TABLES_MD, PER_CWE_CSV] {
            std::fs::remove_file(dir.path().join(n)).unwrap();
        }
        regenerate(dir.path(), 6).unwrap();
        assert_eq!(before, [read(TABLES_CSV), read(TABLES_MD), read(PER_CWE_CSV)]);
    }
}
