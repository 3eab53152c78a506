use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{parse_error, read_file, Finding, RuleTable, SastError, Source, ToolKind};
use crate::cwe::{parse_cwe, CweId};

#[derive(Debug, Deserialize)]
struct SemgrepReport {
    results: Vec<SemgrepResult>,
    #[serde(default)]
    errors: Vec<Value>,
}

#[derive(Debug, Deserialize)]
struct SemgrepResult {
    check_id: String,
    path: String,
    start: Option<Position>,
    #[serde(default)]
    extra: Extra,
}

#[derive(Debug, Deserialize)]
struct Position {
    line: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
struct Extra {
    severity: Option<String>,
    #[serde(default)]
    metadata: Value,
}

/// `metadata.cwe` is either a string or a list of strings; the first entry
/// with a CWE token wins.
fn metadata_cwe(metadata: &Value) -> Option<CweId> {
    match metadata.get("cwe")? {
        Value::String(s) => parse_cwe(s),
        Value::Array(items) => items.iter().filter_map(Value::as_str).find_map(parse_cwe),
        _ => None,
    }
}

/// Parses `semgrep --json` output.
pub fn parse_semgrep_report(bytes: &[u8], rules: &RuleTable) -> Result<Vec<Finding>, SastError> {
    let report: SemgrepReport =
        serde_json::from_slice(bytes).map_err(|e| parse_error(ToolKind::Semgrep, e))?;
    for err in &report.errors {
        tracing::warn!(error = %err, "semgrep reported an error");
    }
    Ok(report
        .results
        .into_iter()
        .map(|r| {
            let cwe = metadata_cwe(&r.extra.metadata).or_else(|| rules.lookup(&r.check_id));
            Finding::new(
                Source::Semgrep,
                r.path,
                cwe,
                r.start.and_then(|s| s.line),
                r.check_id,
            )
            .with_severity(r.extra.severity)
        })
        .collect())
}

pub fn ingest_semgrep(report_path: &Path) -> Result<Vec<Finding>, SastError> {
    parse_semgrep_report(&read_file(report_path)?, &RuleTable::semgrep())
}
