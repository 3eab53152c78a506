use std::path::Path;

use serde::Deserialize;

use super::{parse_error, read_file, Finding, RuleTable, SastError, Source, ToolKind};
use crate::cwe::CweId;

#[derive(Debug, Deserialize)]
struct BanditReport {
    #[serde(default)]
    results: Vec<BanditIssue>,
    #[serde(default)]
    errors: Vec<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct BanditIssue {
    filename: String,
    line_number: Option<u32>,
    test_id: String,
    #[serde(default)]
    test_name: String,
    #[serde(default)]
    issue_severity: Option<String>,
    #[serde(default)]
    issue_cwe: Option<BanditCwe>,
}

#[derive(Debug, Deserialize)]
struct BanditCwe {
    id: Option<u32>,
}

/// Parses `bandit -f json` output. CWE comes from `issue_cwe` when it is set
/// (bandit writes 0 for "none"), else from `rules`.
pub fn parse_bandit_report(bytes: &[u8], rules: &RuleTable) -> Result<Vec<Finding>, SastError> {
    let report: BanditReport = serde_json::from_slice(bytes).map_err(|e| parse_error(ToolKind::Bandit, e))?;
    for err in &report.errors {
        tracing::warn!(error = %err, "bandit reported an error");
    }
    Ok(report
        .results
        .into_iter()
        .map(|issue| {
            let cwe = issue
                .issue_cwe
                .and_then(|c| c.id)
                .and_then(CweId::new)
                .or_else(|| rules.lookup(&issue.test_id));
            let label = if issue.test_name.is_empty() {
                issue.test_id
            } else {
                format!("{}:{}", issue.test_id, issue.test_name)
            };
            Finding::new(Source::Bandit, issue.filename, cwe, issue.line_number, label)
                .with_severity(issue.issue_severity)
        })
        .collect())
}

pub fn ingest_bandit(report_path: &Path) -> Result<Vec<Finding>, SastError> {
    parse_bandit_report(&read_file(report_path)?, &RuleTable::bandit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cwe(n: u32) -> CweId {
        CweId::new(n).unwrap()
    }

    #[test]
    fn explicit_cwe_then_fallback() {
        let json = br#"{"results": [
            {"filename": "./a.py", "line_number": 6, "test_id": "B602",
             "test_name": "subprocess_popen_with_shell_equals_true",
             "issue_severity": "HIGH", "issue_cwe": {"id": 78, "link": ""}},
            {"filename": "./a.py", "line_number": 3, "test_id": "B105", "issue_cwe": {"id": 0}},
            {"filename": "./a.py", "line_number": 4, "test_id": "B999"}
        ], "errors": []}"#;
        let f = parse_bandit_report(json, &RuleTable::bandit()).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!((f[0].cwe, f[0].line), (Some(cwe(78)), Some(6)));
        assert_eq!(f[0].raw_label, "B602:subprocess_popen_with_shell_equals_true");
        assert_eq!(f[0].severity.as_deref(), Some("HIGH"));
        assert_eq!(f[1].cwe, Some(cwe(259)));
        assert_eq!(f[2].cwe, None);
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(
            parse_bandit_report(b"{not json", &RuleTable::bandit()),
            Err(SastError::ReportParseError {
                tool: ToolKind::Bandit,
                ..
            })
        ));
    }

    #[test]
    fn empty_results() {
        let f = parse_bandit_report(br#"{"results": [], "errors": []}"#, &RuleTable::bandit());
        assert!(f.unwrap().is_empty());
    }
}
