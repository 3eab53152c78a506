//! SonarQube issue exports.
//!
//! An export is the saved body of `GET /api/issues/search`. Paged exports
//! are several such bodies concatenated in one file, or a JSON array of
//! them.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{parse_error, read_file, Finding, RuleTable, SastError, Source, ToolKind};
use crate::cwe::{parse_cwe, CweId};

#[derive(Debug, Deserialize)]
struct IssuePage {
    issues: Vec<Issue>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Issue {
    rule: String,
    component: String,
    line: Option<u32>,
    text_range: Option<TextRange>,
    severity: Option<String>,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    security_standards: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TextRange {
    start_line: Option<u32>,
}

/// `cwe:89` security standards, then `cwe-89` tags. A bare `cwe` tag
/// carries no number and is ignored.
fn issue_cwe(issue: &Issue) -> Option<CweId> {
    issue
        .security_standards
        .iter()
        .chain(issue.tags.iter())
        .find_map(|s| parse_cwe(s))
}

/// Strips the `<project-key>:` prefix from a component key.
fn component_path(component: &str) -> &str {
    component
        .split_once(':')
        .map(|(_, path)| path)
        .unwrap_or(component)
}

fn pages(bytes: &[u8]) -> Result<Vec<IssuePage>, SastError> {
    let mut out = Vec::new();
    for value in serde_json::Deserializer::from_slice(bytes).into_iter::<Value>() {
        let value = value.map_err(|e| parse_error(ToolKind::SonarQube, e))?;
        let items = match value {
            Value::Array(items) => items,
            other => vec![other],
        };
        for item in items {
            out.push(serde_json::from_value(item).map_err(|e| parse_error(ToolKind::SonarQube, e))?);
        }
    }
    if out.is_empty() {
        return Err(parse_error(ToolKind::SonarQube, "export contains no issue pages"));
    }
    Ok(out)
}

pub fn parse_sonarqube_export(bytes: &[u8], rules: &RuleTable) -> Result<Vec<Finding>, SastError> {
    Ok(pages(bytes)?
        .into_iter()
        .flat_map(|p| p.issues)
        .map(|issue| {
            let cwe = issue_cwe(&issue).or_else(|| rules.lookup(&issue.rule));
            let line = issue
                .line
                .or_else(|| issue.text_range.as_ref().and_then(|r| r.start_line));
            Finding::new(
                Source::SonarQube,
                component_path(&issue.component),
                cwe,
                line,
                issue.rule,
            )
            .with_severity(issue.severity)
        })
        .collect())
}

pub fn ingest_sonarqube(export_path: &Path) -> Result<Vec<Finding>, SastError> {
    parse_sonarqube_export(&read_file(export_path)?, &RuleTable::sonarqube())
}
