//! SARIF 2.1.0 adapter for any tool without a dedicated parser.

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use super::{parse_error, read_file, Finding, SastError, Source, ToolKind};
use crate::cwe::{parse_cwe, CweId};

fn str_items(v: Option<&Value>) -> impl Iterator<Item = &str> {
    v.and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
}

fn is_cwe_component(reference: &Value) -> bool {
    reference
        .get("toolComponent")
        .and_then(|c| c.get("name"))
        .and_then(Value::as_str)
        .is_some_and(|n| n.eq_ignore_ascii_case("cwe"))
}

/// `{"id": "22", "toolComponent": {"name": "CWE"}}` style references.
fn taxon_cwe(reference: &Value) -> Option<CweId> {
    if !is_cwe_component(reference) {
        return None;
    }
    let id = reference.get("id").and_then(Value::as_str)?;
    id.parse().ok().or_else(|| parse_cwe(id))
}

fn tags_cwe(holder: Option<&Value>) -> Option<CweId> {
    let props = holder?.get("properties")?;
    str_items(props.get("tags"))
        .find_map(parse_cwe)
        .or_else(|| match props.get("cwe")? {
            Value::String(s) => parse_cwe(s),
            v @ Value::Array(_) => str_items(Some(v)).find_map(parse_cwe),
            _ => None,
        })
}

fn rule_cwe(rule: Option<&Value>) -> Option<CweId> {
    let rule = rule?;
    tags_cwe(Some(rule)).or_else(|| {
        rule.get("relationships")?
            .as_array()?
            .iter()
            .filter_map(|rel| rel.get("target"))
            .find_map(taxon_cwe)
    })
}

fn strip_file_uri(uri: &str) -> String {
    uri.strip_prefix("file://").unwrap_or(uri).to_string()
}

/// Parses a SARIF log. Results without any location cannot be attributed to
/// a file and are skipped with a warning.
pub fn parse_sarif(bytes: &[u8]) -> Result<Vec<Finding>, SastError> {
    let log: Value = serde_json::from_slice(bytes).map_err(|e| parse_error(ToolKind::Sarif, e))?;
    let runs = log
        .get("runs")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_error(ToolKind::Sarif, "missing runs array"))?;

    let mut findings = Vec::new();
    for run in runs {
        let driver = run.get("tool").and_then(|t| t.get("driver"));
        let tool_name = driver
            .and_then(|d| d.get("name"))
            .and_then(Value::as_str)
            .unwrap_or("sarif")
            .to_string();
        let rules: Vec<&Value> = driver
            .and_then(|d| d.get("rules"))
            .and_then(Value::as_array)
            .map(|r| r.iter().collect())
            .unwrap_or_default();
        let by_id: HashMap<&str, &Value> = rules
            .iter()
            .filter_map(|r| Some((r.get("id")?.as_str()?, *r)))
            .collect();

        for result in run.get("results").and_then(Value::as_array).into_iter().flatten() {
            let rule_id = result
                .get("ruleId")
                .or_else(|| result.get("rule").and_then(|r| r.get("id")))
                .and_then(Value::as_str);
            let rule = rule_id.and_then(|id| by_id.get(id).copied()).or_else(|| {
                let idx = result
                    .get("ruleIndex")
                    .or_else(|| result.get("rule").and_then(|r| r.get("index")))
                    .and_then(Value::as_u64)?;
                rules.get(usize::try_from(idx).ok()?).copied()
            });

            let Some(physical) = result
                .get("locations")
                .and_then(Value::as_array)
                .and_then(|l| l.first())
                .and_then(|l| l.get("physicalLocation"))
            else {
                tracing::warn!(tool = %tool_name, rule = ?rule_id, "SARIF result without a location");
                continue;
            };
            let Some(uri) = physical
                .get("artifactLocation")
                .and_then(|a| a.get("uri"))
                .and_then(Value::as_str)
            else {
                tracing::warn!(tool = %tool_name, rule = ?rule_id, "SARIF result without an artifact uri");
                continue;
            };
            let line = physical
                .get("region")
                .and_then(|r| r.get("startLine"))
                .and_then(Value::as_u64)
                .and_then(|l| u32::try_from(l).ok());

            let cwe = result
                .get("taxa")
                .and_then(Value::as_array)
                .and_then(|taxa| taxa.iter().find_map(taxon_cwe))
                .or_else(|| tags_cwe(Some(result)))
                .or_else(|| rule_cwe(rule));

            let label = rule_id
                .or_else(|| rule.and_then(|r| r.get("id")).and_then(Value::as_str))
                .map(str::to_string)
                .or_else(|| {
                    result
                        .get("message")
                        .and_then(|m| m.get("text"))
                        .and_then(Value::as_str)
                        .map(str::to_string)
                })
                .unwrap_or_default();
            let level = result
                .get("level")
                .or_else(|| rule.and_then(|r| r.get("defaultConfiguration")?.get("level")))
                .and_then(Value::as_str)
                .map(str::to_string);

            findings.push(
                Finding::new(
                    Source::Sarif(tool_name.clone()),
                    strip_file_uri(uri),
                    cwe,
                    line,
                    label,
                )
                .with_severity(level),
            );
        }
    }
    Ok(findings)
}

pub fn ingest_sarif(sarif_path: &Path) -> Result<Vec<Finding>, SastError> {
    parse_sarif(&read_file(sarif_path)?)
}
