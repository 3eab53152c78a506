use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ExperimentId, ProtocolError};
use crate::corpus::CorpusFile;
use crate::cwe::{resolve_alias, AliasTable};
use crate::sast::{Finding, Source};

/// One element of a model answer, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawModelFinding {
    pub label_text: String,
    /// A line number or a code snippet.
    pub line_field: String,
}

const LABEL_KEYS: &[&str] = &["label"];
const LINE_KEYS: &[&str] = &["line of code", "line", "line_of_code"];

fn is_none_answer(text: &str) -> bool {
    let core = text.trim_matches(|c: char| c.is_whitespace() || "`*_\"'.".contains(c));
    let core = core.strip_prefix("json").unwrap_or(core).trim();
    core.eq_ignore_ascii_case("none")
}

/// End (exclusive) of the bracketed array starting at `start`, honouring
/// JSON string literals and escapes.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + i + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

fn field_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn pick(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    obj.iter()
        .find(|(k, _)| keys.contains(&k.trim().to_ascii_lowercase().as_str()))
        .map(|(_, v)| field_text(v))
}

fn to_raw(index: usize, v: &Value) -> Result<RawModelFinding, ProtocolError> {
    let obj = v.as_object().ok_or(ProtocolError::MalformedObject { index })?;
    let label = pick(obj, LABEL_KEYS);
    let line = pick(obj, LINE_KEYS);
    if label.is_none() && line.is_none() {
        return Err(ProtocolError::MalformedObject { index });
    }
    let raw = RawModelFinding {
        label_text: label.unwrap_or_default(),
        line_field: line.unwrap_or_default(),
    };
    if raw.label_text.is_empty() && raw.line_field.is_empty() {
        return Err(ProtocolError::MalformedObject { index });
    }
    Ok(raw)
}

/// Finds the first bracketed JSON array in `text` and maps its objects.
///
/// Prose around the array is ignored. A bare `None` answer yields no
/// findings.
pub fn extract_json_array(text: &str) -> Result<Vec<RawModelFinding>, ProtocolError> {
    if is_none_answer(text) {
        return Ok(Vec::new());
    }
    for (start, _) in text.match_indices('[') {
        let Some(end) = balanced_end(text, start) else {
            continue;
        };
        let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&text[start..end]) else {
            continue;
        };
        return items.iter().enumerate().map(|(i, v)| to_raw(i, v)).collect();
    }
    Err(ProtocolError::NoJsonFound)
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim_start();
    if let Some(rest) = t.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = t[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    t
}

fn quoted_span(line: &str, quote: char) -> Option<&str> {
    let first = line.find(quote)?;
    let last = line.rfind(quote)?;
    (last > first + quote.len_utf8()).then(|| &line[first + quote.len_utf8()..last])
}

/// Line-only answers: quoted snippets one per line, or failing that the
/// lines of a fenced code block.
pub fn extract_quoted_lines(text: &str) -> Vec<RawModelFinding> {
    let snippet = |s: &str| RawModelFinding {
        label_text: String::new(),
        line_field: s.trim().to_string(),
    };
    let mut out = Vec::new();
    let mut fenced = Vec::new();
    let mut in_fence = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            if !line.trim().is_empty() {
                fenced.push(snippet(line));
            }
            continue;
        }
        let item = strip_list_marker(line);
        if let Some(s) = quoted_span(item, '"').or_else(|| quoted_span(item, '`')) {
            if !s.trim().is_empty() {
                out.push(snippet(s));
            }
        } else if item.len() > 2 && item.starts_with('\'') && item.ends_with('\'') {
            out.push(snippet(&item[1..item.len() - 1]));
        }
    }
    if out.is_empty() {
        fenced
    } else {
        out
    }
}

/// JSON first; Exp1 answers that carry no JSON fall back to quoted lines.
pub fn parse_response(text: &str, experiment: ExperimentId) -> Result<Vec<RawModelFinding>, ProtocolError> {
    match extract_json_array(text) {
        Err(ProtocolError::NoJsonFound) if experiment == ExperimentId::Exp1 => {
            let lines = extract_quoted_lines(text);
            if lines.is_empty() {
                Err(ProtocolError::NoJsonFound)
            } else {
                Ok(lines)
            }
        }
        other => other,
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A 1-based line in `file` for a numeric or snippet line field.
///
/// Digits are taken as a line number and nothing else. Snippets match the
/// first line whose whitespace-normalized text contains the snippet's first
/// non-blank line, also normalized.
pub fn resolve_line(raw: &RawModelFinding, file: &CorpusFile) -> Option<u32> {
    let field = raw.line_field.trim();
    if !field.is_empty() && field.bytes().all(|b| b.is_ascii_digit()) {
        let n: u32 = field.parse().ok()?;
        return (n >= 1 && (n as usize) <= file.line_count()).then_some(n);
    }
    if field.eq_ignore_ascii_case("unknown") {
        return None;
    }
    let needle = normalize_ws(field.lines().find(|l| !l.trim().is_empty())?);
    if needle.is_empty() {
        return None;
    }
    file.lines
        .iter()
        .position(|l| normalize_ws(l).contains(&needle))
        .and_then(|i| u32::try_from(i + 1).ok())
}

/// Normalizes raw answers into findings for `file`. Findings sharing both
/// CWE and line are collapsed, first one wins.
pub fn to_findings(
    raws: &[RawModelFinding],
    file: &CorpusFile,
    experiment: ExperimentId,
    aliases: &AliasTable,
) -> Vec<Finding> {
    let mut out: Vec<Finding> = Vec::with_capacity(raws.len());
    for raw in raws {
        let cwe = resolve_alias(&raw.label_text, aliases);
        let line = resolve_line(raw, file);
        if out.iter().any(|f| f.cwe == cwe && f.line == line) {
            continue;
        }
        let source = Source::Llm {
            experiment,
            case: None,
        };
        out.push(Finding::new(
            source,
            file.id.clone(),
            cwe,
            line,
            raw.label_text.clone(),
        ));
    }
    out
}
