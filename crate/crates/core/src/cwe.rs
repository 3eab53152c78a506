//! CWE identifiers and the name → id alias table.
//!
//! Model answers label vulnerabilities either with an explicit `CWE-<n>`
//! token or with a bare weakness name ("OS Command Injection"). Both are
//! normalized to [`CweId`] here. Only exact-id equality is ever compared;
//! there is no hierarchy reasoning (CWE-80 is not CWE-79).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const DEFAULT_ALIASES: &str = include_str!("../data/cwe_aliases.tsv");

/// A CWE weakness id. Always ≥ 1, rendered as `CWE-<n>` without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CweId(u32);

impl CweId {
    pub fn new(number: u32) -> Option<Self> {
        (number >= 1).then_some(Self(number))
    }

    pub fn number(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CWE-{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("not a CWE identifier: {0:?}")]
pub struct ParseCweError(pub String);

impl FromStr for CweId {
    type Err = ParseCweError;

    /// Strict parse: the whole string must be one CWE token (`CWE-78`,
    /// `cwe_078`) or a bare positive number.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(n) = t.parse::<u32>() {
            return CweId::new(n).ok_or_else(|| ParseCweError(s.to_string()));
        }
        match cwe_tokens(t).as_slice() {
            [(id, span)] if span.0 == 0 && span.1 == t.len() => Ok(*id),
            _ => Err(ParseCweError(s.to_string())),
        }
    }
}

impl Serialize for CweId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CweId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:^|[^a-z0-9])(cwe[\s_:#\-]*(\d+))").unwrap())
}

/// Every CWE token in `text`, in order, with its byte span. Tokens naming
/// CWE-0 are skipped.
fn cwe_tokens(text: &str) -> Vec<(CweId, (usize, usize))> {
    token_regex()
        .captures_iter(text)
        .filter_map(|caps| {
            let whole = caps.get(1)?;
            let digits = caps.get(2)?.as_str().trim_start_matches('0');
            let id = digits.parse::<u32>().ok().and_then(CweId::new)?;
            Some((id, (whole.start(), whole.end())))
        })
        .collect()
}

/// All CWE ids mentioned in `text`, in order of appearance.
pub fn parse_all_cwes(text: &str) -> Vec<CweId> {
    cwe_tokens(text).into_iter().map(|(id, _)| id).collect()
}

/// Extracts the first `CWE<sep><digits>` token from free text.
///
/// Case-insensitive; zero padding and `-`, `_`, `:`, `#` or whitespace
/// separators are accepted. When more than one token is present the first
/// one wins and a warning is logged.
pub fn parse_cwe(text: &str) -> Option<CweId> {
    let tokens = cwe_tokens(text);
    let (first, _) = *tokens.first()?;
    if tokens.iter().any(|(id, _)| *id != first) {
        tracing::warn!(label = text, chosen = %first, "label names several CWEs, using the first");
    }
    Some(first)
}

#[derive(Debug, Error)]
pub enum AliasError {
    #[error("alias file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("alias data line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("alias data line {line}: {name:?} already maps to {existing}, refusing {new}")]
    Conflict {
        line: usize,
        name: String,
        existing: CweId,
        new: CweId,
    },
}

/// Case-folded, punctuation-free, single-spaced form used as alias key.
pub fn normalize_name(text: &str) -> String {
    let folded: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps weakness names to CWE ids. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: HashMap<String, CweId>,
}

impl AliasTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped table of official CWE names and their short forms.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_ALIASES).expect("shipped alias table is well-formed")
    }

    pub fn load(path: &Path) -> Result<Self, AliasError> {
        let text = std::fs::read_to_string(path).map_err(|source| AliasError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `<name>\t<cwe>` lines; `#` lines and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, AliasError> {
        let mut table = Self::empty();
        table.extend_from_str(text)?;
        Ok(table)
    }

    /// Adds entries from alias data on top of the existing ones.
    pub fn extend_from_str(&mut self, text: &str) -> Result<(), AliasError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let (name, number) = trimmed.rsplit_once('\t').ok_or(AliasError::Malformed {
                line,
                message: "expected <name><TAB><cwe-number>".into(),
            })?;
            let id: CweId = number.parse().map_err(|_| AliasError::Malformed {
                line,
                message: format!("bad CWE number {number:?}"),
            })?;
            self.insert_at(line, name, id)?;
        }
        Ok(())
    }

    pub fn insert(&mut self, name: &str, id: CweId) -> Result<(), AliasError> {
        self.insert_at(0, name, id)
    }

    fn insert_at(&mut self, line: usize, name: &str, id: CweId) -> Result<(), AliasError> {
        let key = normalize_name(name);
        if key.is_empty() {
            return Err(AliasError::Malformed {
                line,
                message: "empty alias name".into(),
            });
        }
        match self.entries.get(&key) {
            Some(existing) if *existing != id => Err(AliasError::Conflict {
                line,
                name: name.to_string(),
                existing: *existing,
                new: id,
            }),
            _ => {
                self.entries.insert(key, id);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact lookup of the normalized name.
    pub fn lookup(&self, name: &str) -> Option<CweId> {
        let key = normalize_name(name);
        if key.is_empty() {
            return None;
        }
        self.entries.get(&key).copied()
    }
}

/// Text with every parenthesised group removed, plus the contents of each
/// group, for names like "Cross-Site Scripting (XSS)".
fn parenthetical_variants(text: &str) -> Vec<String> {
    let mut outside = String::new();
    let mut groups = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in text.chars() {
        match c {
            '(' => {
                if depth == 0 {
                    current.clear();
                } else {
                    current.push(c);
                }
                depth += 1;
            }
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    groups.push(std::mem::take(&mut current));
                } else {
                    current.push(c);
                }
            }
            _ if depth > 0 => current.push(c),
            _ => outside.push(c),
        }
    }
    let mut out = vec![outside];
    out.extend(groups);
    out
}

/// Explicit CWE tokens win; otherwise the name is looked up in `table`,
/// first as a whole and then with parenthesised parts split off.
pub fn resolve_alias(text: &str, table: &AliasTable) -> Option<CweId> {
    if let Some(id) = parse_cwe(text) {
        return Some(id);
    }
    if let Some(id) = table.lookup(text) {
        return Some(id);
    }
    parenthetical_variants(text)
        .iter()
        .find_map(|variant| table.lookup(variant))
}
