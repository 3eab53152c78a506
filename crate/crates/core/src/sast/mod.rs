//! SAST report ingestion and normalization.
//!
//! Every adapter turns a tool's machine-readable report into [`Finding`]s
//! carrying the path the tool reported. [`normalize_to_corpus`] then maps
//! those paths onto corpus file ids and drops anything outside the corpus.

mod bandit;
mod runner;
mod sarif;
mod semgrep;
mod sonarqube;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::cwe::CweId;
use crate::protocol::ExperimentId;
use crate::scoring::CasePolicy;

pub use bandit::{ingest_bandit, parse_bandit_report};
pub use runner::{
    archive_report, read_archived_report, run_bandit, run_semgrep, ArchivedReport, ToolConfig, ToolRun,
    ToolRunRecord,
};
pub use sarif::{ingest_sarif, parse_sarif};
pub use semgrep::{ingest_semgrep, parse_semgrep_report};
pub use sonarqube::{ingest_sonarqube, parse_sonarqube_export};

/// Where a finding came from.
///
/// Variant order is the row order used in report tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Semgrep,
    Bandit,
    SonarQube,
    /// A generic SARIF producer, named by the SARIF driver.
    Sarif(String),
    Llm {
        experiment: ExperimentId,
        case: Option<CasePolicy>,
    },
}

impl Source {
    pub fn is_tool(&self) -> bool {
        !matches!(self, Source::Llm { .. })
    }

    /// Row label for human-readable tables.
    pub fn display_name(&self) -> String {
        match self {
            Source::Semgrep => "Semgrep".into(),
            Source::Bandit => "Bandit".into(),
            Source::SonarQube => "SonarQube".into(),
            Source::Sarif(name) => format!("SARIF {name}"),
            Source::Llm { experiment, case } => match case {
                Some(c) => format!("LLM {experiment} {}", c.display_name()),
                None => format!("LLM {experiment}"),
            },
        }
    }
}

/// Machine key: `semgrep`, `bandit`, `sonarqube`, `sarif:<name>`,
/// `llm:exp1`, `llm:exp3:case1`.
impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Semgrep => f.write_str("semgrep"),
            Source::Bandit => f.write_str("bandit"),
            Source::SonarQube => f.write_str("sonarqube"),
            Source::Sarif(name) => write!(f, "sarif:{name}"),
            Source::Llm {
                experiment,
                case: None,
            } => write!(f, "llm:{}", experiment.key()),
            Source::Llm {
                experiment,
                case: Some(c),
            } => write!(f, "llm:{}:{}", experiment.key(), c.key()),
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semgrep" => return Ok(Source::Semgrep),
            "bandit" => return Ok(Source::Bandit),
            "sonarqube" => return Ok(Source::SonarQube),
            _ => {}
        }
        if let Some(name) = s.strip_prefix("sarif:") {
            return Ok(Source::Sarif(name.to_string()));
        }
        if let Some(rest) = s.strip_prefix("llm:") {
            let mut parts = rest.splitn(2, ':');
            let experiment = parts.next().unwrap_or("").parse()?;
            let case = parts.next().map(str::parse).transpose()?;
            return Ok(Source::Llm { experiment, case });
        }
        Err(format!("unknown source {s:?}"))
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// A normalized detection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub source: Source,
    pub file_id: String,
    pub cwe: Option<CweId>,
    /// 1-based; `None` when the source gave no usable line.
    pub line: Option<u32>,
    pub raw_label: String,
    pub severity: Option<String>,
}

impl Finding {
    /// Builds a finding, enforcing a non-empty label and dropping line 0.
    pub fn new(
        source: Source,
        file_id: impl Into<String>,
        cwe: Option<CweId>,
        line: Option<u32>,
        raw_label: impl Into<String>,
    ) -> Self {
        let raw_label = raw_label.into();
        Self {
            source,
            file_id: file_id.into(),
            cwe,
            line: line.filter(|&l| l >= 1),
            raw_label: if raw_label.trim().is_empty() {
                "unlabeled".into()
            } else {
                raw_label
            },
            severity: None,
        }
    }

    pub fn with_severity(mut self, severity: Option<String>) -> Self {
        self.severity = severity.filter(|s| !s.is_empty());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    Bandit,
    Semgrep,
    SonarQube,
    Sarif,
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolKind::Bandit => "bandit",
            ToolKind::Semgrep => "semgrep",
            ToolKind::SonarQube => "sonarqube",
            ToolKind::Sarif => "sarif",
        })
    }
}

#[derive(Debug, Error)]
pub enum SastError {
    #[error("{tool}: executable {executable:?} not found")]
    ToolNotFound { tool: ToolKind, executable: String },
    #[error("{tool} exited with status {status} without a report: {stderr}")]
    ToolCrashed {
        tool: ToolKind,
        status: i32,
        stderr: String,
    },
    #[error("{tool} report could not be parsed: {message}")]
    ReportParseError { tool: ToolKind, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rule table line {line}: {message}")]
    RuleTable { line: usize, message: String },
}

pub(crate) fn parse_error(tool: ToolKind, message: impl fmt::Display) -> SastError {
    SastError::ReportParseError {
        tool,
        message: message.to_string(),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, SastError> {
    std::fs::read(path).map_err(|source| SastError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Tool rule id → CWE fallback, used only when a report omits CWE data.
#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    entries: HashMap<String, CweId>,
}

impl RuleTable {
    /// `<rule-id>\t<cwe>[\t<comment>]` lines; `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self, SastError> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(rule), Some(cwe)) = (fields.next(), fields.next()) else {
                return Err(SastError::RuleTable {
                    line: idx + 1,
                    message: "expected <rule-id><TAB><cwe>".into(),
                });
            };
            let cwe: CweId = cwe.trim().parse().map_err(|_| SastError::RuleTable {
                line: idx + 1,
                message: format!("bad CWE {cwe:?}"),
            })?;
            entries.insert(rule.trim().to_string(), cwe);
        }
        Ok(Self { entries })
    }

    pub fn bandit() -> Self {
        Self::parse(include_str!("../../data/bandit_rules.tsv")).expect("shipped bandit table")
    }

    pub fn semgrep() -> Self {
        Self::parse(include_str!("../../data/semgrep_rules.tsv")).expect("shipped semgrep table")
    }

    pub fn sonarqube() -> Self {
        Self::parse(include_str!("../../data/sonarqube_rules.tsv")).expect("shipped sonarqube table")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact match first, then the longest key that `rule` ends with after
    /// a `.` (semgrep prefixes rule ids with the config path).
    pub fn lookup(&self, rule: &str) -> Option<CweId> {
        if let Some(id) = self.entries.get(rule) {
            return Some(*id);
        }
        self.entries
            .iter()
            .filter(|(key, _)| {
                rule.len() > key.len()
                    && rule.ends_with(key.as_str())
                    && rule.as_bytes()[rule.len() - key.len() - 1] == b'.'
            })
            .max_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(_, id)| *id)
    }
}

/// Maps tool-reported paths onto corpus file ids.
pub struct PathResolver<'a> {
    corpus: &'a Corpus,
    root_prefixes: Vec<String>,
}

impl<'a> PathResolver<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        let mut root_prefixes = Vec::new();
        let root = corpus.root.to_string_lossy().replace('\\', "/");
        if !root.is_empty() {
            root_prefixes.push(root.trim_end_matches('/').to_string() + "/");
        }
        if let Ok(canon) = corpus.root.canonicalize() {
            let canon = canon.to_string_lossy().replace('\\', "/");
            root_prefixes.push(canon.trim_end_matches('/').to_string() + "/");
        }
        Self {
            corpus,
            root_prefixes,
        }
    }

    pub fn resolve(&self, reported: &str) -> Option<String> {
        let mut path = reported.replace('\\', "/");
        if let Some(rest) = path.strip_prefix("file://") {
            path = rest.to_string();
        }
        for prefix in &self.root_prefixes {
            if let Some(rest) = path.strip_prefix(prefix.as_str()) {
                path = rest.to_string();
                break;
            }
        }
        while let Some(rest) = path.strip_prefix("./") {
            path = rest.to_string();
        }
        let path = path.replace("/./", "/");
        if self.corpus.contains(&path) {
            return Some(path);
        }
        let mut matches = self
            .corpus
            .files
            .iter()
            .filter(|f| path.ends_with(&format!("/{}", f.id)));
        match (matches.next(), matches.next()) {
            (Some(only), None) => Some(only.id.clone()),
            _ => None,
        }
    }
}

/// Rewrites finding paths to corpus ids. Findings whose file is not in the
/// corpus are dropped with a warning; the drop count is returned.
pub fn normalize_to_corpus(findings: Vec<Finding>, corpus: &Corpus) -> (Vec<Finding>, usize) {
    let resolver = PathResolver::new(corpus);
    let mut dropped = 0;
    let kept = findings
        .into_iter()
        .filter_map(|mut f| match resolver.resolve(&f.file_id) {
            Some(id) => {
                f.file_id = id;
                Some(f)
            }
            None => {
                tracing::warn!(source = %f.source, file = %f.file_id, "dropping finding outside the corpus");
                dropped += 1;
                None
            }
        })
        .collect();
    (kept, dropped)
}

/// Union of CWE ids per file, ascending. Findings without a CWE are skipped.
pub fn labels_per_file(findings: &[Finding]) -> BTreeMap<String, Vec<CweId>> {
    let mut sets: BTreeMap<String, BTreeSet<CweId>> = BTreeMap::new();
    for f in findings {
        if let Some(cwe) = f.cwe {
            sets.entry(f.file_id.clone()).or_default().insert(cwe);
        }
    }
    sets.into_iter()
        .map(|(file, set)| (file, set.into_iter().collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusFile, Origin};

    fn cwe(n: u32) -> CweId {
        CweId::new(n).unwrap()
    }

    fn finding(source: Source, file: &str, c: Option<u32>) -> Finding {
        Finding::new(source, file, c.map(cwe), Some(1), "x")
    }

    #[test]
    fn labels_set_semantics() {
        let f = vec![
            finding(Source::Bandit, "f", Some(78)),
            finding(Source::Bandit, "f", Some(78)),
            finding(Source::Semgrep, "f", Some(89)),
        ];
        assert_eq!(
            labels_per_file(&f),
            BTreeMap::from([("f".to_string(), vec![cwe(78), cwe(89)])])
        );
        assert!(labels_per_file(&[]).is_empty());
    }

    #[test]
    fn labels_skip_missing_cwe() {
        let f = vec![finding(Source::SonarQube, "g", None)];
        assert!(labels_per_file(&f).is_empty());
    }

    #[test]
    fn source_keys_round_trip() {
        let all = [
            Source::Semgrep,
            Source::Bandit,
            Source::SonarQube,
            Source::Sarif("CodeQL".into()),
            Source::Llm {
                experiment: ExperimentId::Exp1,
                case: None,
            },
            Source::Llm {
                experiment: ExperimentId::Exp3,
                case: Some(CasePolicy::Case2),
            },
        ];
        for s in all {
            assert_eq!(s.to_string().parse::<Source>().unwrap(), s);
        }
        assert_eq!(
            Source::Llm {
                experiment: ExperimentId::Exp3,
                case: Some(CasePolicy::Case1)
            }
            .to_string(),
            "llm:exp3:case1"
        );
        assert!("llm:exp9".parse::<Source>().is_err());
    }

    #[test]
    fn finding_invariants() {
        let f = Finding::new(Source::Bandit, "a", None, Some(0), "  ");
        assert_eq!(f.line, None);
        assert!(!f.raw_label.trim().is_empty());
    }

    #[test]
    fn rule_table_suffix_lookup() {
        let t = RuleTable::parse("a.b.rule\t78\nrule\t79\n").unwrap();
        assert_eq!(t.lookup("a.b.rule"), Some(cwe(78)));
        assert_eq!(t.lookup("home.cfg.a.b.rule"), Some(cwe(78)));
        assert_eq!(t.lookup("x.rule"), Some(cwe(79)));
        assert_eq!(t.lookup("xrule"), None);
        assert!(RuleTable::parse("lonely\n").is_err());
    }

    #[test]
    fn shipped_tables_load() {
        assert_eq!(RuleTable::bandit().lookup("B602"), Some(cwe(78)));
        assert_eq!(RuleTable::bandit().lookup("B105"), Some(cwe(259)));
        assert_eq!(RuleTable::sonarqube().lookup("python:S2077"), Some(cwe(89)));
        assert!(!RuleTable::semgrep().is_empty());
    }

    #[test]
    fn resolver_handles_prefixes() {
        let corpus = Corpus::from_parts(
            "/data/corpus".into(),
            vec![
                CorpusFile::new("pyt/a.py", "x\n", Origin::PyT),
                CorpusFile::new("b.py", "x\n", Origin::PyT),
            ],
            vec![],
            None,
        )
        .unwrap();
        let r = PathResolver::new(&corpus);
        assert_eq!(r.resolve("./pyt/a.py").as_deref(), Some("pyt/a.py"));
        assert_eq!(r.resolve("/data/corpus/pyt/a.py").as_deref(), Some("pyt/a.py"));
        assert_eq!(r.resolve("file:///data/corpus/b.py").as_deref(), Some("b.py"));
        assert_eq!(r.resolve("checkout/pyt/a.py").as_deref(), Some("pyt/a.py"));
        assert_eq!(r.resolve("vendor/lib.py"), None);

        let (kept, dropped) = normalize_to_corpus(
            vec![
                finding(Source::Bandit, "./b.py", Some(1)),
                finding(Source::Bandit, "venv/site.py", Some(1)),
            ],
            &corpus,
        );
        assert_eq!(dropped, 1);
        assert_eq!(kept[0].file_id, "b.py");
    }
}
