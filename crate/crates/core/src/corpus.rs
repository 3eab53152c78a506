//! Vulnerable-file corpus and its line-level ground truth.
//!
//! A corpus is described by a manifest, one record per line:
//!
//! ```text
//! # comment
//! F <relative-path> <origin>         # origin: SecurityEval | PyT | Other
//! L <relative-path> <CWE-id> <line>  # 1-based line
//! D <CWE-id> <count>                 # optional declared distribution
//! ```
//!
//! Paths are relative to the manifest's directory and may not contain
//! whitespace or `#`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cwe::CweId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    SecurityEval,
    PyT,
    Other,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::SecurityEval => "SecurityEval",
            Origin::PyT => "PyT",
            Origin::Other => "Other",
        })
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "securityeval" => Ok(Origin::SecurityEval),
            "pyt" => Ok(Origin::PyT),
            "other" => Ok(Origin::Other),
            _ => Err(format!("unknown origin {s:?}")),
        }
    }
}

/// One source file, text and 1-based lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFile {
    pub id: String,
    pub source_text: String,
    pub lines: Vec<String>,
    pub origin: Origin,
}

impl CorpusFile {
    pub fn new(id: impl Into<String>, source_text: impl Into<String>, origin: Origin) -> Self {
        let source_text = source_text.into();
        let lines = split_lines(&source_text);
        Self {
            id: id.into(),
            source_text,
            lines,
            origin,
        }
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// The text of 1-based line `n`.
    pub fn line(&self, n: u32) -> Option<&str> {
        let idx = usize::try_from(n).ok()?.checked_sub(1)?;
        self.lines.get(idx).map(String::as_str)
    }
}

/// Splits on `\n` after dropping one trailing newline. Carriage returns stay
/// in the line text so that joining with `\n` gives the source back.
fn split_lines(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub file_id: String,
    pub cwe: CweId,
    pub line: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub files: Vec<(String, Origin)>,
    pub labels: Vec<GroundTruthLabel>,
    pub declared_distribution: Option<BTreeMap<CweId, u64>>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("listed file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("{file_id} is not valid UTF-8")]
    NonUtf8 { file_id: String },
    #[error("file {0} listed twice")]
    DuplicateFileId(String),
    #[error("label references {0}, which is not listed as a file")]
    UnknownFile(String),
    #[error("label {file_id}:{line} ({cwe}) is outside the file's {line_count} lines")]
    LabelOutOfRange {
        file_id: String,
        cwe: CweId,
        line: u32,
        line_count: usize,
    },
    #[error("path {0:?} must be relative and stay inside the corpus directory")]
    BadPath(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: message.into(),
    }
}

fn check_relative(path: &str) -> Result<(), CorpusError> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(CorpusError::BadPath(path.to_string()))
    }
}

impl CorpusManifest {
    /// Parses manifest text. Does not touch the filesystem.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut manifest = CorpusManifest::default();
        let mut declared: BTreeMap<CweId, u64> = BTreeMap::new();
        let mut saw_declared = false;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            let fields: Vec<&str> = content.split_whitespace().collect();
            let Some((&kind, rest)) = fields.split_first() else {
                continue;
            };
            match (kind, rest) {
                ("F", [path, origin]) => {
                    check_relative(path)?;
                    let origin = origin.parse().map_err(|m: String| parse_err(lineno, m))?;
                    manifest.files.push((path.to_string(), origin));
                }
                ("L", [path, cwe, line]) => {
                    let cwe: CweId = cwe
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad CWE {cwe:?}")))?;
                    let line: u32 = line
                        .parse()
                        .ok()
                        .filter(|n| *n >= 1)
                        .ok_or_else(|| parse_err(lineno, format!("bad line number {line:?}")))?;
                    manifest.labels.push(GroundTruthLabel {
                        file_id: path.to_string(),
                        cwe,
                        line,
                    });
                }
                ("D", [cwe, count]) => {
                    let cwe: CweId = cwe
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad CWE {cwe:?}")))?;
                    let count: u64 = count
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad count {count:?}")))?;
                    if declared.insert(cwe, count).is_some() {
                        return Err(parse_err(lineno, format!("{cwe} declared twice")));
                    }
                    saw_declared = true;
                }
                ("F" | "L" | "D", _) => {
                    return Err(parse_err(lineno, format!("wrong field count for {kind} record")))
                }
                _ => return Err(parse_err(lineno, format!("unknown record kind {kind:?}"))),
            }
        }
        if saw_declared {
            manifest.declared_distribution = Some(declared);
        }

        let mut seen = HashSet::new();
        for (path, _) in &manifest.files {
            if !seen.insert(path.as_str()) {
                return Err(CorpusError::DuplicateFileId(path.clone()));
            }
        }
        if let Some(label) = manifest
            .labels
            .iter()
            .find(|l| !seen.contains(l.file_id.as_str()))
        {
            return Err(CorpusError::UnknownFile(label.file_id.clone()));
        }
        Ok(manifest)
    }

    /// Renders back to manifest text; parsing the result gives `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (path, origin) in &self.files {
            let _ = writeln!(out, "F {path} {origin}");
        }
        for l in &self.labels {
            let _ = writeln!(out, "L {} {} {}", l.file_id, l.cwe, l.line);
        }
        if let Some(declared) = &self.declared_distribution {
            for (cwe, count) in declared {
                let _ = writeln!(out, "D {cwe} {count}");
            }
        }
        out
    }
}

/// A loaded corpus. Immutable after [`load_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub root: PathBuf,
    pub files: Vec<CorpusFile>,
    pub labels: Vec<GroundTruthLabel>,
    pub declared_distribution: Option<BTreeMap<CweId, u64>>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from in-memory parts, applying the same checks as
    /// [`load_corpus`].
    pub fn from_parts(
        root: PathBuf,
        files: Vec<CorpusFile>,
        labels: Vec<GroundTruthLabel>,
        declared_distribution: Option<BTreeMap<CweId, u64>>,
    ) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(files.len());
        for (i, f) in files.iter().enumerate() {
            if index.insert(f.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateFileId(f.id.clone()));
            }
        }
        for label in &labels {
            let file = index
                .get(&label.file_id)
                .map(|&i| &files[i])
                .ok_or_else(|| CorpusError::UnknownFile(label.file_id.clone()))?;
            if label.line as usize > file.line_count() {
                return Err(CorpusError::LabelOutOfRange {
                    file_id: label.file_id.clone(),
                    cwe: label.cwe,
                    line: label.line,
                    line_count: file.line_count(),
                });
            }
        }
        Ok(Self {
            root,
            files,
            labels,
            declared_distribution,
            index,
        })
    }

    pub fn file(&self, id: &str) -> Option<&CorpusFile> {
        self.index.get(id).map(|&i| &self.files[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn labels_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a GroundTruthLabel> + 'a {
        self.labels.iter().filter(move |l| l.file_id == id)
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            files: self.files.iter().map(|f| (f.id.clone(), f.origin)).collect(),
            labels: self.labels.clone(),
            declared_distribution: self.declared_distribution.clone(),
        }
    }

    /// Ground-truth label count per CWE.
    pub fn truth_frequency(&self) -> BTreeMap<CweId, u64> {
        count_by_cwe(&self.labels)
    }

    pub fn origin_counts(&self) -> BTreeMap<Origin, usize> {
        let mut out = BTreeMap::new();
        for f in &self.files {
            *out.entry(f.origin).or_default() += 1;
        }
        out
    }
}

/// Loads the manifest and every file it lists, validating labels against
/// file lengths.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest = CorpusManifest::parse(&text)?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut files = Vec::with_capacity(manifest.files.len());
    for (id, origin) in &manifest.files {
        let path = root.join(id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CorpusError::MissingFile(path)),
            Err(source) => return Err(CorpusError::Io { path, source }),
        };
        let text = String::from_utf8(bytes).map_err(|_| CorpusError::NonUtf8 { file_id: id.clone() })?;
        files.push(CorpusFile::new(id.clone(), text, *origin));
    }
    Corpus::from_parts(root, files, manifest.labels, manifest.declared_distribution)
}

pub fn count_by_cwe(labels: &[GroundTruthLabel]) -> BTreeMap<CweId, u64> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.cwe).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionMismatch {
    pub cwe: CweId,
    pub declared: u64,
    pub observed: u64,
}

/// One record per declared CWE whose observed label count differs.
/// CWEs that are observed but not declared are not checked.
pub fn validate_distribution(
    labels: &[GroundTruthLabel],
    declared: &BTreeMap<CweId, u64>,
) -> Vec<DistributionMismatch> {
    let observed = count_by_cwe(labels);
    declared
        .iter()
        .filter_map(|(&cwe, &declared)| {
            let observed = observed.get(&cwe).copied().unwrap_or(0);
            (observed != declared).then_some(DistributionMismatch {
                cwe,
                declared,
                observed,
            })
        })
        .collect()
}
