use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::llm::{Mode, RateLimit, RetryPolicy};
use crate::protocol::ExperimentId;
use crate::scoring::{CasePolicy, MatchConfig};

fn rebase(base: &Path, path: &Path) -> PathBuf {
    if path.is_relative() {
        base.join(path)
    } else {
        path.to_path_buf()
    }
}

/// A SAST source: run the tool, or ingest a report produced elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ToolSpec {
    Bandit { report: Option<PathBuf> },
    Semgrep { report: Option<PathBuf> },
    SonarQube { export: PathBuf },
    Sarif { path: PathBuf },
}

impl ToolSpec {
    /// Directory name under `raw/`.
    pub fn archive_name(&self) -> String {
        match self {
            Self::Bandit { .. } => "bandit".into(),
            Self::Semgrep { .. } => "semgrep".into(),
            Self::SonarQube { .. } => "sonarqube".into(),
            Self::Sarif { path } => {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let clean: String = stem
                    .chars()
                    .map(|c| {
                        if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                            c
                        } else {
                            '_'
                        }
                    })
                    .collect();
                format!("sarif-{clean}")
            }
        }
    }

    fn rebase(&mut self, base: &Path) {
        let path = match self {
            Self::Bandit { report: Some(p) } | Self::Semgrep { report: Some(p) } => p,
            Self::SonarQube { export: p } | Self::Sarif { path: p } => p,
            _ => return,
        };
        *path = rebase(base, path);
    }

    /// Whether this spec invokes an executable rather than reading a file.
    pub fn runs_tool(&self) -> bool {
        matches!(
            self,
            Self::Bandit { report: None } | Self::Semgrep { report: None }
        )
    }
}

/// `bandit`, `bandit:<report>`, `semgrep`, `semgrep:<report>`,
/// `sonarqube:<export>`, `sarif:<path>`.
impl fmt::Display for ToolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bandit { report: None } => f.write_str("bandit"),
            Self::Bandit { report: Some(p) } => write!(f, "bandit:{}", p.display()),
            Self::Semgrep { report: None } => f.write_str("semgrep"),
            Self::Semgrep { report: Some(p) } => write!(f, "semgrep:{}", p.display()),
            Self::SonarQube { export } => write!(f, "sonarqube:{}", export.display()),
            Self::Sarif { path } => write!(f, "sarif:{}", path.display()),
        }
    }
}

impl FromStr for ToolSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.trim())),
            None => (s, None),
        };
        let path = arg.filter(|a| !a.is_empty()).map(PathBuf::from);
        match (name.trim().to_ascii_lowercase().as_str(), path) {
            ("bandit", report) => Ok(Self::Bandit { report }),
            ("semgrep", report) => Ok(Self::Semgrep { report }),
            ("sonarqube", Some(export)) => Ok(Self::SonarQube { export }),
            ("sarif", Some(path)) => Ok(Self::Sarif { path }),
            ("sonarqube" | "sarif", None) => Err(format!(
                "{name} needs a report path ({name}:<path>); it is ingest-only"
            )),
            _ => Err(format!("unknown tool {s:?}")),
        }
    }
}

impl Serialize for ToolSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ToolSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
    pub mode: Mode,
    /// Replay store directory.
    pub store: PathBuf,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub min_interval_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Read from the config file only; never written back out.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            mode: Mode::ReplayOnly,
            store: PathBuf::from("replay-store"),
            max_attempts: 3,
            initial_backoff_ms: 500,
            min_interval_ms: 0,
            max_in_flight: 4,
            timeout_secs: 60,
            api_key: None,
        }
    }
}

impl LlmSettings {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            initial_backoff: std::time::Duration::from_millis(self.initial_backoff_ms),
        }
    }

    pub fn rate_limit(&self) -> RateLimit {
        RateLimit {
            min_interval: std::time::Duration::from_millis(self.min_interval_ms),
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolSettings {
    pub bandit_executable: String,
    pub semgrep_executable: String,
    pub semgrep_config: String,
}

impl Default for ToolSettings {
    fn default() -> Self {
        Self {
            bandit_executable: "bandit".into(),
            semgrep_executable: "semgrep".into(),
            semgrep_config: "p/python".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Parent of the per-run directories.
    pub out: PathBuf,
    /// Defaults to a UTC timestamp plus the config hash.
    pub run_id: Option<String>,
    pub tools: Vec<ToolSpec>,
    pub experiments: Vec<ExperimentId>,
    /// Exp3 label policies to score.
    pub cases: Vec<CasePolicy>,
    pub line_tolerance: u32,
    /// Forces one match rule for every source. When unset, Exp1 and the
    /// tools are scored line-only and the labeled experiments and the tools
    /// are scored on CWE and line.
    pub require_cwe: Option<bool>,
    pub unresolved_line_is_fp: bool,
    pub seed: u64,
    pub top_k: usize,
    pub workers: usize,
    /// Replaces the built-in prompt templates.
    pub prompts_dir: Option<PathBuf>,
    /// Extra `name<TAB>number` aliases on top of the built-in table.
    pub aliases: Option<PathBuf>,
    pub llm: LlmSettings,
    pub tool_settings: ToolSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("corpus/manifest.txt"),
            out: PathBuf::from("runs"),
            run_id: None,
            tools: Vec::new(),
            experiments: Vec::new(),
            cases: CasePolicy::ALL.to_vec(),
            line_tolerance: 0,
            require_cwe: None,
            unresolved_line_is_fp: true,
            seed: 0,
            top_k: 6,
            workers: 4,
            prompts_dir: None,
            aliases: None,
            llm: LlmSettings::default(),
            tool_settings: ToolSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a TOML config. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    /// Prefixes every relative path with `base`.
    pub fn rebase(&mut self, base: &Path) {
        self.manifest = rebase(base, &self.manifest);
        self.out = rebase(base, &self.out);
        self.llm.store = rebase(base, &self.llm.store);
        for p in [&mut self.prompts_dir, &mut self.aliases].into_iter().flatten() {
            *p = rebase(base, p);
        }
        for t in &mut self.tools {
            t.rebase(base);
        }
    }

    pub fn match_config(&self, require_cwe: bool) -> MatchConfig {
        MatchConfig {
            line_tolerance: self.line_tolerance,
            require_cwe,
            unresolved_line_is_fp: self.unresolved_line_is_fp,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.tools.is_empty() && self.experiments.is_empty() {
            return bad("no sources enabled: give at least one tool or experiment");
        }
        if self.experiments.contains(&ExperimentId::Exp3) {
            if self.tools.is_empty() {
                return bad("experiment 3 builds its label lists from SAST findings and needs a tool");
            }
            if self.cases.is_empty() {
                return bad("experiment 3 needs at least one case policy");
            }
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !self.llm.temperature.is_finite() || self.llm.temperature < 0.0 {
            return bad("temperature must be a finite non-negative number");
        }
        let mut names: Vec<String> = self.tools.iter().map(ToolSpec::archive_name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("two tool sources would archive to the same raw/ directory");
        }
        if let Some(id) = &self.run_id {
            let ok = !id.is_empty()
                && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                && !id.starts_with('.');
            if !ok {
                return bad("run id may only contain letters, digits, '-', '_' and '.'");
            }
        }
        Ok(())
    }

    /// First 8 hex digits of the SHA-256 of the config without its run id.
    pub fn hash8(&self) -> String {
        let mut c = self.clone();
        c.run_id = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..8].to_string()
    }

    pub fn resolve_run_id(&self, now: chrono::DateTime<chrono::Utc>) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", now.format("%Y%m%dT%H%M%SZ"), self.hash8()))
    }
}
