//! Subprocess invocation of the CLI tools and raw report archival.
//!
//! Runs never feed findings straight into scoring: the raw report is written
//! next to a `record.meta` sidecar and everything downstream reparses it.

use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    parse_bandit_report, parse_sarif, parse_semgrep_report, parse_sonarqube_export, read_file, Finding,
    RuleTable, SastError, ToolKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub executable: String,
    /// Semgrep `--config` value. Ignored for bandit.
    pub ruleset: Option<String>,
    pub extra_args: Vec<String>,
}

impl ToolConfig {
    pub fn bandit() -> Self {
        Self {
            executable: "bandit".into(),
            ruleset: None,
            extra_args: Vec::new(),
        }
    }

    /// Stock registry Python rules unless `ruleset` says otherwise.
    pub fn semgrep() -> Self {
        Self {
            executable: "semgrep".into(),
            ruleset: Some("p/python".into()),
            extra_args: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRunRecord {
    pub tool: ToolKind,
    pub invocation: String,
    pub exit_status: i32,
    /// SHA-256 of the raw report bytes, hex.
    pub raw_output_digest: String,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub tool_version: Option<String>,
}

impl ToolRunRecord {
    /// Record for a report produced elsewhere and ingested as-is.
    pub fn ingested(tool: ToolKind, source: &Path, raw: &[u8]) -> Self {
        let now = Utc::now();
        Self {
            tool,
            invocation: format!("ingest {}", source.display()),
            exit_status: 0,
            raw_output_digest: digest(raw),
            started: now,
            finished: now,
            tool_version: None,
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct ToolRun {
    pub findings: Vec<Finding>,
    pub record: ToolRunRecord,
    pub raw: Vec<u8>,
}

fn tool_version(executable: &str) -> Option<String> {
    let out = Command::new(executable).arg("--version").output().ok()?;
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

fn run_tool(
    tool: ToolKind,
    config: &ToolConfig,
    args: Vec<String>,
    corpus_dir: &Path,
    parse: impl Fn(&[u8]) -> Result<Vec<Finding>, SastError>,
) -> Result<ToolRun, SastError> {
    if !corpus_dir.is_dir() {
        return Err(SastError::Io {
            path: corpus_dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory missing"),
        });
    }
    let invocation = std::iter::once(config.executable.as_str())
        .chain(args.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(" ");
    let started = Utc::now();
    let output = Command::new(&config.executable)
        .args(&args)
        .current_dir(corpus_dir)
        .output()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => SastError::ToolNotFound {
                tool,
                executable: config.executable.clone(),
            },
            _ => SastError::Io {
                path: config.executable.clone(),
                source: e,
            },
        })?;
    let finished = Utc::now();
    let status = output.status.code().unwrap_or(-1);

    // Both tools exit nonzero when they find issues, so a parseable report
    // is what counts as success.
    let findings = match parse(&output.stdout) {
        Ok(f) => f,
        Err(e) if output.status.success() => return Err(e),
        Err(_) => {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().join(" | ");
            return Err(SastError::ToolCrashed {
                tool,
                status,
                stderr: tail,
            });
        }
    };
    Ok(ToolRun {
        findings,
        record: ToolRunRecord {
            tool,
            invocation,
            exit_status: status,
            raw_output_digest: digest(&output.stdout),
            started,
            finished,
            tool_version: tool_version(&config.executable),
        },
        raw: output.stdout,
    })
}

/// `bandit -r -f json -q .` inside `corpus_dir`.
pub fn run_bandit(corpus_dir: &Path, config: &ToolConfig) -> Result<ToolRun, SastError> {
    let mut args: Vec<String> = ["-r", "-f", "json", "-q"].map(String::from).to_vec();
    args.extend(config.extra_args.iter().cloned());
    args.push(".".into());
    let rules = RuleTable::bandit();
    run_tool(ToolKind::Bandit, config, args, corpus_dir, |b| {
        parse_bandit_report(b, &rules)
    })
}

/// `semgrep scan --json --config <ruleset> .` inside `corpus_dir`.
pub fn run_semgrep(corpus_dir: &Path, config: &ToolConfig) -> Result<ToolRun, SastError> {
    let mut args: Vec<String> = ["scan", "--json", "--metrics=off", "--disable-version-check"]
        .map(String::from)
        .to_vec();
    if let Some(ruleset) = &config.ruleset {
        args.push("--config".into());
        args.push(ruleset.clone());
    }
    args.extend(config.extra_args.iter().cloned());
    args.push(".".into());
    let rules = RuleTable::semgrep();
    run_tool(ToolKind::Semgrep, config, args, corpus_dir, |b| {
        parse_semgrep_report(b, &rules)
    })
}

fn report_name(tool: ToolKind) -> &'static str {
    match tool {
        ToolKind::Sarif => "report.sarif",
        _ => "report.json",
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SastError + '_ {
    move |source| SastError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `report.{json,sarif}` and `record.meta` under `dir`.
pub fn archive_report(dir: &Path, record: &ToolRunRecord, raw: &[u8]) -> Result<PathBuf, SastError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let report = dir.join(report_name(record.tool));
    std::fs::write(&report, raw).map_err(io_err(&report))?;
    let meta = dir.join("record.meta");
    let json = serde_json::to_vec_pretty(record).expect("record serializes");
    std::fs::write(&meta, json).map_err(io_err(&meta))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ArchivedReport {
    pub record: ToolRunRecord,
    pub findings: Vec<Finding>,
}

/// Reparses an archived report with the adapter named in its sidecar.
pub fn read_archived_report(dir: &Path) -> Result<ArchivedReport, SastError> {
    let meta_path = dir.join("record.meta");
    let meta = read_file(&meta_path)?;
    let record: ToolRunRecord = serde_json::from_slice(&meta).map_err(|e| SastError::ReportParseError {
        tool: ToolKind::Sarif,
        message: format!("{}: {e}", meta_path.display()),
    })?;
    let raw = read_file(&dir.join(report_name(record.tool)))?;
    let findings = match record.tool {
        ToolKind::Bandit => parse_bandit_report(&raw, &RuleTable::bandit())?,
        ToolKind::Semgrep => parse_semgrep_report(&raw, &RuleTable::semgrep())?,
        ToolKind::SonarQube => parse_sonarqube_export(&raw, &RuleTable::sonarqube())?,
        ToolKind::Sarif => parse_sarif(&raw)?,
    };
    Ok(ArchivedReport { record, findings })
}
